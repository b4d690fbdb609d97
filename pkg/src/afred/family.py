"""The adiabatic family interface, derivative access and tangent maps."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, OutOfDelta, OutOfDomain, StepUnderflow, UnsupportedLevel
from .spaces import NormFamily, ParameterBox, TangentVector


@dataclass
class ModulusTable:
    """Monotone step envelope ``arg -> bound`` with ``value(0) = 0``.

    Lookup returns the value at the smallest tabulated argument that is
    ``>= x``, so the table dominates every sample that produced it.  Arguments
    beyond the last entry are not covered and return ``inf``.
    """

    args: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.args, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if a.shape != v.shape or a.ndim != 1:
            raise DimensionError("args and values must be 1-d of equal length")
        if a.size == 0 or a[0] != 0.0:
            a = np.concatenate([[0.0], a])
            v = np.concatenate([[0.0], v])
        v[0] = 0.0
        if np.any(np.diff(a) < 0):
            raise ValueError("arguments must be sorted")
        self.args = a
        self.values = np.maximum.accumulate(np.maximum(v, 0.0))

    def __call__(self, x):
        if x <= 0:
            return 0.0
        i = int(np.searchsorted(self.args, x, side="left"))
        if i >= self.args.size:
            return float("inf")
        return float(self.values[i])

    def largest_arg_below(self, threshold):
        ok = np.nonzero(self.values <= threshold)[0]
        return float(self.args[ok[-1]]) if ok.size else 0.0

    @classmethod
    def from_function(cls, fn, args):
        args = np.asarray(args, dtype=float)
        return cls(args, np.array([fn(a) for a in args]))

    @classmethod
    def from_samples(cls, sample_args, sample_values, edges):
        """Binned upper envelope: value at edge ``e`` is the max over samples with arg <= e."""
        sa = np.asarray(sample_args, dtype=float)
        sv = np.asarray(sample_values, dtype=float)
        edges = np.asarray(edges, dtype=float)
        vals = np.array([sv[sa <= e * (1 + 1e-12)].max(initial=0.0) for e in edges])
        return cls(edges, vals)

    @classmethod
    def zero(cls, top):
        return cls(np.array([0.0, float(top)]), np.zeros(2))

    def to_dict(self):
        return {"args": self.args.tolist(), "values": self.values.tolist()}


def q_constants(C0, C1, C_cok):
    """Return ``(CQ_prelim, CQ)`` from the three Fredholm constants."""
    s = C1 + C0 + C0 * C1 + C0 * C_cok
    return 2.0 * s, max(1.0, 4.0 * s)


@dataclass
class FamilyConstants:
    """Constants and moduli of an adiabatic family.

    ``modulus_c`` is indexed by ``|gamma_0|_eps``, ``modulus_cDelta`` and
    ``near_solution`` by the box scale ``s`` of ``[lows, lows + s (highs - lows)]``
    and ``modulus_c1F`` by ``|gamma - gamma'|_eps``.
    """

    C0: float
    C1: float
    C_cok: float
    modulus_c: ModulusTable
    modulus_cDelta: ModulusTable
    modulus_c1F: ModulusTable
    C1F: float
    near_solution: ModulusTable | None = None
    provenance: str = "declared"
    CQ_prelim: float = field(default=0.0)
    CQ: float = field(default=0.0)
    exceedances: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("C0", "C1", "C_cok", "C1F"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        self.CQ_prelim, self.CQ = q_constants(self.C0, self.C1, self.C_cok)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("C0", "C1", "C_cok", "CQ_prelim", "CQ", "C1F", "provenance")}
        for k in ("modulus_c", "modulus_cDelta", "modulus_c1F", "near_solution"):
            t = getattr(self, k)
            out[k] = t.to_dict() if t is not None else None
        out["exceedances"] = list(self.exceedances)
        return out


class AdiabaticFamily:
    """A parametrized map family ``F_eps: V_Gamma -> Omega`` with weighted norms.

    Parameters
    ----------
    eval_fn : callable ``(eps, gamma) -> omega``
    diff_fn : optional callable ``(eps, gamma, k, args) -> omega`` giving
        ``D^k F_eps(gamma)(args)`` for ``k <= max_analytic_order``.
    jac_fn : optional callable ``(eps, gamma) -> matrix`` for ``k = 1``.
    cokernel_basis : optional ``n_target x dim C`` matrix of declared cokernel
        representatives (any complement of the range of ``DF_0(0)``).
    """

    def __init__(self, name, n_domain, n_target, delta, rho, gamma_norms, omega_norms, eval_fn,
                 diff_fn=None, jac_fn=None, max_analytic_order=None, declared_constants=None,
                 index=None, cokernel_basis=None, linear=False, params=None, notes=()):
        if rho <= 0:
            raise ValueError("domain radius must be positive")
        if gamma_norms.dim != n_domain or omega_norms.dim != n_target:
            raise DimensionError("norm families do not match the family dimensions")
        self.name = name
        self.n_domain = int(n_domain)
        self.n_target = int(n_target)
        self.delta = delta if isinstance(delta, ParameterBox) else ParameterBox(*delta)
        self.rho = float(rho)
        self.gamma_norms: NormFamily = gamma_norms
        self.omega_norms: NormFamily = omega_norms
        self.eval_fn = eval_fn
        self.diff_fn = diff_fn
        self.jac_fn = jac_fn
        if max_analytic_order is None:
            max_analytic_order = 64 if diff_fn is not None else (1 if jac_fn is not None else 0)
        self.max_analytic_order = int(max_analytic_order)
        self.declared_constants = declared_constants
        self.index = index
        self.cokernel_basis = None if cokernel_basis is None else np.asarray(cokernel_basis, dtype=float)
        self.linear = bool(linear)
        self.params = dict(params or {})
        self.notes = list(notes)

    @property
    def zero(self):
        return self.delta.distinguished_zero

    def describe(self):
        return {
            "name": self.name,
            "n_domain": self.n_domain,
            "n_target": self.n_target,
            "delta": self.delta.to_dict(),
            "rho": self.rho,
            "gamma_lower_bound_constant": self.gamma_norms.lower_bound_constant,
            "omega_lower_bound_constant": self.omega_norms.lower_bound_constant,
            "declared_index": self.index,
            "params": self.params,
        }

    def __repr__(self):
        return f"AdiabaticFamily({self.name!r}, n_domain={self.n_domain}, n_target={self.n_target})"


def _check(fam, eps, gamma, check_delta=True):
    eps = np.atleast_1d(np.asarray(eps, dtype=float)) if np.size(eps) else fam.delta.distinguished_zero
    if check_delta and not fam.delta.contains(eps):
        raise OutOfDelta(f"parameter {eps.tolist()} outside {fam.delta.to_dict()}")
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (fam.n_domain,):
        raise DimensionError(f"gamma has shape {gamma.shape}, expected ({fam.n_domain},)")
    if fam.gamma_norms.norm0(gamma) >= fam.rho:
        raise OutOfDomain(f"|gamma|_0 = {fam.gamma_norms.norm0(gamma):.6g} >= rho = {fam.rho}")
    return eps, gamma


def evaluate(fam, eps, gamma, check_delta=True):
    """Return ``F_eps(gamma)``."""
    eps, gamma = _check(fam, eps, gamma, check_delta)
    return np.asarray(fam.eval_fn(eps, gamma), dtype=float).reshape(fam.n_target)


def _fd_step(fam, gamma):
    return 1e-4 * max(1.0, fam.gamma_norms.norm0(gamma))


def _fd(fam, eps, gamma, k, args, inner):
    """Central difference in the last argument of ``inner(gamma, args[:-1])``."""
    v = np.asarray(args[-1], dtype=float)
    nv = fam.gamma_norms.norm0(v)
    if nv == 0:
        return np.zeros(fam.n_target)
    u = v / nv
    h = _fd_step(fam, gamma)
    plus, minus = gamma + h * u, gamma - h * u
    if max(fam.gamma_norms.norm0(plus), fam.gamma_norms.norm0(minus)) >= fam.rho:
        raise StepUnderflow("finite-difference stencil leaves the domain ball")
    return nv * (inner(plus, args[:-1]) - inner(minus, args[:-1])) / (2 * h)


def differential(fam, eps, gamma, k, args, check_delta=True):
    """Return ``D^k F_eps(gamma)(args[0], ..., args[k-1])``.

    Analytic derivatives are used up to ``fam.max_analytic_order``; above that,
    central differences (step ``1e-4 max(1, |gamma|_0)``) are iterated on the
    highest analytic order.
    """
    if k < 1:
        raise ValueError("order must be >= 1")
    if len(args) != k:
        raise DimensionError(f"order {k} needs {k} arguments")
    eps, gamma = _check(fam, eps, gamma, check_delta)
    args = [np.asarray(a, dtype=float) for a in args]
    if k <= fam.max_analytic_order:
        if k == 1 and fam.jac_fn is not None and fam.diff_fn is None:
            return np.asarray(fam.jac_fn(eps, gamma), dtype=float) @ args[0]
        return np.asarray(fam.diff_fn(eps, gamma, k, args), dtype=float).reshape(fam.n_target)

    def inner(g, a):
        if len(a) == 0:
            return np.asarray(fam.eval_fn(eps, g), dtype=float).reshape(fam.n_target)
        return differential(fam, eps, g, len(a), a, check_delta=False)

    return _fd(fam, eps, gamma, k, args, inner)


def fd_differential(fam, eps, gamma, k, args):
    """Pure central-difference ``D^k F`` built from :func:`evaluate` only."""
    eps, gamma = _check(fam, eps, gamma)
    args = [np.asarray(a, dtype=float) for a in args]

    def inner(g, a):
        if len(a) == 0:
            return np.asarray(fam.eval_fn(eps, g), dtype=float).reshape(fam.n_target)
        return _fd(fam, eps, g, len(a), a, inner)

    return _fd(fam, eps, gamma, k, args, inner)


def jacobian(fam, eps, gamma, check_delta=True):
    """Matrix of ``DF_eps(gamma)``."""
    eps, gamma = _check(fam, eps, gamma, check_delta)
    if fam.jac_fn is not None:
        return np.asarray(fam.jac_fn(eps, gamma), dtype=float).reshape(fam.n_target, fam.n_domain)
    eye = np.eye(fam.n_domain)
    cols = [differential(fam, eps, gamma, 1, [eye[:, i]], check_delta=False) for i in range(fam.n_domain)]
    return np.column_stack(cols) if cols else np.zeros((fam.n_target, 0))


def tangent_map(fam, eps, level, tv):
    """Return ``T^l F_eps(tv)`` for ``l <= 2``.

    ``T F(v0, v1) = (F(v0), DF(v0) v1)`` and
    ``T^2 F(v0, v1, v2, v3) = (F, DF v1, DF v2, D^2F(v1, v2) + DF v3)``.
    """
    if level > 2:
        raise UnsupportedLevel(f"tangent level {level} > 2")
    if tv.level != level:
        raise ValueError("tangent vector level does not match")
    v = tv.flat()
    f0 = evaluate(fam, eps, v[0])
    if level == 0:
        return TangentVector(0, f0, [])

    def d1(x):
        return differential(fam, eps, v[0], 1, [x])

    if level == 1:
        return TangentVector(1, f0, [d1(v[1])])
    last = differential(fam, eps, v[0], 2, [v[1], v[2]]) + d1(v[3])
    return TangentVector(2, f0, [d1(v[1]), d1(v[2]), last])


def tangent_derivative_blocks(fam, eps, level, tv):
    """Block matrix of ``D(T^l F)(tv)`` acting on ``T^l Gamma`` (``2^l x 2^l`` blocks)."""
    if level > 2:
        raise UnsupportedLevel(f"tangent level {level} > 2")
    v = tv.flat()
    n = fam.n_domain
    eye = np.eye(n)
    J = jacobian(fam, eps, v[0])

    def d2(a):
        cols = [differential(fam, eps, v[0], 2, [a, eye[:, i]]) for i in range(n)]
        return np.column_stack(cols)

    def d3(a, b):
        cols = [differential(fam, eps, v[0], 3, [a, b, eye[:, i]]) for i in range(n)]
        return np.column_stack(cols)

    Z = np.zeros_like(J)
    if level == 0:
        return np.block([[J]])
    if level == 1:
        return np.block([[J, Z], [d2(v[1]), J]])
    row3 = [d3(v[1], v[2]) + d2(v[3]), d2(v[2]), d2(v[1]), J]
    return np.block([
        [J, Z, Z, Z],
        [d2(v[1]), J, Z, Z],
        [d2(v[2]), Z, J, Z],
        row3,
    ])


def compose(f, g, eps_f=None, eps_g=None, name=None):
    """The map ``f_{eps_f} o g_{eps_g}`` as a family over a trivial box.

    Derivatives up to order 2 follow the chain rule exactly; higher orders fall
    back to finite differences.
    """
    if f.n_domain != g.n_target:
        raise DimensionError("maps are not composable")
    ef = f.zero if eps_f is None else np.atleast_1d(eps_f)
    eg = g.zero if eps_g is None else np.atleast_1d(eps_g)

    def ev(eps, x):
        return evaluate(f, ef, evaluate(g, eg, x))

    def diff(eps, x, k, args):
        y = evaluate(g, eg, x)
        if k == 1:
            return differential(f, ef, y, 1, [differential(g, eg, x, 1, [args[0]])])
        a = differential(g, eg, x, 1, [args[0]])
        b = differential(g, eg, x, 1, [args[1]])
        return (differential(f, ef, y, 2, [a, b])
                + differential(f, ef, y, 1, [differential(g, eg, x, 2, [args[0], args[1]])]))

    box = ParameterBox((0.0,), (0.0,))
    gn = NormFamily.constant(g.gamma_norms.weight_at_zero, box.lows)
    on = NormFamily.constant(f.omega_norms.weight_at_zero, box.lows)
    return AdiabaticFamily(name or f"{f.name}.{g.name}", g.n_domain, f.n_target, box, g.rho, gn, on,
                           ev, diff_fn=diff, max_analytic_order=2)
