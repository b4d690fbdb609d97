"""Built-in families and the discretized shrinking-strip model."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .family import AdiabaticFamily, FamilyConstants, ModulusTable
from .spaces import NormFamily, ParameterBox, WeightMatrix

MAX_STRIP_DIM = 4096


def radius_args(top, n=32, ratio=1e-6):
    """Tabulation arguments ``0`` and ``n`` log-spaced points in ``[ratio*top, top]``."""
    return np.concatenate([[0.0], np.geomspace(ratio * top, top, n)])


def scale_args(n=32, ratio=1e-6):
    return radius_args(1.0, n, ratio)


def declared(C0, C1, C_cok, c, c_delta, c1f, C1F, near, top):
    """Declared constants with moduli given as closed-form callables."""
    return FamilyConstants(
        C0=C0, C1=C1, C_cok=C_cok,
        modulus_c=ModulusTable.from_function(c, radius_args(top)),
        modulus_cDelta=ModulusTable.from_function(c_delta, scale_args()),
        modulus_c1F=ModulusTable.from_function(c1f, radius_args(2 * top)),
        C1F=C1F,
        near_solution=ModulusTable.from_function(near, scale_args()),
        provenance="declared",
    )


def _trivial_box():
    return ParameterBox((0.0,), (0.0,))


def _euclid(n, box, C=1.0):
    return NormFamily.constant(WeightMatrix.identity(n), box.lows, C)


def make_classical_parabola():
    """``F(x, y) = y - x^2``: a submersion with one-dimensional kernel."""
    box = _trivial_box()

    def ev(eps, g):
        return np.array([g[1] - g[0] ** 2])

    def jac(eps, g):
        return np.array([[-2.0 * g[0], 1.0]])

    def diff(eps, g, k, a):
        if k == 1:
            return jac(eps, g) @ a[0]
        if k == 2:
            return np.array([-2.0 * a[0][0] * a[1][0]])
        return np.zeros(1)

    consts = declared(1.0, 1.0, 0.0, lambda r: 2 * r, lambda s: 0.0, lambda r: 2 * r, 1.0,
                      lambda s: 0.0, 1.0)
    return AdiabaticFamily("classical-parabola", 2, 1, box, 1.0, _euclid(2, box), _euclid(1, box), ev,
                           diff_fn=diff, jac_fn=jac, declared_constants=consts, index=-1)


def make_squared_map():
    """Complex squaring ``(x, y) -> (x^2 - y^2, 2xy)``; ``DF(0) = 0``."""
    box = _trivial_box()

    def ev(eps, g):
        x, y = g
        return np.array([x * x - y * y, 2 * x * y])

    def jac(eps, g):
        x, y = g
        return np.array([[2 * x, -2 * y], [2 * y, 2 * x]])

    def diff(eps, g, k, a):
        if k == 1:
            return jac(eps, g) @ a[0]
        if k == 2:
            u, v = a
            return np.array([2 * (u[0] * v[0] - u[1] * v[1]), 2 * (u[0] * v[1] + u[1] * v[0])])
        return np.zeros(2)

    consts = declared(1.0, 1.0, 1.0, lambda r: 2 * r, lambda s: 0.0, lambda r: 2 * r, 0.0,
                      lambda s: 0.0, 0.5)
    return AdiabaticFamily("squared-map", 2, 2, box, 0.5, _euclid(2, box), _euclid(2, box), ev,
                           diff_fn=diff, jac_fn=jac, declared_constants=consts, index=0)


def make_cubic():
    """Scalar ``f(x) = x^3`` on the trivial box."""
    box = _trivial_box()

    def diff(eps, g, k, a):
        x = g[0]
        p = np.prod([v[0] for v in a])
        return np.array([{1: 3 * x * x, 2: 6 * x, 3: 6.0}.get(k, 0.0) * p])

    return AdiabaticFamily("cubic", 1, 1, box, 2.0, _euclid(1, box), _euclid(1, box),
                           lambda eps, g: g ** 3, diff_fn=diff, index=0)


def make_linear_family(A, rho=1.0, name="linear"):
    """Constant linear family ``F(v) = A v`` with Euclidean norms."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    box = _trivial_box()
    nt, nd = A.shape

    def diff(eps, g, k, a):
        return A @ a[0] if k == 1 else np.zeros(nt)

    return AdiabaticFamily(name, nd, nt, box, rho, _euclid(nd, box), _euclid(nt, box),
                           lambda eps, g: A @ g, diff_fn=diff, jac_fn=lambda eps, g: A,
                           linear=True)


def make_identity_family(n=2):
    return make_linear_family(np.eye(n), name="identity")


def _shrink_weights(n):
    """``diag(1, 1/eps, ..., 1/eps)`` for ``eps > 0`` and the identity at ``eps = 0``."""

    def fn(eps):
        e = float(eps[0])
        if e <= 0:
            return WeightMatrix.identity(n)
        return WeightMatrix.diagonal([1.0] + [1.0 / e] * (n - 1))

    return fn


def make_toy_shrink(tau_max=0.01, broken=False):
    """Two-parameter toy family ``F = (x^2 + xy - tau, y - eps x)`` on ``[0,1] x [0, tau_max]``.

    The first components are slow (weight 1) and the second fast (weight
    ``1/eps``).  The cokernel of ``DF_0(0)`` lies in the slow component.  The
    broken variant appends a third, fast and identically zero target component,
    which enlarges the cokernel by a fast direction.
    """
    if not 0 < tau_max <= 0.05:
        raise ValueError("tau_max must lie in (0, 0.05]")
    box = ParameterBox((0.0, 0.0), (1.0, float(tau_max)))
    nt = 3 if broken else 2

    def ev(eps, g):
        e, tau = eps
        x, y = g
        out = [x * x + x * y - tau, y - e * x]
        return np.array(out + [0.0] * (nt - 2))

    def jac(eps, g):
        x, y = g
        rows = [[2 * x + y, x], [-eps[0], 1.0]] + [[0.0, 0.0]] * (nt - 2)
        return np.array(rows)

    def diff(eps, g, k, a):
        if k == 1:
            return jac(eps, g) @ a[0]
        out = np.zeros(nt)
        if k == 2:
            u, v = a
            out[0] = 2 * u[0] * v[0] + u[0] * v[1] + u[1] * v[0]
        return out

    gam = NormFamily(2, _shrink_weights(2), WeightMatrix.identity(2), box.lows)
    omg = NormFamily(nt, _shrink_weights(nt), WeightMatrix.identity(nt), box.lows)
    consts = declared(np.sqrt(2.0), 2.0, 1.0, lambda r: 3 * r, lambda s: s, lambda r: 3 * r,
                      np.sqrt(2.0), lambda s: s * tau_max, 0.3)
    name = "toy-shrink-broken" if broken else "toy-shrink"
    return AdiabaticFamily(name, 2, nt, box, 0.3, gam, omg, ev, diff_fn=diff, jac_fn=jac,
                           declared_constants=consts, index=1 if broken else 0,
                           params={"tau_max": float(tau_max)})


@dataclass(frozen=True)
class StripGrid:
    """Periodic-in-s, ``N_t``-interval-in-t grid for the strip model.

    ``Lambda0`` and ``Lambda1`` are ``d x m`` orthonormal bases of the boundary
    subspaces at ``t = 0`` and ``t = 1``.
    """

    N_s: int = 8
    N_t: int = 4
    d: int = 2
    J: tuple | None = None
    Lambda0: tuple | None = None
    Lambda1: tuple | None = None

    def __post_init__(self):
        if self.N_s < 4 or self.N_t < 2:
            raise ValueError("need N_s >= 4 and N_t >= 2")
        if self.d % 2:
            raise ValueError("fiber dimension must be even")
        J = self.J
        if J is None:
            J = sla.block_diag(*[np.array([[0.0, -1.0], [1.0, 0.0]])] * (self.d // 2))
        J = np.asarray(J, dtype=float)
        if not np.allclose(J.T @ J, np.eye(self.d)) or not np.allclose(J @ J, -np.eye(self.d)):
            raise ValueError("J must be orthogonal with J^2 = -Id")
        e1 = np.eye(self.d)[:, : self.d // 2]
        L0 = np.asarray(self.Lambda0 if self.Lambda0 is not None else e1, dtype=float).reshape(self.d, -1)
        L1 = np.asarray(self.Lambda1 if self.Lambda1 is not None else e1, dtype=float).reshape(self.d, -1)
        for L in (L0, L1):
            if not np.allclose(L.T @ L, np.eye(L.shape[1]), atol=1e-12):
                raise ValueError("boundary bases must be orthonormal")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "Lambda0", L0)
        object.__setattr__(self, "Lambda1", L1)

    @property
    def h_s(self):
        return 1.0 / self.N_s

    @property
    def h_t(self):
        return 1.0 / self.N_t

    @property
    def slice_dim(self):
        return self.N_s * self.d

    @property
    def n_domain(self):
        return (self.N_t + 1) * self.slice_dim

    def perp(self, L):
        q, _ = np.linalg.qr(np.hstack([L, np.eye(self.d)]))
        return q[:, L.shape[1]: self.d]

    def ops(self):
        return _strip_ops(self)


def _strip_ops(g):
    Ns, Nt, d = g.N_s, g.N_t, g.d
    ds1 = (np.roll(np.eye(Ns), 1, axis=1) - np.roll(np.eye(Ns), -1, axis=1)) / (2 * g.h_s)
    Ds = np.kron(ds1, np.eye(d))
    dt1 = (np.eye(Nt, Nt + 1, 1) - np.eye(Nt, Nt + 1)) / g.h_t
    av1 = 0.5 * (np.eye(Nt, Nt + 1, 1) + np.eye(Nt, Nt + 1))
    dtt1 = (np.eye(Nt - 1, Nt, 1) - np.eye(Nt - 1, Nt)) / g.h_t @ dt1
    I_slice = np.eye(g.slice_dim)
    sel0 = np.zeros((1, Nt + 1))
    sel0[0, 0] = 1
    selN = np.zeros((1, Nt + 1))
    selN[0, Nt] = 1
    return {
        "Ds": Ds,
        "Dt": np.kron(dt1, I_slice),
        "Avg": np.kron(av1, I_slice),
        "Dtt": np.kron(dtt1, I_slice),
        "DsDt": np.kron(dt1, Ds),
        "DsN": np.kron(np.eye(Nt + 1), Ds),
        "S0": np.kron(sel0, I_slice),
        "SN": np.kron(selN, I_slice),
        "JDs": np.kron(av1, np.kron(ds1, g.J)),
        "Dt_int": np.kron((np.eye(Nt - 1, Nt, 1) - np.eye(Nt - 1, Nt)) / g.h_t, I_slice),
        "Ds_int": np.kron(np.eye(Nt), Ds),
    }


def strip_aux_forward(grid, xi):
    """``xi -> (D_t xi, Lambda0^T xi|_{t=0})``; fields are ``(N_t+1, N_s, d)`` arrays."""
    xi = np.asarray(xi, dtype=float).reshape(grid.N_t + 1, grid.N_s, grid.d)
    eta = (xi[1:] - xi[:-1]) / grid.h_t
    lam = xi[0] @ grid.Lambda0
    return eta, lam


def _complement_projection(grid):
    """Projection onto ``Lambda0^perp`` along ``Lambda1``."""
    P0 = grid.perp(grid.Lambda0)
    B = np.hstack([grid.Lambda1, P0])
    coeffs = np.linalg.inv(B)
    m = grid.Lambda1.shape[1]
    return P0 @ coeffs[m:]


def strip_aux_inverse(grid, eta, lam):
    """Inverse of :func:`strip_aux_forward` onto fields with ``xi|_{t=1}`` in ``Lambda1``."""
    eta = np.asarray(eta, dtype=float).reshape(grid.N_t, grid.N_s, grid.d)
    lam = np.asarray(lam, dtype=float).reshape(grid.N_s, grid.Lambda0.shape[1])
    lift = lam @ grid.Lambda0.T
    cum = np.concatenate([np.zeros((1, grid.N_s, grid.d)), np.cumsum(eta, axis=0) * grid.h_t])
    Pc = _complement_projection(grid)
    shift = (lift + cum[-1]) @ Pc.T
    return lift[None] + cum - shift[None]


def strip_boundary_defect(grid, xi):
    """Component of ``xi|_{t=1}`` off ``Lambda1`` (zero on the auxiliary domain)."""
    xi = np.asarray(xi, dtype=float).reshape(grid.N_t + 1, grid.N_s, grid.d)
    return xi[-1] @ grid.perp(grid.Lambda1)


def _strip_factors(grid):
    o = grid.ops()
    hw = np.sqrt(grid.h_s * grid.h_t)
    n = grid.n_domain
    trace = np.sqrt(grid.h_s) * np.vstack([o["S0"], o["Ds"] @ o["S0"]])
    parts = {
        "trace": trace,
        "L2": hw * np.eye(n),
        "Ds": hw * o["DsN"],
        "Dt": hw * o["Dt"],
        "DsDt": hw * o["DsDt"],
        "Dtt": hw * o["Dtt"],
    }
    return o, parts


def make_discrete_strip(grid=None, **kwargs):
    """Linear strip family ``F_eps(xi) = (D_t xi - eps J D_s avg_t xi, b0(xi), b1(xi))``.

    ``b0`` and ``b1`` are the components of ``xi|_{t=0}`` off ``Lambda0`` and of
    ``xi|_{t=1}`` off ``Lambda1``.  Norms use L2-type discrete weights with the
    eps-scalings of the strip-shrinking problem.
    """
    grid = grid or StripGrid(**kwargs)
    n = grid.n_domain
    if n > MAX_STRIP_DIM:
        raise ValueError(f"strip dimension {n} exceeds desk scale ({MAX_STRIP_DIM})")
    o, parts = _strip_factors(grid)
    L0p, L1p = grid.perp(grid.Lambda0), grid.perp(grid.Lambda1)
    B0 = np.kron(np.eye(grid.N_s), L0p.T) @ o["S0"]
    B1 = np.kron(np.eye(grid.N_s), L1p.T) @ o["SN"]
    n_int = grid.N_t * grid.slice_dim
    nt = n_int + B0.shape[0] + B1.shape[0]
    box = ParameterBox((0.0,), (1.0,))
    base = np.vstack([o["Dt"], B0, B1])
    pert = np.vstack([o["JDs"], np.zeros((B0.shape[0] + B1.shape[0], n))])

    def mat(eps):
        return base - float(eps[0]) * pert

    def gamma_factor(e):
        p = parts
        return np.vstack([p["trace"], np.sqrt(e) * p["L2"], np.sqrt(e) * p["Ds"], p["Dt"] / np.sqrt(e),
                          p["DsDt"] / np.sqrt(e), p["Dtt"] / e ** 1.5])

    hw = np.sqrt(grid.h_s * grid.h_t)
    nb = nt - n_int
    int_parts = [hw * np.eye(n_int), hw * o["Ds_int"], hw * o["Dt_int"]]

    def omega_factor(e):
        a, b, c = int_parts
        top = np.vstack([a / np.sqrt(e), b / np.sqrt(e), c / e ** 1.5])
        return sla.block_diag(top, np.eye(nb))

    W_g0 = WeightMatrix.from_factor(np.vstack([parts["L2"], parts["Ds"], parts["Dt"], parts["Dtt"]]))
    W_o0 = WeightMatrix.from_factor(sla.block_diag(np.vstack(int_parts), np.eye(nb)))
    lower = WeightMatrix.from_factor(np.vstack([parts["trace"], parts["Dt"], parts["DsDt"], parts["Dtt"]]))
    u0 = W_g0.factor
    C_lb = max(1.0, float(np.linalg.norm(sla.solve_triangular(lower.factor, u0.T, trans="T").T, 2)))
    gam = NormFamily(n, lambda eps: WeightMatrix.from_factor(gamma_factor(float(eps[0]))), W_g0, box.lows,
                     lower_bound_constant=C_lb * (1 + 1e-9))
    omg = NormFamily(nt, lambda eps: WeightMatrix.from_factor(omega_factor(float(eps[0]))), W_o0, box.lows)
    cok = np.zeros((nt, B1.shape[0]))
    cok[n_int + B0.shape[0]:, :] = np.eye(B1.shape[0])

    def diff(eps, g, k, a):
        return mat(eps) @ a[0] if k == 1 else np.zeros(nt)

    fam = AdiabaticFamily(
        "discrete-strip", n, nt, box, 10.0, gam, omg, lambda eps, g: mat(eps) @ g,
        diff_fn=diff, jac_fn=lambda eps, g: mat(eps), index=nt - n, cokernel_basis=cok, linear=True,
        params={"N_s": grid.N_s, "N_t": grid.N_t, "d": grid.d},
        notes=["cokernel representatives are the t=1 boundary rows"],
    )
    fam.grid = grid
    return fam


FAMILIES = {
    "classical-parabola": lambda **kw: make_classical_parabola(),
    "squared-map": lambda **kw: make_squared_map(),
    "toy-shrink": lambda **kw: make_toy_shrink(**kw),
    "toy-shrink-broken": lambda **kw: make_toy_shrink(broken=True, **kw),
    "discrete-strip": lambda **kw: make_discrete_strip(StripGrid(**kw)),
}


def get_family(name, **params):
    """Build a registered family by name."""
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise KeyError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None
    return factory(**params)


def register_family(name, factory):
    """Register a user family factory under ``name``."""
    FAMILIES[name] = factory
