"""The contraction ``B_eps``, radius plans, fixed points and solution maps."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (Disagreement, EmptyPlan, LeftBall, MaxIter, NotContracting, OutOfDomain,
                     UnsupportedLevel)
from .family import differential, evaluate, jacobian
from .fredholm import inverse_at, kernel_cokernel
from .report import AuditReport
from .sampling import ball_points, box_points, halton, unit_directions
from .spaces import ParameterBox, ProductNorm, TangentVector, block_norm

SAFETY = 1.05


@dataclass
class RadiusPlan:
    """Radii ``delta_theta, delta_Q, delta_sigma``, the ``V_K`` radius ``r_K`` and the parameter box.

    ``rule`` is ``"formula"`` (radii read off the constants and moduli tables)
    or ``"sampled"`` (contraction and smallness hypotheses checked on samples).
    ``CQ`` is the inverse bound the plan relies on.
    """

    theta: float
    delta_theta: float
    delta_Q: float
    delta_sigma: float
    r_K: float
    box: ParameterBox
    CQ: float
    provenance: str = "estimated"
    rule: str = "sampled"
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if min(self.delta_theta, self.delta_Q, self.delta_sigma, self.r_K) <= 0:
            raise EmptyPlan(f"empty plan: {self.radii()}")
        if self.delta_sigma > min(self.delta_theta, self.delta_Q) * (1 + 1e-12):
            raise ValueError("delta_sigma exceeds min(delta_theta, delta_Q)")
        if self.r_K > (1 - self.theta) * self.delta_sigma / self.CQ * (1 + 1e-12):
            raise ValueError("r_K exceeds (1 - theta) delta_sigma / CQ")

    @property
    def delta_Q_box(self):
        return self.box

    def radii(self):
        return {"delta_theta": self.delta_theta, "delta_Q": self.delta_Q,
                "delta_sigma": self.delta_sigma, "r_K": self.r_K}

    def to_dict(self):
        out = {"theta": self.theta, **self.radii(), "box": self.box.to_dict(), "CQ": self.CQ,
               "provenance": self.provenance, "rule": self.rule, "notes": list(self.notes)}
        out["details"] = self.details
        return out


def _admissible_radius(fam):
    """Largest ``r`` whose ``|.|_eps`` ball sits inside the ``|.|_0`` domain ball."""
    return fam.rho / fam.gamma_norms.lower_bound_constant * (1 - 1e-9)


def select_radii(fam, constants=None, theta=0.5):
    """Formula plan from constants and moduli tables.

    ``delta_theta`` is the largest tabulated radius with ``c <= theta / C_Q``,
    ``delta_Q`` the largest with ``c <= 1 / (2 C_Q^prelim)`` and the box the
    largest scaled sub-box with ``c_Delta <= 1 / (2 (1 + C_1 + C_C) C_0)``.  The
    box is shrunk further until ``|F_eps(0)|_eps <= (1 - theta) delta_sigma / (2 C_Q)``
    and ``r_K = (1 - theta) delta_sigma / C_Q - sup |F_eps(0)|_eps``; when ``F_eps(0)``
    vanishes on the box this is ``(1 - theta) delta_sigma / C_Q``.
    """
    constants = constants or fam.declared_constants
    if constants is None:
        raise ValueError("select_radii needs declared or estimated constants")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    cq = constants.CQ
    d_theta = constants.modulus_c.largest_arg_below(theta / cq)
    d_q = constants.modulus_c.largest_arg_below(1.0 / (2.0 * constants.CQ_prelim))
    top = _admissible_radius(fam)
    notes = []
    if not np.any(constants.modulus_c.values):
        # c vanishes identically: no nonlinearity constraint on the radii
        d_theta = d_q = top
    elif constants.modulus_c.args[-1] < top and constants.modulus_c.values[-1] <= theta / cq:
        notes.append("moduli table ends before the admissible radius; radii capped at its last argument")
    d_theta, d_q = min(d_theta, top), min(d_q, top)
    thresh = 1.0 / (2.0 * (1.0 + constants.C1 + constants.C_cok) * max(constants.C0, 1e-300))
    s_q = constants.modulus_cDelta.largest_arg_below(thresh) if not fam.delta.is_trivial else 1.0
    d_sigma = min(d_theta, d_q, fam.rho)
    if min(d_theta, d_q, s_q, d_sigma) <= 0:
        raise EmptyPlan(f"zero radius: delta_theta={d_theta}, delta_Q={d_q}, box scale={s_q}")
    near = constants.near_solution
    target = (1 - theta) * d_sigma / (2 * cq)
    if near is None or fam.delta.is_trivial:
        s_sigma, eta = s_q, 0.0
        if near is None:
            notes.append("no near-solution table; |F_eps(0)| assumed 0 on the box")
    else:
        ok = [(a, v) for a, v in zip(near.args, near.values) if a <= s_q and v <= target]
        s_sigma, eta = ok[-1] if ok else (0.0, 0.0)
        if s_q >= near.args[-1] and near.values[-1] <= target:
            s_sigma, eta = s_q, near.values[-1]
    box = fam.delta.scaled(s_sigma)
    if s_sigma <= 0 and not fam.delta.is_trivial and eta > 0:
        raise EmptyPlan("near-solution condition leaves an empty box")
    r_k = (1 - theta) * d_sigma / cq - eta
    if r_k <= 1e-14:
        raise EmptyPlan(f"r_K = {r_k:.3g} underflows")
    return RadiusPlan(theta, d_theta, d_q, d_sigma, r_k, box, cq, constants.provenance, "formula", notes,
                      {"box_scale_Q": s_q, "box_scale_sigma": s_sigma, "near_solution_bound": eta})


def _eps_samples(box, n, levels=6, seed=0):
    pts = [np.array(box.lows), np.array(box.highs)]
    if not box.is_trivial:
        pts += list(box_points(n, box.lows, box.highs, seed))
        pts += box.dyadic_path(levels)[1:]
        lo, hi = np.array(box.lows), np.array(box.highs)
        for i in range(box.m):
            if hi[i] > lo[i]:
                c = hi.copy()
                c[i] = lo[i]
                pts.append(c)
    uniq = []
    for p in pts:
        if not any(np.array_equal(p, q) for q in uniq):
            uniq.append(p)
    return uniq


def contraction_operator(fam, eps, kc, Q0, gamma, J0=None):
    """``D_W B_eps(gamma)`` in conjugated coordinates: ``Q0 (0, DF_eps(0) - DF_eps(gamma))``."""
    return _LipschitzProbe(fam, eps, kc, Q0, J0)(gamma)


class _LipschitzProbe:
    """Fast evaluation of the conjugated ``D_W B_eps(gamma)`` at many ``gamma``."""

    def __init__(self, fam, eps, kc, Q0, J0=None):
        self.fam, self.eps, self.dC = fam, np.atleast_1d(np.asarray(eps, dtype=float)), kc.dim_C
        self.J0 = jacobian(fam, eps, np.zeros(fam.n_domain)) if J0 is None else J0
        self.Wg = fam.gamma_norms.weight_at(eps)
        uo = fam.omega_norms.weight_at(eps).factor
        ug_inv = sla.solve_triangular(self.Wg.factor, np.eye(fam.n_domain), lower=False)
        self.left = Q0.Q_tilde[:, kc.dim_K:] @ uo
        self.right = ug_inv
        self.sizes = Q0.domain.sizes

    def __call__(self, gamma):
        d = self.J0 - jacobian(self.fam, self.eps, gamma, check_delta=False)
        out = np.zeros((self.left.shape[0], self.left.shape[0]))
        out[:, self.dC:] = self.left @ d @ self.right
        return out

    def norm(self, gamma, n_random=2):
        d = self.J0 - jacobian(self.fam, self.eps, gamma, check_delta=False)
        # only the Gamma column block is nonzero
        return block_norm(self.left @ d @ self.right, self.sizes, [self.fam.n_domain], n_random=n_random)


def sample_radii(fam, theta=0.5, box=None, kc=None, n_eps=8, n_dirs=16, n_radii=24, n_bisect=6, seed=0):
    """Sampled plan: check the Banach hypotheses on a grid of radii and parameters.

    ``L(r)`` is the sampled sup of ``|D_W B_eps(gamma)|`` over ``|gamma|_eps <= r``
    (the Neumann operator ``T`` at base point ``gamma`` is the same matrix).
    ``delta_theta`` is the largest sampled ``r`` with ``1.05 L(r) <= theta`` and
    ``delta_Q`` the largest with ``1.05 L(r) <= 1/2``.  With
    ``b = sup |B_eps(0, 0)|`` and ``A = sup |D_K B_eps|``,
    ``r_K = ((1 - theta) delta_sigma - 1.05 b) / (1.05 A)``, capped by
    ``(1 - theta) delta_sigma / C_Q`` with ``C_Q = 1.05 sup |Q_eps(0)|``.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    kc = kc or kernel_cokernel(fam)
    box = box or fam.delta
    if not (fam.delta.contains(box.lows) and fam.delta.contains(box.highs)):
        raise OutOfDomain("plan box must lie inside the parameter box")
    top = _admissible_radius(fam)
    radii = np.geomspace(top * 1e-6, top, n_radii)
    eps_list = _eps_samples(box, n_eps, seed=seed)
    b_sup = a_sup = cq_sup = 0.0
    dirs = unit_directions(n_dirs, fam.n_domain, seed)
    dK = kc.dim_K
    bases = []
    for eps in eps_list:
        Q0 = inverse_at(fam, eps, np.zeros(fam.n_domain), kc, override=True)
        cq_sup = max(cq_sup, Q0.CQ_observed)
        rhs = np.concatenate([np.zeros(dK), -evaluate(fam, eps, np.zeros(fam.n_domain))])
        b_sup = max(b_sup, Q0.domain.norm(Q0.Q @ rhs))
        if dK:
            a_sup = max(a_sup, block_norm(Q0.Q_tilde[:, :dK], Q0.domain.sizes, [dK]))
        if not fam.linear:
            probe = _LipschitzProbe(fam, eps, kc, Q0)
            bases.append((probe, probe.Wg.unscale(dirs.T).T))

    def sup_at(r):
        best = 0.0
        for probe, gdirs in bases:
            for g in gdirs:
                best = max(best, probe.norm(r * g))
        return best

    L = np.maximum.accumulate([sup_at(r) for r in radii])

    def largest(bound):
        # coarse scan, then bisection between the last passing and first failing radius
        ok = np.nonzero(SAFETY * L <= bound)[0]
        if not ok.size:
            return 0.0
        i = ok[-1]
        if i == len(radii) - 1:
            return float(radii[i])
        lo, hi, floor = radii[i], radii[i + 1], L[i]
        for _ in range(n_bisect):
            mid = np.sqrt(lo * hi)
            if SAFETY * max(floor, sup_at(mid)) <= bound:
                lo, floor = mid, max(floor, sup_at(mid))
            else:
                hi = mid
        return float(lo)

    d_theta, d_q = largest(theta), largest(0.5)
    d_sigma = min(d_theta, d_q, top)
    cq = max(1.0, SAFETY * cq_sup)
    if d_sigma <= 0:
        raise EmptyPlan("sampled Lipschitz bound exceeds theta at every radius")
    slack = (1 - theta) * d_sigma - SAFETY * b_sup
    r_k = min(slack / (SAFETY * a_sup) if a_sup > 0 else np.inf, (1 - theta) * d_sigma / cq)
    if not np.isfinite(r_k):
        r_k = (1 - theta) * d_sigma / cq
    if r_k <= 1e-14:
        raise EmptyPlan(f"near-solution term {b_sup:.3g} leaves no room for V_K on this box")
    notes = ["radii certified on a finite sample of parameters and directions; "
             "the sup over the full box and ball is not certified"]
    details = {"n_eps": len(eps_list), "n_dirs": n_dirs, "radii": radii.tolist(), "lipschitz": L.tolist(),
               "sup_B0": b_sup, "sup_DKB": a_sup, "sup_Q": cq_sup, "seed": seed}
    return RadiusPlan(theta, d_theta, d_q, d_sigma, r_k, box, cq, "estimated", "sampled", notes, details)


def as_eps(fam, eps):
    """Parameter as a 1-d array; ``None`` or ``()`` mean the distinguished point."""
    if eps is None or np.size(eps) == 0:
        return np.array(fam.delta.distinguished_zero, dtype=float)
    return np.atleast_1d(np.asarray(eps, dtype=float))


def point_box(fam, eps):
    """The box ``[0_Delta, eps]`` spanned by the distinguished point and ``eps``."""
    eps = as_eps(fam, eps)
    return ParameterBox(tuple(fam.delta.lows), tuple(np.maximum(eps, fam.delta.lows)))


class Contraction:
    """``B_eps(k, (c, gamma)) = Q_eps(0) (k, DF_eps(0) gamma - F_eps(gamma))``.

    Points ``w = (c, gamma)`` are flat vectors of length ``dim C + n_domain``.
    The result never depends on ``c``.
    """

    def __init__(self, fam, eps, kc, Q0):
        self.fam, self.kc, self.Q0 = fam, kc, Q0
        self.eps = np.atleast_1d(np.asarray(eps, dtype=float))
        # Delta membership is checked once here, not on every evaluation
        self.J0 = jacobian(fam, self.eps, np.zeros(fam.n_domain))
        self.space = Q0.domain
        self.dK, self.dC = kc.dim_K, kc.dim_C

    def split(self, w):
        return w[: self.dC], w[self.dC:]

    def norm(self, w):
        return self.space.norm(w)

    def __call__(self, k, w):
        k = np.atleast_1d(np.asarray(k, dtype=float)).reshape(self.dK)
        gamma = np.asarray(w, dtype=float)[self.dC:]
        rhs = self.J0 @ gamma - evaluate(self.fam, self.eps, gamma, check_delta=False)
        return self.Q0.Q @ np.concatenate([k, rhs])

    def d_W(self, w):
        """``D_W B`` at ``w`` in original coordinates."""
        gamma = np.asarray(w, dtype=float)[self.dC:]
        full = np.zeros((self.Q0.Q.shape[0],) * 2)
        full[self.dK:, self.dC:] = self.J0 - jacobian(self.fam, self.eps, gamma)
        return self.Q0.Q @ full

    def d_K(self):
        return self.Q0.Q[:, : self.dK]


def build_B(fam, eps, kc, Q0):
    """Evaluator of ``B_eps``; ``Q0`` must be the inverse at ``(eps, 0)``."""
    if Q0.method not in ("direct", "neumann"):
        raise ValueError("Q0 must be an inverse operator")
    return Contraction(fam, eps, kc, Q0)


@dataclass
class FixedPointResult:
    """Outcome of the Banach iteration ``w_{n+1} = B(k, w_n)``."""

    c: np.ndarray
    gamma: np.ndarray
    iterations: int
    theta_observed: float
    residual: float
    converged: bool
    error_bound: float = 0.0

    @property
    def w_star(self):
        return (self.c, self.gamma)

    def to_dict(self):
        return {"iterations": self.iterations, "theta_observed": self.theta_observed,
                "residual": self.residual, "converged": self.converged, "error_bound": self.error_bound}


def fixed_point(B, k, plan, tol=1e-10, max_iter=200, w0=None, strict=True):
    """Iterate ``B(k, .)`` from ``w0`` (default 0) until ``|w_{n+1} - w_n| <= tol (1 - theta)``.

    ``iterations`` counts the updates before the confirming step.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if strict and np.linalg.norm(k) >= plan.r_K:
        raise OutOfDomain(f"|k| = {np.linalg.norm(k):.6g} >= r_K = {plan.r_K:.6g}")
    theta = plan.theta
    w = np.zeros(B.space.dim) if w0 is None else np.asarray(w0, dtype=float).copy()
    if strict and B.norm(w) >= plan.delta_sigma:
        raise LeftBall(f"start has |w| = {B.norm(w):.6g} >= delta_sigma")
    prev = None
    theta_obs = 0.0
    for n in range(max_iter):
        w_new = B(k, w)
        step = B.norm(w_new - w)
        if strict and B.norm(w_new) >= plan.delta_sigma:
            raise LeftBall(f"iterate {n + 1} has |w| = {B.norm(w_new):.6g} >= delta_sigma")
        if prev is not None and prev > 1e3 * tol * (1 - theta) and step > 0:
            ratio = step / prev
            theta_obs = max(theta_obs, ratio)
            if ratio > 1 and strict:
                raise NotContracting(f"successive step ratio {ratio:.6g} > 1")
        if step <= tol * (1 - theta):
            resid = B.norm(w_new - B(k, w_new))
            c, g = B.split(w_new)
            return FixedPointResult(c, g, n, theta_obs, resid, True, theta / (1 - theta) * step)
        prev, w = step, w_new
    raise MaxIter(f"no convergence in {max_iter} iterations")


@dataclass
class SolutionSample:
    """One point of the solution map: ``sigma_eps(k) = (c, gamma)``."""

    epsilon: np.ndarray
    k: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    stats: FixedPointResult
    residual_pi: float = 0.0
    residual_F: float = 0.0

    @property
    def w(self):
        return np.concatenate([self.c, self.gamma])

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "k": self.k.tolist(), "c": self.c.tolist(),
                "gamma": self.gamma.tolist(), "stats": self.stats.to_dict(),
                "residual_pi": self.residual_pi, "residual_F": self.residual_F}


class Solver:
    """Caches ``K``, ``C``, plans and ``Q_eps(0)`` for repeated solves of one family."""

    def __init__(self, fam, plan=None, kc=None, theta=0.5):
        self.fam = fam
        self.kc = kc or kernel_cokernel(fam)
        self.plan = plan
        self.theta = theta
        self._B = {}

    def plan_for(self, eps):
        if self.plan is not None:
            return self.plan
        return sample_radii(self.fam, self.theta, point_box(self.fam, eps), self.kc)

    def B(self, eps):
        key = tuple(as_eps(self.fam, eps))
        if key not in self._B:
            Q0 = inverse_at(self.fam, key, np.zeros(self.fam.n_domain), self.kc, override=True)
            self._B[key] = build_B(self.fam, key, self.kc, Q0)
        return self._B[key]

    def solve(self, eps, k, tol=1e-10, max_iter=200, strict=True, w0=None, plan=None):
        eps = as_eps(self.fam, eps)
        plan = plan or self.plan_for(eps)
        if strict and not plan.box.contains(eps):
            raise OutOfDomain(f"parameter {eps.tolist()} outside the plan box")
        B = self.B(eps)
        k = np.atleast_1d(np.asarray(k, dtype=float)).reshape(self.kc.dim_K)
        res = fixed_point(B, k, plan, tol=tol, max_iter=max_iter, w0=w0, strict=strict)
        rp = float(np.linalg.norm(self.kc.pi_K @ res.gamma - k))
        rf = self.fam.omega_norms.norm(eps, evaluate(self.fam, eps, res.gamma) - self.kc.C @ res.c)
        return SolutionSample(eps, k, res.c, res.gamma, res, rp, rf)


def solve_sigma(fam, eps, k, plan=None, kc=None, tol=1e-10, max_iter=200, strict=True, solver=None):
    """``sigma_eps(k)`` by the fixed-point iteration; see :class:`Solver`."""
    solver = solver or Solver(fam, plan=plan, kc=kc)
    return solver.solve(eps, k, tol=tol, max_iter=max_iter, strict=strict, plan=plan)


@dataclass
class SigmaDerivative:
    """``D sigma_eps(k) k1 = (c', gamma')``; iterates as ``(c', gamma')``."""

    c: np.ndarray
    gamma: np.ndarray
    discrepancy: float

    def __iter__(self):
        return iter((self.c, self.gamma))

    @property
    def w(self):
        return np.concatenate([self.c, self.gamma])


def d_sigma_matrix(fam, eps, sample, kc=None, solver=None):
    """Both ``D sigma`` formulas as ``(dim C + n) x dim K`` matrices and their relative discrepancy."""
    solver = solver or Solver(fam, kc=kc)
    kc = solver.kc
    Q = inverse_at(fam, eps, sample.gamma, kc, override=True)
    first = Q.Q[:, : kc.dim_K]
    B = solver.B(eps)
    D = B.d_W(sample.w)
    second = np.linalg.solve(np.eye(D.shape[0]) - D, B.d_K())
    if not kc.dim_K:
        return first, second, 0.0
    kspace = ProductNorm.of(kc.dim_K)
    sizes = Q.domain.sizes
    scale = max(1.0, block_norm(kspace.conjugate(first, Q.domain), sizes, [kc.dim_K]))
    diff = block_norm(kspace.conjugate(first - second, Q.domain), sizes, [kc.dim_K])
    return first, second, diff / scale


def d_sigma(fam, eps, sample, k1, kc=None, solver=None):
    """``D sigma_eps(k) k1`` from ``Q_eps(gamma_eps)(k1, 0)``, cross-checked against
    ``(Id - D_W B)^{-1} D_K B k1``; raises :class:`Disagreement` beyond ``1e-6``."""
    solver = solver or Solver(fam, kc=kc)
    kc = solver.kc
    k1 = np.atleast_1d(np.asarray(k1, dtype=float)).reshape(kc.dim_K)
    Q = inverse_at(fam, eps, sample.gamma, kc, override=True)
    x1 = Q.apply(np.concatenate([k1, np.zeros(fam.n_target)]))
    B = solver.B(eps)
    D = B.d_W(sample.w)
    x2 = np.linalg.solve(np.eye(D.shape[0]) - D, B.d_K() @ k1)
    dom = Q.domain
    disc = dom.norm(x1 - x2) / max(1.0, dom.norm(x1))
    if disc > 1e-6:
        raise Disagreement(f"derivative formulas differ by {disc:.3g}")
    return SigmaDerivative(x1[: kc.dim_C], x1[kc.dim_C:], float(disc))


def stabilized_residual(fam, eps, tv_w, tv_k, kc):
    """Residual of ``pi_K(gamma-slots) = k-slots`` and ``T^l F(gamma-slots) = C (c-slots)``."""
    from .family import tangent_map

    dC = kc.dim_C
    gam = TangentVector.from_flat([w[dC:] for w in tv_w.flat()])
    cs = [w[:dC] for w in tv_w.flat()]
    tf = tangent_map(fam, eps, tv_w.level, gam).flat()
    W = fam.omega_norms.weight_at(eps)
    r = 0.0
    for k, g, c, f in zip(tv_k.flat(), gam.flat(), cs, tf):
        r = max(r, float(np.linalg.norm(kc.pi_K @ g - k)), W.norm(f - kc.C @ c))
    return r


def tangent_sigma(fam, eps, level, tv_k, plan=None, kc=None, solver=None, tol=1e-12):
    """``T^l sigma_eps(tv_k)`` for ``l <= 2`` as a tangent vector on ``C x Gamma``.

    Level 2 differences :func:`d_sigma` centrally in ``k`` and is certified by the
    stabilized tangent equation to ``1e-6``.
    """
    if level > 2:
        raise UnsupportedLevel(f"tangent level {level} > 2")
    if tv_k.level != level:
        raise ValueError("tangent vector level does not match")
    solver = solver or Solver(fam, plan=plan, kc=kc)
    kc = solver.kc
    v = tv_k.flat()
    s0 = solver.solve(eps, v[0], tol=tol, plan=plan)
    out = [s0.w]
    if level >= 1:
        out.append(d_sigma(fam, eps, s0, v[1], solver=solver).w)
    if level == 2:
        out.append(d_sigma(fam, eps, s0, v[2], solver=solver).w)
        n2 = np.linalg.norm(v[2])
        second = np.zeros_like(s0.w)
        if n2 > 0:
            u = v[2] / n2
            h = 1e-4 * max(1.0, np.linalg.norm(v[0]))
            sp = solver.solve(eps, v[0] + h * u, tol=tol, strict=False, plan=plan)
            sm = solver.solve(eps, v[0] - h * u, tol=tol, strict=False, plan=plan)
            dp = d_sigma(fam, eps, sp, v[1], solver=solver).w
            dm = d_sigma(fam, eps, sm, v[1], solver=solver).w
            second = n2 * (dp - dm) / (2 * h)
        out.append(second + d_sigma(fam, eps, s0, v[3], solver=solver).w)
    tv = TangentVector.from_flat(out)
    scale = max(1.0, sum(np.linalg.norm(x) for x in v))
    res = stabilized_residual(fam, eps, tv, tv_k, kc)
    if res > 1e-6 * scale:
        raise Disagreement(f"stabilized tangent equation residual {res:.3g}")
    return tv


def sigma_continuity_audit(fam, plan, pairs, eps, kc=None, solver=None):
    """Check ``|sigma(l) - sigma(k)|_W <= C_Q / (1 - theta) |l - k| + 1e-9``."""
    solver = solver or Solver(fam, plan=plan, kc=kc)
    bound = plan.CQ / (1 - plan.theta)
    worst, rows, ok = 0.0, [], True
    B = solver.B(eps)
    for k, l in pairs:
        a = solver.solve(eps, k, plan=plan)
        b = solver.solve(eps, l, plan=plan)
        lhs = B.norm(b.w - a.w)
        dk = float(np.linalg.norm(np.atleast_1d(l) - np.atleast_1d(k)))
        ok &= lhs <= bound * dk + 1e-9
        ratio = lhs / dk if dk > 0 else 0.0
        worst = max(worst, ratio)
        rows.append({"dk": dk, "dw": lhs})
    return AuditReport("sigma_continuity", bool(ok), worst, bound, details={"n_pairs": len(rows)},
                       plan={"epsilon": np.atleast_1d(eps).tolist(), "plan": plan.to_dict()})


def _w_ball(n, dims, radius, norms, seed):
    """Points ``(c, gamma)`` with ``|c| + |gamma|_eps < radius``."""
    dC, W = dims
    h = halton(n, 2, seed + 17)
    total = radius * h[:, 0] ** 0.5
    split = h[:, 1]
    dirs_c = unit_directions(n, dC, seed + 3) if dC else np.zeros((n, 0))
    dirs_g = unit_directions(n, W.dim, seed + 5)
    out = []
    for i in range(n):
        c = split[i] * total[i] * dirs_c[i] if dC else np.zeros(0)
        g = W.unscale((1 - split[i] if dC else 1.0) * total[i] * dirs_g[i])
        out.append(np.concatenate([c, g]))
    return np.array(out)


def contraction_audit(fam, plan, eps_list, k_list, n_pairs=1000, seed=0, kc=None, solver=None):
    """Sampled contraction ``|B(k,w') - B(k,w)| <= theta |w' - w|`` in the ``delta_theta`` ball
    and smallness ``|B(k, 0)| < (1 - theta) delta_sigma``."""
    solver = solver or Solver(fam, plan=plan, kc=kc)
    kc = solver.kc
    worst_lip, worst_small, ok = 0.0, 0.0, True
    rows = []
    for i, eps in enumerate(eps_list):
        B = solver.B(eps)
        W = fam.gamma_norms.weight_at(eps)
        pts = _w_ball(2 * n_pairs, (kc.dim_C, W), plan.delta_theta, None, seed + i)
        for k in k_list:
            k = np.atleast_1d(np.asarray(k, dtype=float))
            lip = 0.0
            for a, b in zip(pts[:n_pairs], pts[n_pairs:]):
                d = B.norm(b - a)
                if d == 0:
                    continue
                num = B.norm(B(k, b) - B(k, a))
                lip = max(lip, num / d)
                ok &= num <= plan.theta * d + 1e-9
            small = B.norm(B(k, np.zeros(B.space.dim)))
            ok &= small < (1 - plan.theta) * plan.delta_sigma
            worst_lip = max(worst_lip, lip)
            worst_small = max(worst_small, small / ((1 - plan.theta) * plan.delta_sigma))
            rows.append({"epsilon": np.atleast_1d(eps).tolist(), "k": k.tolist(), "lipschitz": lip,
                         "smallness": small})
    return AuditReport("contraction", bool(ok), worst_lip, plan.theta,
                       details={"smallness_ratio": worst_small, "samples": rows},
                       plan={"n_pairs": n_pairs, "seed": seed, "plan": plan.to_dict()})
