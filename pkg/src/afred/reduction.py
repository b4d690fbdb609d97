"""Reduced maps ``f_eps: V_K -> C``, their zeros and the comparison with full zeros."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import AfredError, NoConvergence, OutOfDelta, OutOfDomain
from .family import evaluate, jacobian
from .report import AuditReport
from .sampling import ball_points
from .solver import Solver, as_eps, d_sigma, point_box, sample_radii

BEYOND = ("error", "record", "solve")


@dataclass
class ReducedPoint:
    """``f_eps(k)``, ``Df_eps(k)`` and ``phi_eps(k)`` at one grid point."""

    epsilon: np.ndarray
    k: np.ndarray
    f: np.ndarray
    df: np.ndarray
    phi: np.ndarray
    residual: float
    iterations: int
    certified: bool = True

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "k": self.k.tolist(), "f": self.f.tolist(),
                "df": self.df.tolist(), "phi": self.phi.tolist(), "residual": self.residual,
                "iterations": self.iterations, "certified": self.certified}


@dataclass
class GridError:
    """Inline record of a grid point that could not be reduced."""

    epsilon: np.ndarray
    k: np.ndarray
    error: str
    message: str

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "k": self.k.tolist(), "error": self.error,
                "message": self.message}


@dataclass
class ReducedZero:
    """A zero ``k*`` of ``f_eps`` with ``gamma* = phi_eps(k*)``."""

    epsilon: np.ndarray
    k: np.ndarray
    gamma: np.ndarray
    f_norm: float
    F_norm: float
    multiplicity: int = 1
    certified: bool = True
    seeds: int = 1

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "k": self.k.tolist(), "gamma": self.gamma.tolist(),
                "f_norm": self.f_norm, "F_norm": self.F_norm, "multiplicity": self.multiplicity,
                "certified": self.certified, "seeds": self.seeds}


@dataclass
class ZeroSet:
    """Zeros of ``f_eps`` in a ball of ``K``.  ``whole_ball`` marks ``dim C = 0``,
    where every ``k`` is a zero and ``points`` is empty."""

    epsilon: np.ndarray
    points: list
    radius: float
    whole_ball: bool = False

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "radius": self.radius, "whole_ball": self.whole_ball,
                "points": [z.to_dict() for z in self.points]}


@dataclass
class ReductionResult:
    family: str
    plan: object
    grid: list
    zeros: list = field(default_factory=list)
    audit: object = None

    def rows(self):
        return [g for g in self.grid if isinstance(g, ReducedPoint)]

    def errors(self):
        return [g for g in self.grid if isinstance(g, GridError)]

    def to_dict(self):
        return {"family": self.family, "plan": self.plan.to_dict() if self.plan else None,
                "grid": [g.to_dict() for g in self.grid], "zeros": [z.to_dict() for z in self.zeros],
                "audit": self.audit.to_dict() if self.audit is not None else None}


def _solver(fam, plan, solver, eps):
    if solver is not None:
        return solver
    return Solver(fam, plan=plan or sample_radii(fam, box=point_box(fam, eps)))


def _certified(plan, eps, k):
    return bool(plan.box.contains(eps) and np.linalg.norm(k) < plan.r_K)


def reduce_point(fam, eps, k, plan=None, solver=None, tol=1e-10, beyond_plan="error"):
    """``f_eps(k)`` (the ``C``-coefficient of ``sigma_eps(k)``), its derivative and ``phi_eps(k)``.

    ``beyond_plan="solve"`` iterates outside ``V_K`` or the plan box and marks
    the result uncertified; otherwise such points raise :class:`OutOfDomain`.
    """
    if beyond_plan not in BEYOND:
        raise ValueError(f"beyond_plan must be one of {BEYOND}")
    eps = as_eps(fam, eps)
    solver = _solver(fam, plan, solver, eps)
    plan = plan or solver.plan_for(eps)
    kc = solver.kc
    k = np.atleast_1d(np.asarray(k, dtype=float)).reshape(kc.dim_K)
    ok = _certified(plan, eps, k)
    s = solver.solve(eps, k, tol=tol, strict=ok or beyond_plan != "solve", plan=plan)
    df = np.zeros((kc.dim_C, kc.dim_K))
    for i in range(kc.dim_K):
        df[:, i] = d_sigma(fam, eps, s, np.eye(kc.dim_K)[i], solver=solver).c
    return ReducedPoint(eps, k, s.c, df, s.gamma, s.stats.residual, s.stats.iterations, ok)


def reduce_grid(fam, eps_grid, k_grid, plan=None, solver=None, tol=1e-10, beyond_plan="record", workers=None):
    """Reduce on the product grid, ``eps``-major then ``k`` in the given order.

    Failures are recorded inline as :class:`GridError`.  With
    ``beyond_plan="record"`` points outside the plan are recorded as
    ``OutOfDomain``; ``"solve"`` computes them uncertified.
    """
    eps_grid = [as_eps(fam, e) for e in eps_grid]
    if beyond_plan not in BEYOND:
        raise ValueError(f"beyond_plan must be one of {BEYOND}")
    k_grid = [np.atleast_1d(np.asarray(k, dtype=float)) for k in k_grid]
    if plan is None and solver is None:
        hi = np.max(np.array(eps_grid), axis=0)
        plan = sample_radii(fam, box=point_box(fam, hi))
    solver = solver or Solver(fam, plan=plan)
    plan = plan or solver.plan
    mode = "solve" if beyond_plan == "solve" else "error"
    tasks = [(e, k) for e in eps_grid for k in k_grid]

    def run(task):
        e, k = task
        try:
            return reduce_point(fam, e, k, plan=plan, solver=solver, tol=tol, beyond_plan=mode)
        except AfredError as exc:
            return GridError(e, k, type(exc).__name__, str(exc))

    for e in eps_grid:
        solver.B(e)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grid = list(pool.map(run, tasks))
    else:
        grid = [run(t) for t in tasks]
    return ReductionResult(fam.name, plan, grid)


def _seeds(dim, radius, n, seed):
    if dim == 1:
        m = max(n, 2)
        return [np.array([x]) for x in np.linspace(-radius, radius, m + 2)[1:-1] if x != 0.0]
    return list(ball_points(n, dim, radius * 0.95, seed))


def find_reduced_zeros(fam, eps, plan=None, solver=None, zero_tol=1e-8, match_tol=1e-6, radius=None,
                       n_seeds=8, seed=0, max_iter=100, beyond_plan="error"):
    """Zeros of ``f_eps`` in the ``K``-ball of ``radius`` (default ``r_K``).

    Newton steps use ``Df`` (least squares when ``dim K != dim C``).  Zeros
    closer than ``match_tol`` are merged; a zero whose ``Df`` has a singular
    value below ``sqrt(zero_tol)`` gets multiplicity 2.
    """
    eps = as_eps(fam, eps)
    solver = _solver(fam, plan, solver, eps)
    plan = plan or solver.plan_for(eps)
    if beyond_plan not in BEYOND:
        raise ValueError(f"beyond_plan must be one of {BEYOND}")
    kc = solver.kc
    radius = plan.r_K if radius is None else float(radius)
    if kc.dim_C == 0:
        return ZeroSet(eps, [], radius, whole_ball=True)
    mode = "solve" if beyond_plan == "solve" else "error"
    found = []
    for k in _seeds(kc.dim_K, radius, n_seeds, seed):
        try:
            p = reduce_point(fam, eps, k, solver=solver, plan=plan, beyond_plan=mode)
            for _ in range(max_iter):
                step = np.linalg.lstsq(p.df, -p.f, rcond=None)[0]
                if not np.all(np.isfinite(step)) or not np.any(step):
                    break
                k = k + step
                if np.linalg.norm(k) >= radius:
                    raise OutOfDomain("Newton iterate left the search ball")
                p = reduce_point(fam, eps, k, solver=solver, plan=plan, beyond_plan=mode)
                if np.linalg.norm(p.f) <= zero_tol and np.linalg.norm(step) <= 1e-12:
                    break
        except AfredError:
            continue
        if np.linalg.norm(p.f) > zero_tol:
            continue
        for z in found:
            if np.linalg.norm(z.k - p.k) <= match_tol:
                z.seeds += 1
                break
        else:
            sv = np.linalg.svd(p.df, compute_uv=False)
            mult = 2 if sv.size == 0 or sv.min() < np.sqrt(zero_tol) else 1
            Fn = fam.omega_norms.norm(eps, evaluate(fam, eps, p.phi, check_delta=False))
            found.append(ReducedZero(eps, p.k, p.phi, float(np.linalg.norm(p.f)), Fn, mult, p.certified))
    found.sort(key=lambda z: tuple(z.k))
    return ZeroSet(eps, found, radius)


@dataclass
class FullZero:
    epsilon: np.ndarray
    gamma: np.ndarray
    F_norm: float
    seeds: int = 1

    def to_dict(self):
        return {"epsilon": self.epsilon.tolist(), "gamma": self.gamma.tolist(), "F_norm": self.F_norm,
                "seeds": self.seeds}


def _damped_newton(fam, eps, g, check, zero_tol, max_iter):
    """Damped Newton in weight-conjugated coordinates, so residuals and steps are
    measured in the ``eps``-norms (essential when fast components are tiny)."""
    Wg, Wo = fam.gamma_norms.weight_at(eps), fam.omega_norms.weight_at(eps)

    def scaled_F(x):
        return Wo.scale(evaluate(fam, eps, x, check_delta=check))

    def merit(x):
        return 0.5 * float(np.sum(scaled_F(x) ** 2))

    for _ in range(max_iter):
        F = scaled_F(g)
        if not np.any(F):
            return g
        J = Wo.scale(jacobian(fam, eps, g, check_delta=check))
        Jt = sla.solve_triangular(Wg.factor, J.T, lower=False, trans="T").T
        step_t = np.linalg.lstsq(Jt, -F, rcond=None)[0]
        step = Wg.unscale(step_t)
        if np.linalg.norm(F) <= zero_tol and np.linalg.norm(step_t) <= 1e-14 * max(1.0, Wg.norm(g)):
            return g
        m0, t = merit(g), 1.0
        slope = -2.0 * m0
        while t > 1e-10:
            try:
                if merit(g + t * step) <= m0 + 1e-4 * t * slope:
                    break
            except OutOfDomain:
                pass
            t *= 0.5
        else:
            raise NoConvergence("line search failed")
        g = g + t * step
    if np.linalg.norm(scaled_F(g)) > zero_tol:
        raise NoConvergence("damped Newton did not reach zero_tol")
    return g


def brute_force_zeros(fam, eps, radius, n_starts=64, seed=0, zero_tol=1e-8, match_tol=1e-6, max_iter=100,
                      allow_outside_delta=False, kc=None, k_radius=None):
    """Zeros of ``F_eps`` from damped Newton (Armijo backtracking on ``|F|^2/2``).

    Starts fill the ``|.|_eps`` ball of ``radius``; zeros outside that ball are
    discarded, and with ``kc`` and ``k_radius`` so are zeros whose
    ``pi_K gamma`` leaves the ``k_radius`` ball.  ``allow_outside_delta`` lets
    the oracle run at parameters outside the family's box.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float)) if np.size(eps) else fam.delta.distinguished_zero
    check = not allow_outside_delta
    if check and not fam.delta.contains(eps):
        raise OutOfDelta(f"parameter {eps.tolist()} outside the family box")
    W = fam.gamma_norms.weight_at(eps)
    dirs = ball_points(n_starts, fam.n_domain, radius, seed)
    out = []
    for u in dirs:
        try:
            g = _damped_newton(fam, eps, W.unscale(u), check, zero_tol, max_iter)
        except (NoConvergence, OutOfDomain):
            continue
        if W.norm(g) >= radius:
            continue
        if kc is not None and k_radius is not None and np.linalg.norm(kc.pi_K @ g) >= k_radius:
            continue
        for z in out:
            if W.norm(z.gamma - g) <= match_tol:
                z.seeds += 1
                break
        else:
            Fn = fam.omega_norms.norm(eps, evaluate(fam, eps, g, check_delta=check))
            out.append(FullZero(eps, g, Fn))
    out.sort(key=lambda z: tuple(z.gamma))
    return out


def zero_equivalence(fam, reduced, brute, kc, solver=None, match_tol=1e-6):
    """Match reduced zeros ``phi(k*)`` with full zeros ``gamma*`` through ``pi_K``.

    Passes iff the matching is a bijection with ``|phi(k*) - gamma*|_eps <= match_tol``.
    When ``dim C = 0`` every full zero must satisfy ``phi(pi_K gamma*) = gamma*``.
    """
    eps = reduced.epsilon
    W = fam.gamma_norms.weight_at(eps)
    pairs, worst = [], 0.0
    if reduced.whole_ball:
        solver = solver or Solver(fam, kc=kc)
        for z in brute:
            k = kc.pi_K @ z.gamma
            s = solver.solve(eps, k, strict=False)
            d = W.norm(s.gamma - z.gamma)
            worst = max(worst, d)
            pairs.append({"k": k.tolist(), "mismatch": d})
        ok = worst <= match_tol
        return AuditReport("zero_equivalence", bool(ok), worst, match_tol,
                           details={"whole_ball": True, "n_full": len(brute), "pairs": pairs})
    used = set()
    unmatched_reduced = 0
    for r in reduced.points:
        best, best_j = np.inf, None
        for j, z in enumerate(brute):
            if j in used:
                continue
            d = W.norm(r.gamma - z.gamma)
            if d < best:
                best, best_j = d, j
        if best_j is None or best > match_tol:
            unmatched_reduced += 1
            worst = max(worst, best if np.isfinite(best) else np.inf)
            continue
        used.add(best_j)
        proj = float(np.linalg.norm(kc.pi_K @ brute[best_j].gamma - r.k))
        worst = max(worst, best, proj)
        pairs.append({"k": r.k.tolist(), "mismatch": best, "projection_mismatch": proj})
    unmatched_full = len(brute) - len(used)
    ok = unmatched_reduced == 0 and unmatched_full == 0 and worst <= match_tol
    return AuditReport("zero_equivalence", bool(ok), float(worst), match_tol,
                       details={"n_reduced": len(reduced.points), "n_full": len(brute),
                                "unmatched_reduced": unmatched_reduced, "unmatched_full": unmatched_full,
                                "pairs": pairs})


def _second_derivative(fam, eps, k, solver, plan, beyond_plan):
    kc = solver.kc
    h = 1e-4 * max(1.0, np.linalg.norm(k))
    out = np.zeros((kc.dim_C, kc.dim_K, kc.dim_K))
    for j in range(kc.dim_K):
        e = np.eye(kc.dim_K)[j]
        p = reduce_point(fam, eps, k + h * e, plan=plan, solver=solver, beyond_plan="solve")
        m = reduce_point(fam, eps, k - h * e, plan=plan, solver=solver, beyond_plan="solve")
        out[:, :, j] = (p.df - m.df) / (2 * h)
    return out


def regularity_profile(fam, eps_path, k_grid, order=2, eps0=None, plan=None, solver=None, tol=1e-9,
                       beyond_plan="error"):
    """Table of ``sup_k |D^j f_eps(k) - D^j f_eps0(k)|`` for ``j <= order`` along ``eps_path``.

    ``eps0`` defaults to the last path entry.  Second derivatives are central
    differences of ``Df``.  Passes iff every column is nonincreasing (up to
    ``tol``) and ends at most ``tol``.
    """
    if order > 2:
        raise ValueError("order must be <= 2")
    path = [as_eps(fam, e) for e in eps_path]
    eps0 = path[-1] if eps0 is None else as_eps(fam, eps0)
    if solver is None:
        hi = np.max(np.array(path + [eps0]), axis=0)
        plan = plan or sample_radii(fam, box=point_box(fam, hi))
        solver = Solver(fam, plan=plan)
    plan = plan or solver.plan
    ks = [np.atleast_1d(np.asarray(k, dtype=float)) for k in k_grid]

    def derivs(e, k):
        p = reduce_point(fam, e, k, plan=plan, solver=solver, beyond_plan=beyond_plan)
        out = [p.f, p.df]
        if order == 2:
            out.append(_second_derivative(fam, e, k, solver, plan, beyond_plan))
        return out[: order + 1]

    base = [derivs(eps0, k) for k in ks]
    table = []
    for e in path:
        row = [0.0] * (order + 1)
        for k, b in zip(ks, base):
            for j, (x, y) in enumerate(zip(derivs(e, k), b)):
                row[j] = max(row[j], float(np.linalg.norm(np.ravel(x - y))))
        table.append(row)
    arr = np.array(table)
    mono = bool(np.all(np.diff(arr, axis=0) <= tol))
    ends = bool(np.all(arr[-1] <= tol))
    return AuditReport("regularity_profile", mono and ends, float(arr[-1].max()), tol,
                       details={"epsilon_path": [e.tolist() for e in path], "epsilon0": eps0.tolist(),
                                "columns": [f"D{j}" for j in range(order + 1)], "table": arr.tolist(),
                                "monotone": mono, "ends_below_tol": ends},
                       plan=plan.to_dict())
