"""Kernel/cokernel bases, the stabilization ``P_eps(gamma_0)`` and its inverse.

All products and norms are evaluated in weight-conjugated coordinates
(``x -> U x`` with ``W = U^T U``), where the weighted sum norms become sums of
Euclidean norms over blocks.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import AmbiguousRank, NotContractive, OutOfDomain, Singular, Truncation
from .family import jacobian
from .report import AuditReport
from .spaces import ProductNorm, WeightMatrix, block_norm

IDENTITY_TOL = 1e-10


def _gram_schmidt(cands, W, count, rel=1e-6):
    """W-orthonormalize candidate columns in order, keeping the first ``count`` independent ones."""
    basis = []
    for v in cands.T:
        ref = W.norm(v)
        if ref == 0:
            continue
        r = v.copy()
        for _ in range(2):
            for b in basis:
                r = r - W.inner(b, r) * b
        nr = W.norm(r)
        if nr > rel * ref:
            basis.append(r / nr)
        if len(basis) == count:
            break
    if len(basis) != count:
        raise ValueError("could not extract an orthonormal basis")
    return np.column_stack(basis) if basis else np.zeros((cands.shape[0], 0))


def _canonical(span, W):
    """Canonical W-orthonormal basis: Gram-Schmidt of projected standard basis vectors."""
    n, m = span.shape
    if m == 0:
        return np.zeros((n, 0))
    proj = span @ (span.T @ W.entries)
    return _gram_schmidt(proj, W, m)


@dataclass
class KernelCokernel:
    """Bases of ``ker DF_0(0)`` and of a complement of its range.

    ``K`` is ``|.|_0``-orthonormal; ``C`` is ``|.|_0``-orthonormal and spans the
    orthogonal complement of the range unless the family declares its own
    representatives (``cokernel_source == "declared"``).
    """

    K: np.ndarray
    C: np.ndarray
    singular_values: np.ndarray
    rank_tol: float
    rank: int
    W_gamma0: WeightMatrix
    W_omega0: WeightMatrix
    cokernel_source: str = "orthogonal"

    @property
    def dim_K(self):
        return self.K.shape[1]

    @property
    def dim_C(self):
        return self.C.shape[1]

    @property
    def kernel_basis(self):
        return self.K

    @property
    def cokernel_basis(self):
        return self.C

    @property
    def index(self):
        return self.dim_C - self.dim_K

    @property
    def pi_K(self):
        """Coefficient matrix of the ``|.|_0``-orthogonal projection onto ``K``."""
        return self.K.T @ self.W_gamma0.entries

    def project(self, gamma):
        return self.pi_K @ gamma

    def to_dict(self):
        return {"dim_K": self.dim_K, "dim_C": self.dim_C, "rank": self.rank, "rank_tol": self.rank_tol,
                "singular_values": self.singular_values.tolist(), "cokernel_source": self.cokernel_source,
                "K": self.K.tolist(), "C": self.C.tolist()}


def kernel_cokernel(fam, rank_tol=None):
    """Kernel and cokernel of ``DF_0(0)`` from an SVD in the ``|.|_0`` inner products.

    ``rank_tol`` defaults to ``1e-8`` times the largest singular value.  A
    singular value in ``[rank_tol/10, 10 rank_tol)`` raises :class:`AmbiguousRank`.
    """
    if rank_tol is not None and rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    zero = fam.zero
    J0 = jacobian(fam, zero, np.zeros(fam.n_domain))
    Wg, Wo = fam.gamma_norms.weight_at_zero, fam.omega_norms.weight_at_zero
    Mt = ProductNorm([Wg]).conjugate(J0, ProductNorm([Wo]))
    U, s, Vt = np.linalg.svd(Mt, full_matrices=True)
    smax = float(s.max(initial=0.0))
    tol = float(rank_tol) if rank_tol is not None else (1e-8 * smax if smax > 0 else 1e-8)
    near = s[(s >= tol / 10) & (s < 10 * tol)]
    if near.size:
        raise AmbiguousRank(f"singular values {near.tolist()} within a decade of rank_tol={tol:.3g}")
    r = int(np.sum(s >= 10 * tol))
    K = _canonical(Wg.unscale(Vt[r:].T), Wg)
    if fam.cokernel_basis is not None:
        Cd = np.asarray(fam.cokernel_basis, dtype=float)
        if Cd.shape != (fam.n_target, fam.n_target - r):
            raise ValueError(f"declared cokernel has shape {Cd.shape}, expected {(fam.n_target, fam.n_target - r)}")
        stacked = np.hstack([U[:, :r], Wo.scale(Cd)])
        sv = np.linalg.svd(stacked, compute_uv=False)
        if sv.size and sv.min() < 1e-8 * max(1.0, sv.max()):
            raise ValueError("declared cokernel is not a complement of the range")
        C = _gram_schmidt(Cd, Wo, Cd.shape[1])
        source = "declared"
    else:
        C = _canonical(Wo.unscale(U[:, r:]), Wo)
        source = "orthogonal"
    return KernelCokernel(K, C, s, tol, r, Wg, Wo, source)


@dataclass
class Stabilization:
    """``P_eps(gamma_0)(c, gamma) = (pi_K gamma, DF_eps(gamma_0) gamma - C c)``.

    ``domain`` is ``C-coefficients x Gamma_eps`` and ``target`` is
    ``K-coefficients x Omega_eps``, both with sum norms.
    """

    P: np.ndarray
    domain: ProductNorm
    target: ProductNorm
    kc: KernelCokernel | None = None
    epsilon: np.ndarray | None = None
    gamma0: np.ndarray | None = None

    @property
    def P_tilde(self):
        return self.domain.conjugate(self.P, self.target)

    @property
    def pi_K(self):
        return self.kc.pi_K if self.kc is not None else None

    def condition(self):
        return float(np.linalg.cond(self.P_tilde)) if self.P.size else 1.0

    @classmethod
    def from_matrix(cls, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        space = ProductNorm.of(P.shape[0])
        return cls(P, space, space)


def _spaces(fam, kc, eps):
    dom = ProductNorm.of(kc.dim_C, fam.gamma_norms.weight_at(eps))
    tgt = ProductNorm.of(kc.dim_K, fam.omega_norms.weight_at(eps))
    return dom, tgt


def stabilization_matrix(kc, J):
    dK, dC = kc.dim_K, kc.dim_C
    return np.block([[np.zeros((dK, dC)), kc.pi_K], [-kc.C, J]])


def assemble_stabilization(fam, eps, gamma0, kc, plan=None, override=False):
    """Block operator ``[[0, Pi_K], [-C, DF_eps(gamma0)]]`` at the base point ``(eps, gamma0)``."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    gamma0 = np.asarray(gamma0, dtype=float)
    if plan is not None and not override:
        if not plan.box.contains(eps):
            raise OutOfDomain(f"parameter {eps.tolist()} outside the plan box")
        r = fam.gamma_norms.norm(eps, gamma0)
        if r > plan.delta_Q * (1 + 1e-12):
            raise OutOfDomain(f"|gamma0|_eps = {r:.6g} exceeds delta_Q = {plan.delta_Q:.6g}")
    J = jacobian(fam, eps, gamma0)
    dom, tgt = _spaces(fam, kc, eps)
    if dom.dim != tgt.dim:
        raise ValueError("stabilization is not square; check the declared index")
    return Stabilization(stabilization_matrix(kc, J), dom, tgt, kc, eps, gamma0)


@dataclass
class InverseOperator:
    """Inverse ``Q`` of a stabilization with certificates.

    ``Q_tilde`` is ``Q`` in conjugated coordinates; ``residual`` and
    ``residual_PQ`` are rigorous upper bounds of ``|QP - Id|`` and ``|PQ - Id|``
    in the weighted sum norms.
    """

    Q: np.ndarray
    Q_tilde: np.ndarray
    method: str
    residual: float
    residual_PQ: float
    domain: ProductNorm
    target: ProductNorm
    neumann_terms: int = 0
    T_norm: float = 0.0
    extra: dict = field(default_factory=dict)
    _cq: float | None = field(default=None, repr=False)

    @property
    def CQ_observed(self):
        """Weighted operator norm of ``Q`` (computed on first use)."""
        if self._cq is None:
            self._cq = block_norm(self.Q_tilde, self.domain.sizes, self.target.sizes) if self.Q_tilde.size else 0.0
        return self._cq

    def apply(self, x):
        return self.Q @ np.asarray(x, dtype=float)

    def norm(self):
        return self.CQ_observed


def _residuals(Qt, Pt, dom, tgt):
    n = Pt.shape[0]
    r1 = block_norm(Qt @ Pt - np.eye(n), dom.sizes, dom.sizes, bound="upper")
    r2 = block_norm(Pt @ Qt - np.eye(n), tgt.sizes, tgt.sizes, bound="upper")
    return r1, r2


def _finish(Qt, Pt, dom, tgt, method, **kw):
    r1, r2 = _residuals(Qt, Pt, dom, tgt)
    Q = _unconjugate(Qt, dom, tgt)
    return InverseOperator(Q, Qt, method, r1, r2, dom, tgt, **kw)


def _unconjugate(Qt, dom, tgt):
    """``D_dom^{-1} Q_tilde D_tgt``: back to original coordinates."""
    if Qt.size == 0:
        return Qt.copy()
    left = sla.solve_triangular(dom.scale_matrix, Qt, lower=False)
    return left @ tgt.scale_matrix


def invert_direct(st):
    """LU inverse of ``P``; raises :class:`Singular` unless both identity residuals are <= 1e-10."""
    if not isinstance(st, Stabilization):
        st = Stabilization.from_matrix(st)
    Pt = st.P_tilde
    n = Pt.shape[0]
    if n == 0:
        return _finish(np.zeros((0, 0)), Pt, st.domain, st.target, "direct")
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(Pt, check_finite=True)
            if np.any(np.abs(np.diag(lu[0])) <= 1e-300):
                raise Singular("zero pivot")
            Qt = sla.lu_solve(lu, np.eye(n))
    except (np.linalg.LinAlgError, ValueError, sla.LinAlgError) as exc:
        raise Singular(str(exc)) from exc
    if not np.all(np.isfinite(Qt)):
        raise Singular("non-finite inverse")
    inv = _finish(Qt, Pt, st.domain, st.target, "direct")
    if not (inv.residual <= IDENTITY_TOL and inv.residual_PQ <= IDENTITY_TOL):
        raise Singular(f"identity residuals {inv.residual:.3g}, {inv.residual_PQ:.3g} exceed {IDENTITY_TOL}")
    return inv


def _as_tilde(P, Q0):
    if isinstance(P, Stabilization):
        return P.P_tilde
    return Q0.domain.conjugate(np.asarray(P, dtype=float), Q0.target)


def invert_neumann(Q0, P0, P1, max_terms=200, tol=1e-14):
    """Inverse of ``P1`` from ``Q0 = P0^{-1}`` via ``(Id - T)^{-1} = sum T^n``, ``T = Q0 (P0 - P1)``.

    The series ``Q1 = sum_{n<N} T^n Q0`` stops when the next term has norm
    below ``tol``.  Raises :class:`NotContractive` if ``|T| >= 1`` and
    :class:`Truncation` if ``max_terms`` terms do not reach ``tol``.
    """
    if not isinstance(Q0, InverseOperator):
        Q0 = invert_direct(Q0)
    dom, tgt = Q0.domain, Q0.target
    P0t, P1t = _as_tilde(P0, Q0), _as_tilde(P1, Q0)
    Tt = Q0.Q_tilde @ (P0t - P1t)
    t_norm = block_norm(Tt, dom.sizes, dom.sizes)
    if t_norm >= 1:
        raise NotContractive(f"|T| = {t_norm:.6g} >= 1")
    total = Q0.Q_tilde.copy()
    term = Q0.Q_tilde.copy()
    terms = 1
    while True:
        term = Tt @ term
        if block_norm(term, dom.sizes, tgt.sizes, bound="upper") < tol:
            break
        if terms >= max_terms:
            raise Truncation(f"{max_terms} terms did not reach tol={tol:g}")
        total += term
        terms += 1
    return _finish(total, P1t, dom, tgt, "neumann", neumann_terms=terms, T_norm=t_norm)


def inverse_at(fam, eps, gamma0, kc, plan=None, override=False):
    """Direct inverse ``Q_eps(gamma0)``."""
    return invert_direct(assemble_stabilization(fam, eps, gamma0, kc, plan=plan, override=override))


def stabilization_continuity_audit(fam, eps, base_pairs, kc=None, constants=None):
    """Check ``|Q(g') - Q(g)| <= C_Q^2 c1_F(|g' - g|_eps)`` over base-point pairs."""
    kc = kc or kernel_cokernel(fam)
    constants = constants or fam.declared_constants
    if constants is None:
        raise ValueError("constants are required (declared or estimated)")
    bound = constants.CQ ** 2
    worst = 0.0
    rows = []
    for g0, g1 in base_pairs:
        g0, g1 = np.asarray(g0, dtype=float), np.asarray(g1, dtype=float)
        r = fam.gamma_norms.norm(eps, g1 - g0)
        if r == 0:
            ratio = 0.0
            num = 0.0
        else:
            q0 = inverse_at(fam, eps, g0, kc, override=True)
            q1 = inverse_at(fam, eps, g1, kc, override=True)
            num = block_norm(q1.Q_tilde - q0.Q_tilde, q0.domain.sizes, q0.target.sizes)
            den = constants.modulus_c1F(r)
            if num <= 1e-15 * max(1.0, q0.CQ_observed):
                ratio = 0.0
            else:
                ratio = num / den if den > 0 else float("inf")
        worst = max(worst, ratio)
        rows.append({"distance": r, "difference": num, "ratio": ratio})
    return AuditReport("stabilization_continuity", bool(worst <= bound + 1e-6), worst, bound,
                       details={"pairs": rows}, plan={"n_pairs": len(rows)})
