"""Weighted inner-product spaces, parameter boxes and tangent vectors.

Every norm in the library is a weighted Euclidean norm ``sqrt(v^T W v)``.  A
:class:`WeightMatrix` keeps an upper-triangular factor ``U`` with ``W = U^T U``
so that norms become ``|U v|`` and operator norms between weighted spaces become
spectral norms of conjugated matrices ``U_t M U_d^{-1}``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg as sla

from .errors import DimensionError
from .report import AuditReport
from .sampling import unit_directions


class WeightMatrix:
    """Symmetric positive-definite weight ``W`` with factor ``U`` (``W = U^T U``)."""

    def __init__(self, entries, factor=None):
        w = np.array(entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise DimensionError("weight matrix must be square and non-empty")
        if not np.all(np.isfinite(w)):
            raise ValueError("weight matrix has non-finite entries")
        scale = max(np.abs(w).max(), 1e-300)
        if np.abs(w - w.T).max() > 1e-12 * scale:
            raise ValueError("weight matrix is not symmetric")
        w = 0.5 * (w + w.T)
        if factor is None:
            try:
                factor = np.linalg.cholesky(w).T
            except np.linalg.LinAlgError as exc:
                raise ValueError("weight matrix is not positive definite") from exc
        self.entries = w
        self.factor = np.asarray(factor, dtype=float)
        self.dim = w.shape[0]
        self.entries.setflags(write=False)
        self.factor.setflags(write=False)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), factor=np.eye(n))

    @classmethod
    def diagonal(cls, d):
        d = np.asarray(d, dtype=float)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError("diagonal weights must be positive and finite")
        return cls(np.diag(d), factor=np.diag(np.sqrt(d)))

    @classmethod
    def from_factor(cls, r):
        """Build ``W = R^T R`` from a (possibly tall) full-column-rank ``R``.

        The triangular factor comes from a QR decomposition of ``R``, which is
        far better conditioned than a Cholesky factorization of ``R^T R``.
        """
        r = np.asarray(r, dtype=float)
        u = np.linalg.qr(r, mode="r")
        signs = np.sign(np.diag(u))
        signs[signs == 0] = 1.0
        u = signs[:, None] * u
        if np.any(np.abs(np.diag(u)) <= 1e-300):
            raise ValueError("factor is rank deficient")
        return cls(u.T @ u, factor=u)

    def norm(self, v):
        return float(np.linalg.norm(self.factor @ v))

    def inner(self, u, v):
        return float(np.dot(self.factor @ u, self.factor @ v))

    def scale(self, x):
        """Map to Euclidean coordinates: ``U x``."""
        return self.factor @ x

    def unscale(self, y):
        """Inverse of :meth:`scale`: ``U^{-1} y``."""
        return sla.solve_triangular(self.factor, y, lower=False)

    def __eq__(self, other):
        return isinstance(other, WeightMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        return f"WeightMatrix(dim={self.dim})"


def weighted_norm(W, v):
    """Return ``sqrt(v^T W v)``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (W.dim,):
        raise DimensionError(f"vector of shape {v.shape} does not match weight dim {W.dim}")
    return W.norm(v)


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box ``[lows, highs]`` with distinguished point at ``lows``."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        lows = tuple(float(x) for x in np.atleast_1d(self.lows))
        highs = tuple(float(x) for x in np.atleast_1d(self.highs))
        if len(lows) != len(highs) or len(lows) == 0:
            raise DimensionError("lows and highs must have equal positive length")
        if any(lo > hi for lo, hi in zip(lows, highs)):
            raise ValueError("lows must not exceed highs")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def m(self):
        return len(self.lows)

    @property
    def distinguished_zero(self):
        return np.array(self.lows)

    @property
    def is_trivial(self):
        return self.lows == self.highs

    def contains(self, eps, tol=1e-12):
        e = np.atleast_1d(np.asarray(eps, dtype=float))
        if e.shape != (self.m,):
            return False
        return all(lo - tol <= x <= hi + tol for x, lo, hi in zip(e.tolist(), self.lows, self.highs))

    def scaled(self, s):
        """Sub-box ``[lows, lows + s (highs - lows)]``."""
        lo = np.array(self.lows)
        return ParameterBox(tuple(lo), tuple(lo + s * (np.array(self.highs) - lo)))

    def scale_of(self, eps):
        """Smallest ``s`` with ``eps`` inside :meth:`scaled` (0 on trivial axes)."""
        lo = np.array(self.lows)
        width = np.array(self.highs) - lo
        e = np.atleast_1d(np.asarray(eps, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(width > 0, (e - lo) / np.where(width > 0, width, 1.0), 0.0)
        return float(max(s.max(initial=0.0), 0.0))

    def dyadic_path(self, levels, start=None):
        """Points ``start + 2^{-j} (highs - start)`` for ``j = 0..levels``."""
        base = np.array(self.lows) if start is None else np.asarray(start, dtype=float)
        top = np.array(self.highs)
        return [base + 2.0 ** (-j) * (top - base) for j in range(levels + 1)]

    def to_dict(self):
        return {"lows": list(self.lows), "highs": list(self.highs)}


class NormFamily:
    """Parameter-indexed weights defining ``|.|_eps`` with a separate ``|.|_0``."""

    def __init__(self, dim, weight_fn, weight_at_zero, zero, lower_bound_constant=1.0, cache=True):
        if lower_bound_constant < 1:
            raise ValueError("lower_bound_constant must be >= 1")
        if weight_at_zero.dim != dim:
            raise DimensionError("weight_at_zero has wrong dimension")
        self.dim = int(dim)
        self.weight_at_zero = weight_at_zero
        self.lower_bound_constant = float(lower_bound_constant)
        self._zero = tuple(float(x) for x in np.atleast_1d(zero))
        self._fn = weight_fn
        self._cached = lru_cache(maxsize=256)(self._build) if cache else self._build

    def _build(self, key):
        if key == self._zero:
            return self.weight_at_zero
        w = self._fn(np.array(key))
        if w.dim != self.dim:
            raise DimensionError("weight_at returned a matrix of the wrong dimension")
        return w

    def weight_at(self, eps):
        return self._cached(tuple(float(x) for x in np.atleast_1d(eps)))

    def norm(self, eps, v):
        return self.weight_at(eps).norm(v)

    def norm0(self, v):
        return self.weight_at_zero.norm(v)

    @classmethod
    def constant(cls, W, zero, lower_bound_constant=1.0):
        return cls(W.dim, lambda eps: W, W, zero, lower_bound_constant)


def exact_lower_bound_ratio(nf, eps):
    """Exact ``sup_v |v|_0 / |v|_eps`` (spectral norm of ``U_0 U_eps^{-1}``)."""
    u0 = nf.weight_at_zero.factor
    ue = nf.weight_at(eps).factor
    m = sla.solve_triangular(ue, u0.T, lower=False, trans="T").T
    return float(np.linalg.norm(m, 2))


def norm_lower_bound_audit(nf, eps_list, n_samples, seed=0):
    """Sampled check of ``|v|_0 <= C |v|_eps`` at each parameter point."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dirs = unit_directions(n_samples, nf.dim, seed)
    rows = []
    worst = 0.0
    for eps in eps_list:
        w = nf.weight_at(eps)
        num = np.linalg.norm(dirs @ nf.weight_at_zero.factor.T, axis=1)
        den = np.linalg.norm(dirs @ w.factor.T, axis=1)
        ratio = float(np.max(num / den))
        worst = max(worst, ratio)
        rows.append({"epsilon": list(np.atleast_1d(eps).astype(float)), "max_ratio": ratio,
                     "exact_sup": exact_lower_bound_ratio(nf, eps)})
    bound = nf.lower_bound_constant
    return AuditReport(
        name="norm_lower_bound",
        passed=bool(worst <= bound + 1e-9),
        value=worst,
        bound=bound,
        details={"per_epsilon": rows},
        plan={"n_samples": int(n_samples), "seed": int(seed)},
    )


@dataclass
class TangentVector:
    """Point of ``T^l V``: a base ``v_0`` and ``2^l - 1`` further vectors."""

    level: int
    base: np.ndarray
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")
        self.base = np.atleast_1d(np.asarray(self.base, dtype=float))
        self.entries = [np.atleast_1d(np.asarray(e, dtype=float)) for e in self.entries]
        if len(self.entries) != 2 ** self.level - 1:
            raise ValueError(f"level {self.level} needs {2 ** self.level - 1} entries, got {len(self.entries)}")
        for e in self.entries:
            if e.shape != self.base.shape:
                raise DimensionError("tangent entries must share the base dimension")

    @property
    def dim(self):
        return self.base.size

    def flat(self):
        """All ``2^l`` vectors ``[v_0, ..., v_N]``."""
        return [self.base] + list(self.entries)

    @classmethod
    def from_flat(cls, vectors):
        vectors = list(vectors)
        level = int(round(np.log2(len(vectors))))
        if 2 ** level != len(vectors):
            raise ValueError("number of vectors must be a power of two")
        return cls(level, vectors[0], vectors[1:])

    @classmethod
    def pair(cls, a, b):
        """Element ``(a, b)`` of ``T^{l+1} V = T^l V x T^l V``."""
        if a.level != b.level:
            raise ValueError("levels differ")
        return cls.from_flat(a.flat() + b.flat())

    def as_array(self):
        return np.concatenate(self.flat())


def tangent_norms(tv, W):
    """Return ``(sum_norm, fiber_norm)`` of a tangent vector under ``W``."""
    norms = []
    for v in tv.flat():
        norms.append(weighted_norm(W, v))
    return float(sum(norms)), float(max(norms[1:], default=0.0))


class ProductNorm:
    """Sum norm ``sum_i |U_i x_i|`` on a product of weighted blocks."""

    def __init__(self, blocks):
        self.blocks = [b for b in blocks]
        self.sizes = [b.dim if b is not None else 0 for b in self.blocks]
        self.dim = int(sum(self.sizes))
        self._scale = sla.block_diag(*[b.factor for b in self.blocks if b is not None]) if self.dim else np.zeros((0, 0))

    @classmethod
    def of(cls, *parts):
        """Blocks from weight matrices or integer sizes (Euclidean blocks)."""
        blocks = []
        for p in parts:
            if isinstance(p, WeightMatrix):
                blocks.append(p)
            elif int(p) > 0:
                blocks.append(WeightMatrix.identity(int(p)))
            else:
                blocks.append(None)
        return cls(blocks)

    @property
    def scale_matrix(self):
        return self._scale

    def split(self, x):
        out, i = [], 0
        for s in self.sizes:
            out.append(x[i:i + s])
            i += s
        return out

    def norm(self, x):
        total = 0.0
        for b, part in zip(self.blocks, self.split(np.asarray(x, dtype=float))):
            if b is not None:
                total += b.norm(part)
        return float(total)

    def conjugate(self, M, target):
        """``D_target M D_self^{-1}`` for ``M`` mapping this space to ``target``."""
        if self.dim == 0 or target.dim == 0:
            return np.zeros((target.dim, self.dim))
        left = target.scale_matrix @ M
        return sla.solve_triangular(self._scale, left.T, lower=False, trans="T").T


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


def _ascent(blocks, n_random=8):
    """Maximize ``sum_i |A_i x|`` over Euclidean unit ``x`` by monotone ascent.

    All starts (top singular vectors and random directions) iterate together;
    each stops once a step no longer increases the objective.
    """
    n = blocks[0].shape[1]
    A = np.vstack(blocks)
    sizes = [b.shape[0] for b in blocks]
    cuts = _offsets(sizes)[:-1]
    starts = [np.linalg.svd(a, full_matrices=False)[2][0] for a in blocks + [A]]
    rng = np.random.default_rng(12345)
    X = np.column_stack(starts + [rng.standard_normal(n) for _ in range(n_random)])
    X /= np.linalg.norm(X, axis=0)

    def parts(X):
        Y = A @ X
        return Y, np.sqrt(np.add.reduceat(Y * Y, cuts, axis=0))

    Y, ny = parts(X)
    val = ny.sum(axis=0)
    active = np.ones(X.shape[1], dtype=bool)
    for _ in range(500):
        if not active.any():
            break
        Ya, na = Y[:, active], ny[:, active]
        inv = np.where(na > 1e-300, 1.0 / np.where(na > 1e-300, na, 1.0), 0.0)
        grad = A.T @ (Ya * np.repeat(inv, sizes, axis=0))
        ng = np.linalg.norm(grad, axis=0)
        idx = np.flatnonzero(active)
        stop = ng == 0
        grad[:, ~stop] /= ng[~stop]
        Yn, nn = parts(grad)
        new = nn.sum(axis=0)
        better = (~stop) & (new > val[idx] * (1 + 1e-14))
        val[idx] = np.maximum(val[idx], np.where(stop, val[idx], new))
        moved = idx[better]
        X[:, moved], Y[:, moved], ny[:, moved] = grad[:, better], Yn[:, better], nn[:, better]
        active[idx[~better]] = False
    return float(val.max())


def block_norm(M, row_sizes, col_sizes, bound="ascent", n_random=8):
    """Operator norm of ``M`` from the column sum norm to the row sum norm.

    Both spaces are products of Euclidean blocks with the sum norm.  The norm is
    ``max_j sup_{|x|=1} sum_i |M_ij x|``.  With a single nonzero row block this
    is a spectral norm (exact).  Otherwise ``bound="ascent"`` maximizes the
    convex objective from several starts (a lower bound, exact in practice) and
    ``bound="upper"`` returns the rigorous bound ``max_j sum_i |M_ij|_2``.
    """
    M = np.asarray(M, dtype=float)
    ro, co = _offsets(row_sizes), _offsets(col_sizes)
    if M.shape != (ro[-1], co[-1]):
        raise DimensionError(f"matrix {M.shape} does not match blocks {(ro[-1], co[-1])}")
    best = 0.0
    for j in range(len(col_sizes)):
        if col_sizes[j] == 0:
            continue
        blocks = [M[ro[i]:ro[i + 1], co[j]:co[j + 1]] for i in range(len(row_sizes)) if row_sizes[i] > 0]
        blocks = [b for b in blocks if np.any(b)]
        if not blocks:
            continue
        norms = [np.linalg.norm(b, 2) for b in blocks]
        if len(blocks) == 1:
            val = norms[0]
        elif bound == "upper":
            val = float(sum(norms))
        else:
            val = min(_ascent(blocks, n_random), float(sum(norms)))
        best = max(best, float(val))
    return best


def operator_norm(M, domain, target, bound="ascent", n_random=8):
    """Norm of ``M`` between weighted spaces (:class:`ProductNorm` or :class:`WeightMatrix`)."""
    if isinstance(domain, WeightMatrix):
        domain = ProductNorm([domain])
    if isinstance(target, WeightMatrix):
        target = ProductNorm([target])
    mt = domain.conjugate(np.asarray(M, dtype=float), target)
    return block_norm(mt, target.sizes, domain.sizes, bound=bound, n_random=n_random)
