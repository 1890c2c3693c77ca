"""Prototype assignment, code balancing, and the swapped-prediction loss.

Unit-norm features Z (N x d) are softly assigned to unit-norm prototypes
C (K x d) at temperature tau. Codes Q rebalance those assignments toward
uniform prototype usage via Sinkhorn scaling, get averaged within each
positive group, and serve as fixed targets in a cross-entropy loss whose
analytic gradients (tangent-projected for the unit-norm constraint) are
returned for both Z and C.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _check_unit_rows(m: np.ndarray, name: str, tol: float = 1e-5) -> None:
    norms = np.linalg.norm(m, axis=1)
    if not np.allclose(norms, 1.0, atol=tol):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ValidationError(f"{name} rows must be unit norm; row {worst} has norm {norms[worst]}")


def normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def soft_assign(z: np.ndarray, c: np.ndarray, tau: float = 0.1, dtype=np.float64) -> np.ndarray:
    """Row-stochastic softmax of z @ c.T / tau, with max subtraction."""
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    z = np.asarray(z, dtype=dtype)
    c = np.asarray(c, dtype=dtype)
    if z.shape[1] != c.shape[1]:
        raise ValidationError(f"dimension mismatch: features d={z.shape[1]}, prototypes d={c.shape[1]}")
    logits = z @ c.T / dtype(tau)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SinkhornInfo:
    iterations: int
    row_error: float
    col_error: float
    converged: bool


def sinkhorn_codes(
    p: np.ndarray,
    iters: int = 3,
    eps: float = 0.05,
    converge: bool = False,
    tol: float = 1e-9,
    max_iters: int = 100_000,
    return_info: bool = False,
    dtype=np.float64,
):
    """Balance assignments onto the transport polytope by row/col scaling.

    The kernel is P**(1/eps) (rows pre-scaled by their max for overflow
    safety; the row scaling is absorbed by the scaling vectors). Target
    marginals: every row sums to 1, every column to N/K. One iteration is
    a column pass followed by a row pass, so rows (the per-sample axis)
    are always exact on return and columns balance as iterations grow. In
    ``converge`` mode iterations continue until both marginal errors drop
    below ``tol``; the tight default makes the result a numerical fixed
    point of the scaling map.
    """
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    p = np.asarray(p, dtype=dtype)
    n, k = p.shape
    if (p <= 0).any():
        raise ValidationError("assignment matrix must be strictly positive")

    q = p / p.max(axis=1, keepdims=True)
    np.power(q, dtype(1.0 / eps), out=q)
    col_target = n / k

    limit = max_iters if converge else iters
    it = 0
    row_err = col_err = np.inf
    while it < limit:
        q *= col_target / q.sum(axis=0, keepdims=True)
        q /= q.sum(axis=1, keepdims=True)
        it += 1
        col_err = float(np.abs(q.sum(axis=0) - col_target).max())
        row_err = float(np.abs(q.sum(axis=1) - 1.0).max())
        if converge and row_err < tol and col_err < tol:
            break
    info = SinkhornInfo(
        iterations=it, row_error=row_err, col_error=col_err,
        converged=row_err < tol and col_err < tol,
    )
    return (q, info) if return_info else q


def _as_row_groups(groups) -> list[list[int]]:
    if hasattr(groups, "row_groups"):
        return groups.row_groups()
    return [list(g) for g in groups]


def group_average(q: np.ndarray, groups) -> np.ndarray:
    """Replace each grouped row by the mean over its group; others pass through."""
    q = np.asarray(q)
    if q.dtype not in (np.float32, np.float64):
        q = q.astype(np.float64)
    out = q.copy()
    for g in _as_row_groups(groups):
        if not g:
            continue
        idx = np.asarray(g, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= q.shape[0]:
            raise ValidationError(f"group indices out of range: {g}")
        out[idx] = q[idx].mean(axis=0)
    return out


def swap_loss(p: np.ndarray, q_bar: np.ndarray) -> float:
    """Mean cross-entropy between fixed targets q_bar and assignments p."""
    p = np.asarray(p)
    q_bar = np.asarray(q_bar)
    if p.dtype not in (np.float32, np.float64):
        p = p.astype(np.float64)
    if p.shape != q_bar.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {q_bar.shape}")
    if (p <= 0).any():
        raise ValidationError("assignments must be strictly positive (softmax output)")
    return float(-(q_bar * np.log(p)).sum(dtype=np.float64) / p.shape[0])


@dataclass
class LossGradients:
    loss: float
    grad_z: np.ndarray
    grad_c: np.ndarray
    q_bar: np.ndarray
    sinkhorn_info: SinkhornInfo | None = None


def loss_gradient(
    z: np.ndarray,
    c: np.ndarray,
    groups,
    tau: float = 0.1,
    sinkhorn_iters: int = 3,
    sinkhorn_eps: float = 0.05,
    q_bar: np.ndarray | None = None,
    dtype=np.float64,
) -> LossGradients:
    """Loss plus analytic gradients for features and prototypes.

    The group-averaged codes are treated as constants (no gradient flows
    through the balancing), and each gradient row is projected onto the
    tangent space of its unit-norm row: g <- g - (g . v) v. Pass
    ``dtype=np.float32`` for the throughput path; tolerances are quoted
    for the 64-bit default.
    """
    z = np.asarray(z, dtype=dtype)
    c = np.asarray(c, dtype=dtype)
    _check_unit_rows(z, "features")
    _check_unit_rows(c, "prototypes")
    p = soft_assign(z, c, tau, dtype=dtype)
    info = None
    if q_bar is None:
        q, info = sinkhorn_codes(
            p, iters=sinkhorn_iters, eps=sinkhorn_eps, return_info=True, dtype=dtype
        )
        q_bar = group_average(q, groups)
        del q
    loss = swap_loss(p, q_bar)

    n = z.shape[0]
    # Row masses of the target are 1 up to the balancing tolerance; keeping
    # the exact factor makes the gradient consistent for any fixed target.
    row_mass = q_bar.sum(axis=1, keepdims=True)
    g_logits = p * row_mass
    g_logits -= q_bar
    g_logits /= dtype(n * tau)
    grad_z = g_logits @ c
    grad_c = g_logits.T @ z
    grad_z -= (np.sum(grad_z * z, axis=1, keepdims=True)) * z
    grad_c -= (np.sum(grad_c * c, axis=1, keepdims=True)) * c
    return LossGradients(
        loss=loss, grad_z=grad_z, grad_c=grad_c, q_bar=q_bar, sinkhorn_info=info
    )


def combined_loss(l_pixel: float, l_region: float, lam: float) -> float:
    """Convex combination lam * pixel + (1 - lam) * region."""
    if not (0.0 <= lam <= 1.0):
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    return lam * l_pixel + (1.0 - lam) * l_region


def agglomerate(c: np.ndarray, target_classes: int) -> np.ndarray:
    """Average-linkage agglomerative clustering under cosine distance.

    Returns a (K,) array mapping prototype id to class id, ids contiguous
    and ordered by each cluster's smallest member. Distance ties break
    toward the lowest cluster id pair.
    """
    c = np.asarray(c, dtype=np.float64)
    k = c.shape[0]
    if not (1 <= target_classes <= k):
        raise ValidationError(f"target_classes must lie in [1, {k}], got {target_classes}")
    cn = normalize_rows(c)
    dist = 1.0 - cn @ cn.T
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(k)
    alive = np.ones(k, dtype=bool)
    member_of = np.arange(k)

    for _ in range(k - target_classes):
        masked = np.where(alive[:, None] & alive[None, :], dist, np.inf)
        a, b = np.unravel_index(int(np.argmin(masked)), masked.shape)
        if b < a:
            a, b = b, a
        # Average linkage: weighted mean of the two merged rows.
        new_row = (sizes[a] * dist[a] + sizes[b] * dist[b]) / (sizes[a] + sizes[b])
        dist[a, :] = new_row
        dist[:, a] = new_row
        dist[a, a] = np.inf
        dist[b, :] = np.inf
        dist[:, b] = np.inf
        sizes[a] += sizes[b]
        alive[b] = False
        member_of[member_of == b] = a

    remap = {}
    out = np.empty(k, dtype=np.int64)
    for i in range(k):
        root = int(member_of[i])
        if root not in remap:
            remap[root] = len(remap)
        out[i] = remap[root]
    return out


def pca_rgb(features: np.ndarray) -> np.ndarray:
    """Top-3 principal components of an (H, W, d) feature map as uint8 RGB.

    Component signs are fixed (largest-magnitude loading positive) and each
    channel is min-max scaled to [0, 255]; zero-variance channels render as
    mid-gray 128.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] < 3:
        raise ValidationError("features must be (H, W, d) with d >= 3")
    h, w, d = features.shape
    flat = features.reshape(-1, d)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / max(1, flat.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:3]
    out = np.full((h * w, 3), 128, dtype=np.uint8)
    rank = int(np.sum(evals > max(evals.max(), 0.0) * 1e-12)) if evals.max() > 0 else 0
    if rank < 3:
        warnings.warn(f"feature covariance rank {rank} < 3; deficient channels render mid-gray")
    for ch, comp_idx in enumerate(order):
        if evals[comp_idx] <= 0 or (evals.max() > 0 and evals[comp_idx] < evals.max() * 1e-12):
            continue
        vec = evecs[:, comp_idx]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        proj = centered @ vec
        lo, hi = proj.min(), proj.max()
        if hi - lo < 1e-12:
            continue
        out[:, ch] = np.round((proj - lo) / (hi - lo) * 255).astype(np.uint8)
    return out.reshape(h, w, 3)
