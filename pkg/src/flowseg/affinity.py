"""Global, local, and fused row-stochastic affinity construction.

Negative inner products and cosines are clamped to 0 before normalization:
row normalization of signed rows is undefined and affinities are meant to be
nonnegative weights.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import (
    FeatureMap,
    InvalidInputError,
    StochasticMatrix,
    SegmentationConfig,
    resolve_storage,
    row_normalize,
)

# 8-connected neighborhood; out-of-grid neighbors are absent, not wrapped.
NEIGHBOR_OFFSETS = tuple(
    (dh, dw) for dh in (-1, 0, 1) for dw in (-1, 0, 1) if (dh, dw) != (0, 0)
)


def global_affinity(f: FeatureMap) -> np.ndarray:
    """Pairwise token inner products, clamped at zero.

    Symmetric by construction (computed once as X X^T); diagonal entries are
    the clamped squared norms.
    """
    x = f.tokens()
    a = x @ x.T
    a = np.maximum(a, 0.0)
    # X X^T can pick up asymmetric rounding at 1 ulp; enforce exact symmetry.
    a = np.minimum(a, a.T)
    return a


def neighbor_pairs(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """All directed (i, j) pairs with j in the 8-neighborhood of i, for a
    row-major h x w grid."""
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src = []
    dst = []
    for dh, dw in NEIGHBOR_OFFSETS:
        rr, cc = rows + dh, cols + dw
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        src.append((rows[valid] * w + cols[valid]).ravel())
        dst.append((rr[valid] * w + cc[valid]).ravel())
    return np.concatenate(src), np.concatenate(dst)


def local_affinity(f: FeatureMap, floor: float) -> sp.csr_matrix:
    """Sparse cosine-similarity graph over the 8-connected neighborhood.

    Diagonal is 1; neighbor entries are max(0, cos) + floor; zero-norm tokens
    use cos = 0 by convention so the floor keeps their row valid.
    """
    if floor <= 0:
        raise InvalidInputError("affinity floor must be > 0")
    x = f.tokens()
    norms = np.linalg.norm(x, axis=1)
    src, dst = neighbor_pairs(f.height, f.width)
    dots = np.einsum("ij,ij->i", x[src], x[dst])
    denom = norms[src] * norms[dst]
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    vals = np.maximum(cos, 0.0) + floor
    n = f.n
    diag = sp.identity(n, format="csr")
    neigh = sp.csr_matrix((vals, (src, dst)), shape=(n, n))
    out = (diag + neigh).tocsr()
    out.sort_indices()
    return out


def fuse(global_s: StochasticMatrix, local_s: StochasticMatrix,
         beta: float) -> StochasticMatrix:
    """Convex combination beta * S_global + (1 - beta) * S_local."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must be in [0, 1], got {beta}")
    if global_s.n != local_s.n:
        raise InvalidInputError(
            f"dimension mismatch: {global_s.n} vs {local_s.n}")
    if global_s.storage == "sparse" or local_s.storage == "sparse":
        fused = beta * sp.csr_matrix(global_s.data) \
            + (1.0 - beta) * sp.csr_matrix(local_s.data)
    else:
        fused = beta * global_s.data + (1.0 - beta) * local_s.data
    return StochasticMatrix(fused)


def build_transition(f: FeatureMap, cfg: SegmentationConfig) -> StochasticMatrix:
    """Fused transition matrix: normalize both affinities, then blend."""
    storage = resolve_storage(f.n, cfg.storage_mode)
    s_global = row_normalize(global_affinity(f), storage=storage)
    s_local = row_normalize(local_affinity(f, cfg.affinity_floor),
                            storage=storage)
    return fuse(s_global, s_local, cfg.beta)
