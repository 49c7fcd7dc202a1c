"""Shared domain types and the row-stochastic matrix abstraction.

Matrices are immutable after construction: every operation returns a new
matrix and never mutates its inputs, so values are safe to share across
threads for reading.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

ROW_SUM_ATOL = 1e-9
# Dense N=4096 costs ~64 MB per float64 matrix; above that we go sparse.
DENSE_AUTO_LIMIT = 4096

Matrix = Union[np.ndarray, sp.csr_matrix]


class InvalidInputError(ValueError):
    """A value violates a construction precondition (negative, non-finite,
    wrong shape, out-of-range parameter)."""


def _raw(m) -> Matrix:
    return m.data if isinstance(m, StochasticMatrix) else m


def _check_nonneg_finite(m: Matrix, what: str = "matrix") -> None:
    vals = m.data if sp.issparse(m) else np.asarray(m)
    if vals.size and not np.all(np.isfinite(vals)):
        raise InvalidInputError(f"{what} contains NaN or Inf")
    if vals.size and np.min(vals) < 0:
        raise InvalidInputError(f"{what} contains negative entries")


@dataclass(frozen=True)
class FeatureMap:
    """H x W grid of C-dimensional token features, all values finite."""

    height: int
    width: int
    channels: int
    data: np.ndarray  # (H, W, C) float64, row-major

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise InvalidInputError("FeatureMap dimensions must be positive")
        if self.height * self.width < 2:
            raise InvalidInputError("FeatureMap needs at least 2 tokens")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != (self.height, self.width, self.channels):
            raise InvalidInputError(
                f"feature data shape {arr.shape} does not match "
                f"({self.height}, {self.width}, {self.channels})"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("feature data contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.height * self.width

    def tokens(self) -> np.ndarray:
        """Flattened (N, C) view; row i is token X_i in row-major grid order."""
        return self.data.reshape(self.n, self.channels)

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, height: int, width: int) -> "FeatureMap":
        tokens = np.asarray(tokens, dtype=np.float64)
        return cls(height, width, tokens.shape[1],
                   tokens.reshape(height, width, tokens.shape[1]))


@dataclass(frozen=True)
class StochasticMatrix:
    """N x N nonnegative matrix with unit row sums.

    Backed by either a dense ndarray or a CSR matrix with sorted, duplicate-free
    column indices and no stored zeros.
    """

    data: Matrix

    def __post_init__(self):
        m = self.data
        if sp.issparse(m):
            m = m.tocsr()
            m.sum_duplicates()
            m.eliminate_zeros()
            m.sort_indices()
            object.__setattr__(self, "data", m)
        else:
            m = np.asarray(m, dtype=np.float64)
            object.__setattr__(self, "data", m)
        if m.shape[0] != m.shape[1]:
            raise InvalidInputError(f"expected square matrix, got {m.shape}")
        _check_nonneg_finite(m, "stochastic matrix")
        sums = self.row_sums()
        if not np.allclose(sums, 1.0, rtol=0.0, atol=1e-8):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise InvalidInputError(f"rows must sum to 1 (worst deviation {worst:g})")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def storage(self) -> str:
        return "sparse" if sp.issparse(self.data) else "dense"

    @property
    def nnz(self) -> int:
        if sp.issparse(self.data):
            return self.data.nnz
        return int(np.count_nonzero(self.data))

    def row_sums(self) -> np.ndarray:
        if sp.issparse(self.data):
            return np.asarray(self.data.sum(axis=1)).ravel()
        return self.data.sum(axis=1)

    def to_dense(self) -> np.ndarray:
        if sp.issparse(self.data):
            return self.data.toarray()
        return self.data.copy()

    def with_storage(self, storage: str) -> "StochasticMatrix":
        if storage == self.storage:
            return self
        if storage == "dense":
            return StochasticMatrix(self.data.toarray())
        return StochasticMatrix(sp.csr_matrix(self.data))

    @classmethod
    def identity(cls, n: int, storage: str = "dense") -> "StochasticMatrix":
        if storage == "sparse":
            return cls(sp.identity(n, format="csr"))
        return cls(np.eye(n))


def resolve_storage(n: int, mode: str) -> str:
    """Map a configured storage mode to a concrete one for node count n."""
    if mode == "auto":
        return "dense" if n <= DENSE_AUTO_LIMIT else "sparse"
    return mode


def row_normalize(m, storage: Optional[str] = None) -> StochasticMatrix:
    """Scale each row to unit sum; all-zero rows become identity rows
    (self-loop) so the chain stays well-defined."""
    if isinstance(m, StochasticMatrix):
        storage = storage or m.storage
        m = m.data
    if sp.issparse(m):
        mat = m.tocsr().astype(np.float64)
        _check_nonneg_finite(mat)
        sums = np.asarray(mat.sum(axis=1)).ravel()
        zero = sums <= 0.0
        inv = np.where(zero, 1.0, 1.0 / np.where(zero, 1.0, sums))
        mat = sp.diags(inv).tocsr() @ mat
        if zero.any():
            idx = np.flatnonzero(zero)
            loops = sp.csr_matrix(
                (np.ones(idx.size), (idx, idx)), shape=mat.shape
            )
            mat = mat + loops
        out = StochasticMatrix(mat)
    else:
        mat = np.asarray(m, dtype=np.float64)
        _check_nonneg_finite(mat)
        sums = mat.sum(axis=1)
        zero = sums <= 0.0
        safe = np.where(zero, 1.0, sums)
        mat = mat / safe[:, None]
        if zero.any():
            mat = mat.copy()
            idx = np.flatnonzero(zero)
            mat[idx, :] = 0.0
            mat[idx, idx] = 1.0
        out = StochasticMatrix(mat)
    if storage is not None and storage != "auto":
        out = out.with_storage(storage)
    return out


def matmul(a: StochasticMatrix, b: StochasticMatrix) -> StochasticMatrix:
    """Product of two row-stochastic matrices (itself row-stochastic)."""
    if a.n != b.n:
        raise InvalidInputError(f"dimension mismatch: {a.n} vs {b.n}")
    if a.storage == "sparse" or b.storage == "sparse":
        prod = sp.csr_matrix(a.data) @ sp.csr_matrix(b.data)
    else:
        prod = a.data @ b.data
    return StochasticMatrix(prod)


def residual_inf(a, b) -> float:
    """Entrywise max absolute difference over the union sparsity pattern."""
    ra, rb = _raw(a), _raw(b)
    if sp.issparse(ra) or sp.issparse(rb):
        d = sp.csr_matrix(ra) - sp.csr_matrix(rb)
        return float(np.abs(d.data).max()) if d.nnz else 0.0
    return float(np.max(np.abs(ra - rb))) if ra.size else 0.0


@dataclass(frozen=True)
class LabelMap:
    """Grid of nonnegative integer labels."""

    height: int
    width: int
    labels: np.ndarray  # (H, W) int64

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise InvalidInputError("labels must be integers")
        arr = arr.astype(np.int64)
        if arr.shape != (self.height, self.width):
            raise InvalidInputError(
                f"label shape {arr.shape} != ({self.height}, {self.width})"
            )
        if arr.size and arr.min() < 0:
            raise InvalidInputError("labels must be nonnegative")
        object.__setattr__(self, "labels", arr)

    @property
    def num_labels(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def compact(self) -> "LabelMap":
        """Remap label ids to the contiguous range 0..K-1, order-preserving."""
        uniq, inv = np.unique(self.labels, return_inverse=True)
        return LabelMap(self.height, self.width,
                        inv.reshape(self.labels.shape).astype(np.int64))


_DEFAULTS = dict(
    beta=0.6,
    expansion_l=2,
    inflation_r=2.6,
    prune_tau=1e-7,
    affinity_floor=1e-6,
    flow_tol=1e-6,
    max_flow_iters=200,
    gamma=0.9,
    prop_tol=1e-6,
    max_prop_iters=500,
    storage_mode="auto",
    topk_cap=None,
)


@dataclass(frozen=True)
class SegmentationConfig:
    """All pipeline parameters; range violations are rejected at construction.

    prune_tau=0 is accepted as a sentinel meaning "pruning disabled", used by
    the diagnostics to isolate the effect of pruning.
    """

    beta: float = _DEFAULTS["beta"]
    expansion_l: int = _DEFAULTS["expansion_l"]
    inflation_r: float = _DEFAULTS["inflation_r"]
    prune_tau: float = _DEFAULTS["prune_tau"]
    affinity_floor: float = _DEFAULTS["affinity_floor"]
    flow_tol: float = _DEFAULTS["flow_tol"]
    max_flow_iters: int = _DEFAULTS["max_flow_iters"]
    gamma: float = _DEFAULTS["gamma"]
    prop_tol: float = _DEFAULTS["prop_tol"]
    max_prop_iters: int = _DEFAULTS["max_prop_iters"]
    storage_mode: str = _DEFAULTS["storage_mode"]
    topk_cap: Optional[int] = _DEFAULTS["topk_cap"]

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError(f"beta must be in [0, 1], got {self.beta}")
        if self.expansion_l < 1 or int(self.expansion_l) != self.expansion_l:
            raise InvalidInputError("expansion_l must be a positive integer")
        if self.inflation_r <= 1.0:
            raise InvalidInputError("inflation_r must be > 1")
        if self.prune_tau < 0.0:
            raise InvalidInputError("prune_tau must be >= 0 (0 disables pruning)")
        if self.affinity_floor <= 0.0:
            raise InvalidInputError("affinity_floor must be > 0")
        if self.flow_tol <= 0.0 or self.prop_tol <= 0.0:
            raise InvalidInputError("tolerances must be > 0")
        if self.max_flow_iters < 1 or self.max_prop_iters < 1:
            raise InvalidInputError("iteration caps must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.storage_mode not in ("dense", "sparse", "auto"):
            raise InvalidInputError(f"unknown storage_mode {self.storage_mode!r}")
        if self.topk_cap is not None and self.topk_cap < 8:
            raise InvalidInputError("topk_cap must be >= 8 or absent")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def updated(self, **overrides) -> "SegmentationConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides)
