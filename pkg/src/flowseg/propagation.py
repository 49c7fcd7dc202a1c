"""Seeded random-walk label propagation and label-map utilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    InvalidInputError,
    LabelMap,
    SegmentationConfig,
    StochasticMatrix,
)
from .markov_flow import ClusterAssignment

DIRECT_SOLVE_LIMIT = 2048


@dataclass(frozen=True)
class SeedMatrix:
    """One-hot node-to-cluster assignment; already row-stochastic."""

    q0: np.ndarray  # (N, K)

    def __post_init__(self):
        q = np.asarray(self.q0, dtype=np.float64)
        if q.ndim != 2:
            raise InvalidInputError("seed matrix must be 2-D")
        ones = np.count_nonzero(q == 1.0, axis=1)
        if not (np.all(ones == 1) and np.all((q == 0.0) | (q == 1.0))):
            raise InvalidInputError("each seed row must be one-hot")
        object.__setattr__(self, "q0", q)

    @classmethod
    def from_clusters(cls, clusters: ClusterAssignment) -> "SeedMatrix":
        n = clusters.labels.size
        k = clusters.num_clusters
        q0 = np.zeros((n, k))
        q0[np.arange(n), clusters.labels] = 1.0
        return cls(q0)

    @property
    def n(self) -> int:
        return self.q0.shape[0]

    @property
    def k(self) -> int:
        return self.q0.shape[1]


@dataclass(frozen=True)
class PropagationResult:
    q: np.ndarray                  # (N, K) converged scores
    iterations: int
    residual: float
    converged: bool
    labels: np.ndarray             # (N,) argmax with lowest-index tie-break
    residual_history: tuple        # per-iteration max-norm deltas
    balance_residual: float        # || (I - gamma S) Q* - (1 - gamma) Q0 ||_inf


def _spmul(s: StochasticMatrix, q: np.ndarray) -> np.ndarray:
    return np.asarray(s.data @ q)


def propagate(s: StochasticMatrix, seeds: SeedMatrix,
              cfg: SegmentationConfig) -> PropagationResult:
    """Iterate Q <- (1-gamma) Q0 + gamma S Q from Q0 until the max-norm delta
    falls below prop_tol.

    The update is an affine gamma-contraction in the max norm, so convergence
    is guaranteed; max_prop_iters only guards misconfiguration.
    """
    if s.n != seeds.n:
        raise InvalidInputError(f"dimension mismatch: {s.n} vs {seeds.n}")
    gamma = cfg.gamma
    q0 = seeds.q0
    q = q0
    history = []
    converged = False
    iterations = 0
    for t in range(1, cfg.max_prop_iters + 1):
        q_next = (1.0 - gamma) * q0 + gamma * _spmul(s, q)
        delta = float(np.max(np.abs(q_next - q)))
        history.append(delta)
        q = q_next
        iterations = t
        if delta < cfg.prop_tol:
            converged = True
            break
    balance = float(np.max(np.abs(
        (q - gamma * _spmul(s, q)) - (1.0 - gamma) * q0)))
    labels = q.argmax(axis=1).astype(np.int64)
    return PropagationResult(q=q, iterations=iterations,
                             residual=history[-1] if history else 0.0,
                             converged=converged, labels=labels,
                             residual_history=tuple(history),
                             balance_residual=balance)


def direct_solve(s: StochasticMatrix, seeds: SeedMatrix,
                 gamma: float) -> np.ndarray:
    """Dense solve of (I - gamma S) Q = (1 - gamma) Q0; the test oracle for
    the iterative path. Restricted to small N."""
    if s.n > DIRECT_SOLVE_LIMIT:
        raise InvalidInputError(
            f"direct solve limited to N <= {DIRECT_SOLVE_LIMIT}")
    if not 0.0 < gamma < 1.0:
        raise InvalidInputError("gamma must be in (0, 1)")
    a = np.eye(s.n) - gamma * s.to_dense()
    return np.linalg.solve(a, (1.0 - gamma) * seeds.q0)


def labels_from(result: PropagationResult, h: int, w: int) -> LabelMap:
    """Reshape per-node argmax labels to the grid."""
    if result.labels.size != h * w:
        raise InvalidInputError(
            f"{result.labels.size} labels cannot fill a {h}x{w} grid")
    return LabelMap(h, w, result.labels.reshape(h, w))


def upsample_labels(lm: LabelMap, target_h: int, target_w: int) -> LabelMap:
    """Nearest-neighbor upsampling: target pixel (y, x) takes the label of
    (floor(y*H/target_h), floor(x*W/target_w))."""
    if target_h < lm.height or target_w < lm.width:
        raise InvalidInputError("target size must be >= source size")
    ys = (np.arange(target_h) * lm.height) // target_h
    xs = (np.arange(target_w) * lm.width) // target_w
    return LabelMap(target_h, target_w, lm.labels[np.ix_(ys, xs)])
