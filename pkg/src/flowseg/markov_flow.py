"""Expand-inflate-prune-normalize flow iteration and attractor clustering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .core import (
    InvalidInputError,
    Matrix,
    SegmentationConfig,
    StochasticMatrix,
    matmul,
    residual_inf,
    row_normalize,
    _check_nonneg_finite,
    _raw,
)

TraceSink = Callable[[dict], None]


@dataclass(frozen=True)
class ClusterAssignment:
    """Node-to-cluster map plus the attractor column backing each cluster."""

    labels: np.ndarray          # (N,) cluster index in 0..K-1
    attractor_columns: np.ndarray  # (K,) ascending column indices

    @property
    def num_clusters(self) -> int:
        return int(self.attractor_columns.size)


@dataclass(frozen=True)
class FlowResult:
    fixpoint: StochasticMatrix
    iterations: int
    residual: float
    converged: bool
    clusters: ClusterAssignment

    @property
    def num_clusters(self) -> int:
        return self.clusters.num_clusters


def keep_topk(m: sp.csr_matrix, k: int) -> sp.csr_matrix:
    """Retain only the k largest stored entries per row."""
    m = m.tocsr()
    keep = np.zeros(m.nnz, dtype=bool)
    for i in range(m.shape[0]):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        if hi - lo <= k:
            keep[lo:hi] = True
        else:
            order = np.argpartition(m.data[lo:hi], -k)[-k:]
            keep[lo + order] = True
    coo = m.tocoo()  # same data ordering as the CSR arrays
    out = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])),
                        shape=m.shape)
    out.sort_indices()
    return out


def expand(p: StochasticMatrix, l: int,
           topk_cap: Optional[int] = None) -> StochasticMatrix:
    """l-step transition P^l via repeated multiplication.

    In sparse mode an optional top-k cap is applied after each multiply to
    bound fill-in.
    """
    if l < 1:
        raise InvalidInputError("expansion exponent must be >= 1")
    out = p
    for _ in range(l - 1):
        out = matmul(out, p)
        if topk_cap is not None and out.storage == "sparse":
            capped = keep_topk(out.data, topk_cap)
            out = row_normalize(capped, storage="sparse")
    return out


def inflate(p: Matrix, r: float) -> Matrix:
    """Entrywise r-th power, not yet normalized. r = 1 acts as identity."""
    if r < 1.0:
        raise InvalidInputError("inflation exponent must be >= 1")
    _check_nonneg_finite(p, "inflation input")
    if sp.issparse(p):
        out = p.tocsr().copy()
        out.data = out.data ** r
        return out
    return np.asarray(p, dtype=np.float64) ** r


def prune(p: Matrix, tau: float) -> Matrix:
    """Zero entries strictly below tau; entries >= tau are kept unchanged.

    tau = 0 disables pruning (diagnostic sentinel)."""
    if tau < 0:
        raise InvalidInputError("prune threshold must be >= 0")
    if tau == 0:
        return p.copy() if sp.issparse(p) else np.array(p, dtype=np.float64)
    if sp.issparse(p):
        out = p.tocsr().copy()
        out.data[out.data < tau] = 0.0
        out.eliminate_zeros()
        return out
    out = np.array(p, dtype=np.float64)
    out[out < tau] = 0.0
    return out


def flow_step(p: StochasticMatrix, cfg: SegmentationConfig) -> StochasticMatrix:
    """One update: expand, inflate, prune, row-normalize, in that order."""
    expanded = expand(p, cfg.expansion_l, topk_cap=cfg.topk_cap)
    inflated = inflate(_raw(expanded), cfg.inflation_r)
    pruned = prune(inflated, cfg.prune_tau)
    return row_normalize(pruned, storage=p.storage)


def extract_clusters(pstar: StochasticMatrix,
                     merge_attractor_systems: bool = False) -> ClusterAssignment:
    """Read clusters off the fixpoint.

    Attractors are the columns retaining any positive mass; each node joins
    the attractor achieving its row maximum (lowest column index on ties).
    Attractor columns that are nobody's argmax are dropped and ids compacted.
    """
    n = pstar.n
    if pstar.storage == "sparse":
        m = pstar.data
        argmax = np.empty(n, dtype=np.int64)
        for i in range(n):
            lo, hi = m.indptr[i], m.indptr[i + 1]
            # rows are normalized, so each has at least one stored entry;
            # argmax on column-sorted data picks the lowest column on ties
            argmax[i] = m.indices[lo + int(np.argmax(m.data[lo:hi]))]
        nonzero_cols = np.unique(m.indices)
    else:
        d = pstar.data
        argmax = d.argmax(axis=1)
        nonzero_cols = np.flatnonzero((d > 0).any(axis=0))

    attractors = np.intersect1d(np.unique(argmax), nonzero_cols)
    if merge_attractor_systems:
        attractors, argmax = _merge_systems(pstar, attractors, argmax)
    labels = np.searchsorted(attractors, argmax)
    return ClusterAssignment(labels=labels.astype(np.int64),
                             attractor_columns=attractors.astype(np.int64))


def _merge_systems(pstar: StochasticMatrix, attractors: np.ndarray,
                   argmax: np.ndarray):
    """Union attractors whose columns co-occur in some row's support
    (classical overlapping-attractor-system merge, off by default)."""
    pos = {int(c): k for k, c in enumerate(attractors)}
    parent = list(range(len(attractors)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    m = sp.csr_matrix(pstar.data)
    for i in range(pstar.n):
        cols = [pos[c] for c in m.indices[m.indptr[i]:m.indptr[i + 1]]
                if c in pos]
        for other in cols[1:]:
            union(cols[0], other)
    root = np.array([find(pos[int(argmax[i])]) if int(argmax[i]) in pos
                     else pos[int(argmax[i])] for i in range(len(argmax))])
    # representative column of each merged system = lowest member column
    reps = np.unique([attractors[find(k)] for k in range(len(attractors))])
    new_argmax = attractors[root]
    return reps, new_argmax


def iterate_to_fixpoint(p0: StochasticMatrix, cfg: SegmentationConfig,
                        trace: Optional[TraceSink] = None) -> FlowResult:
    """Apply flow_step until the max-norm residual drops below flow_tol or
    max_flow_iters is reached. Non-convergence is reported, not raised."""
    current = p0
    residual = float("inf")
    converged = False
    iterations = 0
    for t in range(1, cfg.max_flow_iters + 1):
        nxt = flow_step(current, cfg)
        residual = residual_inf(nxt, current)
        current = nxt
        iterations = t
        if trace is not None:
            k_so_far = int(np.unique(
                current.to_dense().argmax(axis=1)).size) \
                if current.storage == "dense" else \
                extract_clusters(current).num_clusters
            trace({"iteration": t, "residual": residual,
                   "nnz": current.nnz, "clusters_so_far": k_so_far})
        if residual < cfg.flow_tol:
            converged = True
            break
    clusters = extract_clusters(current)
    return FlowResult(fixpoint=current, iterations=iterations,
                      residual=residual, converged=converged,
                      clusters=clusters)
