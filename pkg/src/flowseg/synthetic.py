"""Deterministic fixtures with known ground truth for oracle tests and the
`synth` subcommand."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import (
    FeatureMap,
    InvalidInputError,
    LabelMap,
    StochasticMatrix,
    row_normalize,
)


@dataclass(frozen=True)
class PlantedPartitionSpec:
    block_sizes: tuple
    within: float
    cross: float
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise InvalidInputError("block sizes must be positive integers")
        if sum(sizes) < 2:
            raise InvalidInputError("need at least 2 nodes")
        if not self.within > self.cross >= 0:
            raise InvalidInputError("require within > cross >= 0")
        if self.noise < 0:
            raise InvalidInputError("noise scale must be >= 0")
        object.__setattr__(self, "block_sizes", sizes)

    @property
    def n(self) -> int:
        return sum(self.block_sizes)


def gen_planted_graph(spec: PlantedPartitionSpec):
    """Symmetric planted-partition weights, row-normalized.

    Returns (StochasticMatrix, ground-truth block labels). Deterministic for
    a fixed seed; noise=0 and cross=0 gives an exactly block-diagonal matrix.
    """
    n = spec.n
    labels = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    same = labels[:, None] == labels[None, :]
    base = np.where(same, spec.within, spec.cross).astype(np.float64)
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        pert = rng.standard_normal((n, n)) * spec.noise
        base = base + (pert + pert.T) / 2.0
    weights = np.clip(base, 0.0, None)
    np.fill_diagonal(weights, spec.within)
    return row_normalize(weights), labels.astype(np.int64)


Layout = Union[str, np.ndarray]


def blob_layout(name: str, h: int, w: int) -> np.ndarray:
    """Named region layouts: 'halves' splits columns in two, 'quadrants'
    splits the grid into four."""
    if name == "halves":
        cols = (np.arange(w) >= w // 2).astype(np.int64)
        return np.broadcast_to(cols, (h, w)).copy()
    if name == "quadrants":
        rows = (np.arange(h) >= h // 2).astype(np.int64)
        cols = (np.arange(w) >= w // 2).astype(np.int64)
        return (rows[:, None] * 2 + cols[None, :]).astype(np.int64)
    raise InvalidInputError(f"unknown layout {name!r}")


def gen_blob_features(h: int, w: int, c: int, layout: Layout,
                      separation: float = 1.0, noise: float = 0.0,
                      seed: int = 0):
    """Feature map with one mean direction per region plus optional noise.

    Region means interpolate between a shared direction and mutually
    orthogonal unit axes; separation=1 makes them exactly orthogonal so
    inner-product and cosine affinities agree on the planted structure.
    Tokens are re-normalized to unit norm after noise is added.

    Returns (FeatureMap, ground-truth LabelMap).
    """
    if isinstance(layout, str):
        layout = blob_layout(layout, h, w)
    layout = np.asarray(layout, dtype=np.int64)
    if layout.shape != (h, w):
        raise InvalidInputError(f"layout shape {layout.shape} != ({h}, {w})")
    ids = np.unique(layout)
    if not np.array_equal(ids, np.arange(ids.size)):
        raise InvalidInputError("layout region ids must be 0..K-1")
    k = ids.size
    if not 0.0 < separation <= 1.0:
        raise InvalidInputError("separation must be in (0, 1]")
    if noise < 0:
        raise InvalidInputError("noise must be >= 0")
    if c < k:
        raise InvalidInputError(f"need channels >= regions ({k}), got {c}")

    shared = np.ones(c) / np.sqrt(c)
    means = np.zeros((k, c))
    for region in range(k):
        axis = np.zeros(c)
        axis[region] = 1.0
        v = (1.0 - separation) * shared + separation * axis
        means[region] = v / np.linalg.norm(v)

    rng = np.random.default_rng(seed)
    tokens = means[layout.reshape(-1)]
    if noise > 0:
        tokens = tokens + noise * rng.standard_normal(tokens.shape)
    tokens = tokens / np.linalg.norm(tokens, axis=1, keepdims=True)
    fmap = FeatureMap.from_tokens(tokens, h, w)
    return fmap, LabelMap(h, w, layout)
