"""Hilbert projective metric measurements for the flow operator.

The suite asserts only analytically true statements (metric axioms, scale
invariance, non-expansiveness of positive linear maps, the exact r-scaling of
the entrywise power). The contraction behaviour of the composite flow operator
is *measured* and reported, never asserted: the entrywise r-th power scales
the projective metric by exactly r, so on its own it is expansive, and the
tanh(log r / 4) value is carried along purely for comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InvalidInputError, SegmentationConfig, StochasticMatrix, residual_inf
from .markov_flow import flow_step

DIAMETER_NOTE = (
    "note: the entrywise power x -> x^r scales the projective metric by "
    "exactly r for every positive pair, so the inflation map alone is "
    "expansive with unbounded projective diameter; the tanh(log r / 4) "
    "figure is reported for reference only and is not asserted against "
    "the measured composite ratios."
)


def hilbert_metric(x: np.ndarray, y: np.ndarray) -> float:
    """log(max_i x_i/y_i / min_i x_i/y_i) for strictly positive vectors.

    Zero iff x and y are proportional; scale-invariant in both arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("vectors must be 1-D with equal length")
    if x.size == 0 or np.min(x) <= 0 or np.min(y) <= 0:
        raise InvalidInputError("components must be strictly positive")
    ratios = np.log(x) - np.log(y)
    return float(ratios.max() - ratios.min())


def _metric_or_inf(x: np.ndarray, y: np.ndarray) -> float:
    """hilbert_metric extended with the +inf convention on the cone boundary
    (any zero component), which pruning makes the common case."""
    if x.size == 0 or min(x.min(), y.min()) <= 0:
        return math.inf
    return hilbert_metric(x, y)


def birkhoff_bound(r: float) -> float:
    """tanh(log(r) / 4), the classical contraction figure for a map of
    projective diameter log r."""
    if r <= 1.0:
        raise InvalidInputError("r must be > 1")
    return math.tanh(math.log(r) / 4.0)


def _sample_positive(rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.uniform(0.1, 2.0, size=dim)


@dataclass(frozen=True)
class NonexpansivenessResult:
    trials: int
    max_ratio: float        # max d_H(Ax, Ay) / d_H(x, y) over sampled pairs
    violations: int         # pairs with d_H(Ax, Ay) > d_H(x, y) + 1e-9

    def to_dict(self) -> dict:
        return {"trials": self.trials, "max_ratio": self.max_ratio,
                "violations": self.violations}


def measure_linear_nonexpansiveness(a: np.ndarray, trials: int,
                                    rng_seed: int = 0) -> NonexpansivenessResult:
    """Sample positive pairs and check d_H(Ax, Ay) <= d_H(x, y) for a strictly
    positive linear map A."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError("matrix must be square")
    if np.min(a) <= 0:
        raise InvalidInputError("matrix must be strictly positive")
    rng = np.random.default_rng(rng_seed)
    dim = a.shape[0]
    max_ratio = 0.0
    violations = 0
    done = 0
    while done < trials:
        x = _sample_positive(rng, dim)
        y = _sample_positive(rng, dim)
        before = hilbert_metric(x, y)
        if before == 0.0:
            continue
        after = hilbert_metric(a @ x, a @ y)
        if after > before + 1e-9:
            violations += 1
        max_ratio = max(max_ratio, after / before)
        done += 1
    return NonexpansivenessResult(trials=trials, max_ratio=max_ratio,
                                  violations=violations)


@dataclass(frozen=True)
class InflationScalingResult:
    r: float
    pairs: int
    min_ratio: float
    max_ratio: float
    mean_ratio: float

    def to_dict(self) -> dict:
        return {"r": self.r, "pairs": self.pairs, "min_ratio": self.min_ratio,
                "max_ratio": self.max_ratio, "mean_ratio": self.mean_ratio}


def measure_inflation_scaling(r: float, trials: int, rng_seed: int = 0,
                              dim: int = 8) -> InflationScalingResult:
    """Measure d_H(x^r, y^r) / d_H(x, y) over sampled positive pairs.

    Componentwise ratios are raised to the r-th power, so the ratio is r for
    every non-proportional pair; proportional pairs (both distances 0) are
    skipped.
    """
    if r <= 1.0:
        raise InvalidInputError("r must be > 1")
    rng = np.random.default_rng(rng_seed)
    ratios = []
    while len(ratios) < trials:
        x = _sample_positive(rng, dim)
        y = _sample_positive(rng, dim)
        before = hilbert_metric(x, y)
        if before == 0.0:
            continue
        after = hilbert_metric(x ** r, y ** r)
        ratios.append(after / before)
    ratios = np.asarray(ratios)
    return InflationScalingResult(r=r, pairs=trials,
                                  min_ratio=float(ratios.min()),
                                  max_ratio=float(ratios.max()),
                                  mean_ratio=float(ratios.mean()))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual: float
    finite_pairs: int
    infinite_pairs: int
    max_ratio: Optional[float]   # within-iterate d_H vs previous iterate
    mean_row_shift: Optional[float]  # mean d_H between consecutive row iterates

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "residual": self.residual,
                "finite_pairs": self.finite_pairs,
                "infinite_pairs": self.infinite_pairs,
                "max_ratio": self.max_ratio,
                "mean_row_shift": self.mean_row_shift}


@dataclass(frozen=True)
class ContractionReport:
    inflation_r: float
    bound: float
    iterations: tuple              # of IterationRecord
    first_infinite_iteration: Optional[int]
    inflation_scaling: Optional[InflationScalingResult] = None
    nonexpansiveness: Optional[NonexpansivenessResult] = None
    notes: tuple = (DIAMETER_NOTE,)

    def to_dict(self) -> dict:
        return {
            "inflation_r": self.inflation_r,
            "birkhoff_bound": self.bound,
            "iterations": [rec.to_dict() for rec in self.iterations],
            "first_infinite_iteration": self.first_infinite_iteration,
            "inflation_scaling": (self.inflation_scaling.to_dict()
                                  if self.inflation_scaling else None),
            "nonexpansiveness": (self.nonexpansiveness.to_dict()
                                 if self.nonexpansiveness else None),
            "notes": list(self.notes),
        }

    def to_text(self) -> str:
        lines = [
            f"inflation r            : {self.inflation_r:g}",
            f"tanh(log r / 4)        : {self.bound:.6f}",
        ]
        if self.inflation_scaling:
            s = self.inflation_scaling
            lines.append(
                f"measured d_H scaling   : min {s.min_ratio:.9f} "
                f"max {s.max_ratio:.9f} over {s.pairs} pairs")
        if self.nonexpansiveness:
            ne = self.nonexpansiveness
            lines.append(
                f"linear non-expansive   : max ratio {ne.max_ratio:.9f}, "
                f"{ne.violations} violations in {ne.trials} trials")
        if self.first_infinite_iteration is not None:
            lines.append(
                f"first infinite d_H     : iteration "
                f"{self.first_infinite_iteration} (pruning reached the cone "
                "boundary)")
        lines.append("")
        lines.append(f"{'iter':>4}  {'residual':>12}  {'finite':>6}  "
                     f"{'infinite':>8}  {'max ratio':>12}  {'row shift':>12}")
        for rec in self.iterations:
            ratio = f"{rec.max_ratio:.6f}" if rec.max_ratio is not None else "-"
            shift = (f"{rec.mean_row_shift:.6f}"
                     if rec.mean_row_shift is not None else "inf")
            lines.append(f"{rec.iteration:>4}  {rec.residual:>12.3e}  "
                         f"{rec.finite_pairs:>6}  {rec.infinite_pairs:>8}  "
                         f"{ratio:>12}  {shift:>12}")
        lines.append("")
        for note in self.notes:
            lines.append(note)
        return "\n".join(lines) + "\n"


def empirical_flow_contraction(p0: StochasticMatrix, cfg: SegmentationConfig,
                               row_pairs: int = 20,
                               rng_seed: int = 0) -> ContractionReport:
    """Track projective distances through the flow iteration.

    Per iteration, measures d_H between sampled row pairs within the iterate
    (ratio against the previous iterate's value for the same pair) and between
    corresponding rows of consecutive iterates. Pairs touching zero entries
    are reported as infinite, not errors.
    """
    if np.min(p0.to_dense()) <= 0:
        raise InvalidInputError(
            "initial matrix must be strictly positive for finite d_H")
    rng = np.random.default_rng(rng_seed)
    n = p0.n
    pairs = [tuple(rng.choice(n, size=2, replace=False))
             for _ in range(row_pairs)]

    def pair_dists(mat: np.ndarray) -> np.ndarray:
        return np.array([_metric_or_inf(mat[i], mat[j]) for i, j in pairs])

    current = p0
    cur_dense = current.to_dense()
    prev_dists = pair_dists(cur_dense)
    records = []
    first_inf = None
    for t in range(1, cfg.max_flow_iters + 1):
        nxt = flow_step(current, cfg)
        nxt_dense = nxt.to_dense()
        res = residual_inf(nxt, current)
        dists = pair_dists(nxt_dense)
        finite = np.isfinite(dists)
        if (~finite).any() and first_inf is None:
            first_inf = t
        ratios = [dists[k] / prev_dists[k] for k in range(len(pairs))
                  if finite[k] and np.isfinite(prev_dists[k])
                  and prev_dists[k] > 0]
        row_shifts = [_metric_or_inf(cur_dense[i], nxt_dense[i])
                      for i in range(n)]
        finite_shifts = [s for s in row_shifts if math.isfinite(s)]
        records.append(IterationRecord(
            iteration=t,
            residual=res,
            finite_pairs=int(finite.sum()),
            infinite_pairs=int((~finite).sum()),
            max_ratio=max(ratios) if ratios else None,
            mean_row_shift=(sum(finite_shifts) / len(finite_shifts)
                            if finite_shifts else None),
        ))
        current, cur_dense, prev_dists = nxt, nxt_dense, dists
        if res < cfg.flow_tol:
            break
    return ContractionReport(
        inflation_r=cfg.inflation_r,
        bound=birkhoff_bound(cfg.inflation_r),
        iterations=tuple(records),
        first_infinite_iteration=first_inf,
    )
