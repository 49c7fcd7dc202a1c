"""mIoU scoring with unsupervised cluster-to-class matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import InvalidInputError, LabelMap

IGNORE_ID_DEFAULT = 255


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel co-occurrence counts, predicted clusters x ground-truth classes.

    Pixels whose ground-truth label equals the ignore id are excluded.
    """

    counts: np.ndarray  # (K_pred, K_gt) int64

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise InvalidInputError("confusion matrix must be 2-D")
        if c.size and c.min() < 0:
            raise InvalidInputError("counts must be nonnegative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def k_pred(self) -> int:
        return self.counts.shape[0]

    @property
    def k_gt(self) -> int:
        return self.counts.shape[1]

    def accumulate(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Sum counts, padding to the larger label space."""
        kp = max(self.k_pred, other.k_pred)
        kg = max(self.k_gt, other.k_gt)
        total = np.zeros((kp, kg), dtype=np.int64)
        total[:self.k_pred, :self.k_gt] += self.counts
        total[:other.k_pred, :other.k_gt] += other.counts
        return ConfusionMatrix(total)


def confusion(pred: LabelMap, gt: LabelMap,
              ignore_id: int = IGNORE_ID_DEFAULT) -> ConfusionMatrix:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InvalidInputError(
            f"dimension mismatch: pred {pred.height}x{pred.width} vs "
            f"gt {gt.height}x{gt.width}")
    p = pred.flat()
    g = gt.flat()
    keep = g != ignore_id
    p, g = p[keep], g[keep]
    kp = int(p.max()) + 1 if p.size else pred.num_labels
    kg = int(g.max()) + 1 if g.size else 1
    counts = np.bincount(p * kg + g, minlength=kp * kg).reshape(kp, kg)
    return ConfusionMatrix(counts)


def _iou_matrix(cm: ConfusionMatrix) -> np.ndarray:
    c = cm.counts.astype(np.float64)
    union = c.sum(axis=1, keepdims=True) + c.sum(axis=0, keepdims=True) - c
    return np.divide(c, union, out=np.zeros_like(c), where=union > 0)


def match_clusters(cm: ConfusionMatrix) -> dict:
    """Map each predicted cluster to a ground-truth class.

    One-to-one Hungarian assignment maximizing total IoU; leftover predicted
    clusters (K_pred > K_gt) fall back many-to-one onto their best-IoU class,
    lowest class index on ties.
    """
    if cm.counts.size == 0:
        raise InvalidInputError("empty confusion matrix")
    iou = _iou_matrix(cm)
    rows, cols = linear_sum_assignment(-iou)
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    for p in range(cm.k_pred):
        if p not in mapping:
            mapping[p] = int(np.argmax(iou[p]))
    return mapping


def miou(cm: ConfusionMatrix, mapping: dict) -> float:
    """Mean IoU over ground-truth classes present in the image, after merging
    predicted clusters per the mapping.

    Classes absent from the ground truth contribute nothing (excluded, not
    scored 0).
    """
    if set(mapping) != set(range(cm.k_pred)):
        raise InvalidInputError("mapping must cover all predicted clusters")
    merged = np.zeros((cm.k_gt, cm.k_gt), dtype=np.int64)
    for p, g in mapping.items():
        merged[g] += cm.counts[p]
    gt_totals = cm.counts.sum(axis=0)
    present = np.flatnonzero(gt_totals > 0)
    if present.size == 0:
        return 0.0
    ious = []
    for g in present:
        inter = merged[g, g]
        union = merged[g].sum() + gt_totals[g] - inter
        ious.append(inter / union if union > 0 else 0.0)
    return float(np.mean(ious))


def evaluate_pair(pred: LabelMap, gt: LabelMap,
                  ignore_id: int = IGNORE_ID_DEFAULT) -> tuple:
    """Convenience composite: returns (confusion, mapping, miou)."""
    cm = confusion(pred, gt, ignore_id)
    mapping = match_clusters(cm)
    return cm, mapping, miou(cm, mapping)
