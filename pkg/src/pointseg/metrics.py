"""Segmentation and detection evaluation.

Pixel accuracy and F1 on the binary mask, object-level Dice and aggregated
Jaccard index on instance labelings, detection precision/recall under
one-to-one center matching, and Lin's concordance correlation coefficient
for per-image counts. Degenerate inputs (empty masks, constant count lists)
return the documented conventional values and emit DegenerateMetricWarning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .encode import PointSet
from .post import DetectionSet, InstanceMask

DETECT_MATCH_RADIUS = 5.0


class DegenerateMetricWarning(UserWarning):
    """A metric was evaluated on inputs where its formula is undefined."""


def _flag(message: str):
    warnings.warn(message, DegenerateMetricWarning, stacklevel=3)


@dataclass
class SegReport:
    acc: float
    f1: float
    object_dice: float
    aji: float

    def to_dict(self) -> dict:
        # capitalized keys match the report column headers
        return {
            "ACC": self.acc,
            "F1": self.f1,
            "Dice": self.object_dice,
            "AJI": self.aji,
        }


@dataclass
class DetReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    ccc: float = float("nan")

    def to_dict(self) -> dict:
        out = {
            "Precision": self.precision,
            "Recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }
        if np.isfinite(self.ccc):
            out["CCC"] = self.ccc
        return out


def _binary(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    return mask.astype(bool)


def pixel_metrics(pred, truth) -> tuple[float, float]:
    """(accuracy, foreground F1) of a binary mask against a binary truth."""
    pred, truth = _binary(pred), _binary(truth)
    if pred.shape != truth.shape:
        raise ValueError("mask dims differ")
    acc = float((pred == truth).mean())
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    if tp + fp + fn == 0:
        _flag("F1 undefined: prediction and truth are both empty")
        return acc, 1.0
    return acc, 2.0 * tp / (2.0 * tp + fp + fn)


def _instance_sets(mask: InstanceMask):
    labels = mask.labels
    sizes = mask.sizes()
    return labels, sizes


def _overlap_table(truth: InstanceMask, pred: InstanceMask) -> np.ndarray:
    """(n_truth+1, n_pred+1) pixel-overlap counts including background row 0."""
    nt, np_ = truth.n_instances, pred.n_instances
    pair = truth.labels.astype(np.int64) * (np_ + 1) + pred.labels
    counts = np.bincount(pair.ravel(), minlength=(nt + 1) * (np_ + 1))
    return counts.reshape(nt + 1, np_ + 1)


def aji(pred: InstanceMask, truth: InstanceMask) -> float:
    """Aggregated Jaccard index.

    Ground-truth instances are visited in id order; each takes the unused
    predicted instance of highest IoU (ties by lower predicted id) when any
    overlaps it. Matched pairs contribute intersection and union; unmatched
    ground truth contributes its own pixels to the union, and so does every
    prediction left unused.
    """
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("mask dims differ")
    nt, np_ = truth.n_instances, pred.n_instances
    if nt == 0 and np_ == 0:
        _flag("AJI undefined: no instances in prediction or truth")
        return 1.0
    overlap = _overlap_table(truth, pred)
    t_sizes = truth.sizes()
    p_sizes = pred.sizes()

    used = np.zeros(np_ + 1, dtype=bool)
    inter_sum = 0
    union_sum = 0
    for i in range(1, nt + 1):
        best_j, best_inter, best_union = 0, 0, 1
        for j in range(1, np_ + 1):
            inter = int(overlap[i, j])
            if used[j] or inter == 0:
                continue
            union = int(t_sizes[i]) + int(p_sizes[j]) - inter
            # exact IoU comparison via cross-multiplication; ties keep lower id
            if inter * best_union > best_inter * union:
                best_j, best_inter, best_union = j, inter, union
        if best_j:
            used[best_j] = True
            inter_sum += best_inter
            union_sum += best_union
        else:
            union_sum += int(t_sizes[i])
    union_sum += int(p_sizes[1:][~used[1:]].sum())
    return inter_sum / union_sum


def object_dice(pred: InstanceMask, truth: InstanceMask) -> float:
    """Symmetric object-level Dice.

    Each instance is scored against the opposing instance of largest pixel
    overlap (zero when nothing overlaps) and the two directional averages,
    weighted by instance size, are averaged.
    """
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("mask dims differ")
    nt, np_ = truth.n_instances, pred.n_instances
    if nt == 0 and np_ == 0:
        _flag("object Dice undefined: no instances in prediction or truth")
        return 1.0
    if nt == 0 or np_ == 0:
        return 0.0
    overlap = _overlap_table(truth, pred)
    t_sizes = truth.sizes().astype(np.float64)
    p_sizes = pred.sizes().astype(np.float64)

    fwd = 0.0
    total_t = t_sizes[1:].sum()
    for i in range(1, nt + 1):
        j = int(np.argmax(overlap[i, 1:])) + 1
        dice = 2.0 * overlap[i, j] / (t_sizes[i] + p_sizes[j]) if overlap[i, j] else 0.0
        fwd += (t_sizes[i] / total_t) * dice

    bwd = 0.0
    total_p = p_sizes[1:].sum()
    for j in range(1, np_ + 1):
        i = int(np.argmax(overlap[1:, j])) + 1
        dice = 2.0 * overlap[i, j] / (t_sizes[i] + p_sizes[j]) if overlap[i, j] else 0.0
        bwd += (p_sizes[j] / total_p) * dice

    return 0.5 * (fwd + bwd)


def detection_metrics(pred: DetectionSet, truth: PointSet, radius: float = DETECT_MATCH_RADIUS) -> DetReport:
    """One-to-one center matching within a radius.

    The assignment maximizes the number of matched pairs and, among those,
    minimizes the total matched distance; matched pairs count as true
    positives, leftover predictions as false positives, leftover truth
    points as false negatives.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = pred.points
    t = truth.points
    n_pred, n_truth = len(p), len(t)

    tp = 0
    if n_pred and n_truth:
        d = np.linalg.norm(p[:, None, :] - t[None, :, :], axis=2)
        allowed = d <= radius
        # any count of real matches must outweigh one forbidden pairing
        big = radius * (min(n_pred, n_truth) + 1) + 1.0
        cost = np.where(allowed, d, big)
        rows, cols = linear_sum_assignment(cost)
        tp = int(allowed[rows, cols].sum())

    fp = n_pred - tp
    fn = n_truth - tp
    if n_pred == 0 and n_truth == 0:
        _flag("detection metrics undefined: no predictions and no truth points")
        return DetReport(tp=0, fp=0, fn=0, precision=1.0, recall=1.0)
    if n_pred == 0:
        _flag("precision undefined: no predictions")
        precision = 0.0
    else:
        precision = tp / n_pred
    if n_truth == 0:
        _flag("recall undefined: no truth points")
        recall = 0.0
    else:
        recall = tp / n_truth
    return DetReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall)


def ccc(x, y) -> float:
    """Lin's concordance correlation coefficient with population moments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise ValueError("inputs must be 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least 2 paired values")
    mx, my = x.mean(), y.mean()
    vx = float(((x - mx) ** 2).mean())
    vy = float(((y - my) ** 2).mean())
    cov = float(((x - mx) * (y - my)).mean())
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        _flag("CCC undefined: both sequences constant and equal")
        return 1.0
    if vx == 0.0 and vy == 0.0:
        _flag("CCC degenerate: both sequences constant with unequal means")
        return 0.0
    return 2.0 * cov / denom


def seg_report(pred: InstanceMask, truth: InstanceMask) -> SegReport:
    """All segmentation metrics of one predicted labeling against truth."""
    acc, f1 = pixel_metrics(pred.labels > 0, truth.labels > 0)
    return SegReport(
        acc=acc,
        f1=f1,
        object_dice=object_dice(pred, truth),
        aji=aji(pred, truth),
    )
