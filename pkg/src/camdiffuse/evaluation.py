"""Seed-mask thresholding and segmentation metrics.

Mask convention: 0 is background, 1..K are foreground classes and 255 is
ignored. Activation maps are keyed by their mask label, so the map for
classifier row ``c`` is passed as label ``c + 1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DuplicateClass, EmptyEvaluation, InputError

IGNORE = 255


def default_thresholds() -> list[float]:
    return [round(0.01 * i, 2) for i in range(1, 100)]


def parse_thresholds(spec: str) -> list[float]:
    """Parse ``lo:hi:step`` into an inclusive grid, e.g. ``0.05:0.95:0.05``."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise InputError(f"threshold grid must be lo:hi:step, got {spec!r}") from exc
    if step <= 0 or lo > hi or lo < 0 or hi > 1:
        raise InputError(f"invalid threshold grid {spec!r}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(count)]


def _stack_maps(maps):
    if not maps:
        raise InputError("no activation maps given")
    labels = [int(c) for c, _ in maps]
    if len(set(labels)) != len(labels):
        raise DuplicateClass(f"class labels {labels} are not distinct")
    arrays = [np.asarray(m, dtype=np.float64) for _, m in maps]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise DimensionMismatch("activation maps differ in size")
    order = np.argsort(labels, kind="stable")
    return np.array(labels)[order], np.stack([arrays[i] for i in order])


def best_class(maps) -> tuple[np.ndarray, np.ndarray]:
    """Per pixel, the winning label and its activation (ties go to the smaller label)."""
    labels, stacked = _stack_maps(maps)
    winner = stacked.argmax(axis=0)
    return labels[winner], np.take_along_axis(stacked, winner[None], axis=0)[0]


def seed_mask(maps, threshold: float) -> np.ndarray:
    """Argmax class where its activation reaches ``threshold``, else background."""
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold {threshold} outside [0, 1]")
    cls, val = best_class(maps)
    return np.where(val >= threshold, cls, 0).astype(np.uint8)


@dataclass
class ConfusionStats:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    total: int

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionStats":
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), 0)

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        return ConfusionStats(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.total + other.total)


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionStats:
    """Per-class TP/FP/FN over classes 0..num_classes-1, skipping ignored gt pixels."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt != IGNORE
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if p.size and (p.max() >= num_classes or g.max() >= num_classes):
        raise InputError(f"mask values exceed {num_classes - 1} classes")
    mat = np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)
    tp = np.diag(mat).copy()
    return ConfusionStats(tp, mat.sum(axis=0) - tp, mat.sum(axis=1) - tp, int(p.size))


@dataclass
class EvalReport:
    threshold: float
    per_class_iou: np.ndarray
    miou: float
    fp_rate: float
    fn_rate: float


def miou(stats: ConfusionStats, threshold: float = float("nan")) -> EvalReport:
    """IoU per class (NaN where a class never occurs) and their mean.

    FP/FN rates count foreground-class errors as a fraction of evaluated pixels.
    """
    if stats.total == 0:
        raise EmptyEvaluation("no evaluated (non-ignore) pixels")
    denom = stats.tp + stats.fp + stats.fn
    iou = np.full(len(denom), np.nan)
    defined = denom > 0
    iou[defined] = stats.tp[defined] / denom[defined]
    return EvalReport(
        threshold=threshold,
        per_class_iou=iou,
        miou=float(np.mean(iou[defined])),
        fp_rate=float(stats.fp[1:].sum() / stats.total),
        fn_rate=float(stats.fn[1:].sum() / stats.total),
    )


def sweep_threshold(images, thresholds, num_classes: int) -> list[EvalReport]:
    """Dataset-level report per threshold.

    ``images`` is an iterable of ``(maps, gt)`` pairs where ``maps`` is a list
    of ``(label, map)`` at ground-truth resolution. Confusions are summed over
    images before IoU is taken.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise InputError("threshold list is empty")
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise InputError("thresholds must lie in [0, 1]")
    totals = [ConfusionStats.zeros(num_classes) for _ in thresholds]
    seen = False
    for maps, gt in images:
        seen = True
        cls, val = best_class(maps)
        if cls.shape != np.shape(gt):
            raise DimensionMismatch(f"maps {cls.shape} vs ground truth {np.shape(gt)}")
        for i, t in enumerate(thresholds):
            pred = np.where(val >= t, cls, 0)
            totals[i] = totals[i] + confusion(pred, gt, num_classes)
    if not seen:
        raise EmptyEvaluation("no images to evaluate")
    return [miou(s, t) for s, t in zip(totals, thresholds)]


def best_report(reports: list[EvalReport]) -> EvalReport:
    """Highest mIoU; the lowest threshold wins ties."""
    return max(reports, key=lambda r: (r.miou, -r.threshold))


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.4f}"


def reports_to_csv(reports: list[EvalReport]) -> str:
    num_classes = len(reports[0].per_class_iou)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "miou", "fp_rate", "fn_rate", "iou_bg"] + [f"iou_c{c}" for c in range(1, num_classes)])
    for r in reports:
        writer.writerow([_fmt(r.threshold), _fmt(r.miou), _fmt(r.fp_rate), _fmt(r.fn_rate)] + [_fmt(x) for x in r.per_class_iou])
    return buf.getvalue()


def report_to_dict(r: EvalReport) -> dict:
    return {
        "threshold": round(r.threshold, 4),
        "miou": round(r.miou, 4),
        "fp_rate": round(r.fp_rate, 4),
        "fn_rate": round(r.fn_rate, 4),
        "per_class_iou": [None if np.isnan(x) else round(float(x), 4) for x in r.per_class_iou],
    }
