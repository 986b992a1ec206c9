"""Per-class thresholding, IoU accumulation and mIoU.

IoU is aggregated at dataset level: intersections and unions are summed over
all images as exact integers and divided once at the end. Classes whose
union is zero are left out of the mean.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, UndefinedMetricError


def apply_thresholds(soft: np.ndarray, thresholds) -> np.ndarray:
    """Pixel gets class ``c`` iff its soft score is strictly above ``thresholds[c]``."""
    soft = np.asarray(soft)
    t = np.asarray(thresholds, dtype=np.float64)
    if soft.ndim != 3 or t.shape != (soft.shape[2],):
        raise DimensionError(f"{t.shape} thresholds for a soft mask of shape {soft.shape}")
    return soft.astype(np.float64) > t


@dataclass(frozen=True)
class IoUReport:
    intersection: np.ndarray  # (C,) int64
    union: np.ndarray  # (C,) int64

    @classmethod
    def empty(cls, C: int) -> "IoUReport":
        return cls(np.zeros(C, np.int64), np.zeros(C, np.int64))

    @property
    def C(self) -> int:
        return len(self.intersection)

    @property
    def iou(self) -> np.ndarray:
        """Per-class IoU, NaN where the union is zero."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.union > 0, self.intersection / np.maximum(self.union, 1), np.nan)

    @property
    def miou(self) -> float:
        return finalize_miou(self)

    def __add__(self, other: "IoUReport") -> "IoUReport":
        if other.C != self.C:
            raise DimensionError(f"cannot merge reports with {self.C} and {other.C} classes")
        return IoUReport(self.intersection + other.intersection, self.union + other.union)

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        names = list(class_names) if class_names else [str(c) for c in range(self.C)]
        iou = self.iou
        per_class = {
            n: {
                "intersection": int(i),
                "union": int(u),
                "iou": None if np.isnan(v) else float(v),
            }
            for n, i, u, v in zip(names, self.intersection, self.union, iou)
        }
        try:
            miou = finalize_miou(self)
        except UndefinedMetricError:
            miou = None
        return {"classes": per_class, "miou": miou}

    def to_json(self, class_names: Sequence[str] | None = None) -> str:
        return json.dumps(self.to_dict(class_names), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "IoUReport":
        rows = list(d["classes"].values())
        return cls(
            np.array([r["intersection"] for r in rows], np.int64),
            np.array([r["union"] for r in rows], np.int64),
        )


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape or pred.ndim != 3:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")


def iou_counts(pred: np.ndarray, gt: np.ndarray) -> IoUReport:
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    _check_pair(pred, gt)
    inter = np.count_nonzero(pred & gt, axis=(0, 1)).astype(np.int64)
    union = np.count_nonzero(pred | gt, axis=(0, 1)).astype(np.int64)
    return IoUReport(inter, union)


def accumulate_iou(pred: np.ndarray, gt: np.ndarray, report: IoUReport | None = None) -> IoUReport:
    counts = iou_counts(pred, gt)
    return counts if report is None else report + counts


def finalize_miou(report: IoUReport) -> float:
    defined = report.union > 0
    if not defined.any():
        raise UndefinedMetricError("mIoU is undefined: every class has an empty union")
    return float(np.mean(report.intersection[defined] / report.union[defined]))


def dataset_report(preds: Iterable[np.ndarray], gts: Iterable[np.ndarray]) -> IoUReport:
    report = None
    for p, g in zip(preds, gts, strict=True):
        report = accumulate_iou(p, g, report)
    if report is None:
        raise UndefinedMetricError("no images to evaluate")
    return report


def macro_miou(preds: Iterable[np.ndarray], gts: Iterable[np.ndarray]) -> float:
    """Per-image mIoU averaged over images (images with no defined class are skipped)."""
    scores = []
    for p, g in zip(preds, gts, strict=True):
        try:
            scores.append(finalize_miou(iou_counts(p, g)))
        except UndefinedMetricError:
            continue
    if not scores:
        raise UndefinedMetricError("no image has a defined mIoU")
    return float(np.mean(scores))


def threshold_sweep(soft: np.ndarray, gt: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intersections and unions for every threshold at once.

    ``grid`` is ``(T,)`` shared by all classes or ``(C, T)`` per class (each
    row ascending). Returns two ``(C, T)`` int64 arrays equal to running
    :func:`iou_counts` on ``apply_thresholds`` at each grid point.
    """
    soft = np.asarray(soft)
    gt = np.asarray(gt, bool)
    if soft.shape != gt.shape or soft.ndim != 3:
        raise DimensionError(f"soft mask {soft.shape} and ground truth {gt.shape} differ")
    C = soft.shape[2]
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 1:
        grid = np.broadcast_to(grid, (C, len(grid)))
    T = grid.shape[1]
    inter = np.empty((C, T), np.int64)
    union = np.empty((C, T), np.int64)
    for c in range(C):
        s = soft[:, :, c].astype(np.float64).ravel()
        g = gt[:, :, c].ravel()
        # bin b = number of grid thresholds strictly below s, so s > t_i  <=>  i < b
        b = np.searchsorted(grid[c], s, side="left")
        pos = np.bincount(b[g], minlength=T + 1)
        neg = np.bincount(b[~g], minlength=T + 1)
        above_pos = np.cumsum(pos[::-1])[::-1][1:]
        above_neg = np.cumsum(neg[::-1])[::-1][1:]
        inter[c] = above_pos
        union[c] = g.sum() + above_neg
    return inter, union


def class_frequency(masks: Iterable[np.ndarray]) -> np.ndarray:
    """Fraction of all labeled (pixel, class) memberships that belong to each class."""
    totals = None
    for m in masks:
        counts = np.count_nonzero(np.asarray(m, bool), axis=(0, 1)).astype(np.int64)
        totals = counts if totals is None else totals + counts
    if totals is None:
        raise UndefinedMetricError("class frequency of an empty dataset")
    if totals.sum() == 0:
        raise UndefinedMetricError("dataset has no labeled pixels")
    return totals / totals.sum()
