"""Pixel-wise segmentation metrics and centerline Dice over binary masks.

Undefined values (empty denominators) raise UndefinedMetricError; report
builders record them as absent rather than coercing to 0 or 1, and dataset
aggregates are means over the defined frames only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, UndefinedMetricError
from .raster import BinaryMask
from .skeleton import skeletonize

METRIC_COLUMNS = ("accuracy", "dice", "iou", "precision", "sensitivity", "cl_dice")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(pred: BinaryMask, gt: BinaryMask, roi: BinaryMask | None = None) -> ConfusionCounts:
    """Exact pixel tallies, restricted to ``roi`` when given."""
    if pred.data.shape != gt.data.shape:
        raise DataError("prediction and ground truth dimensions differ")
    sel = np.ones_like(pred.data) if roi is None else roi.data
    if sel.shape != pred.data.shape:
        raise DataError("roi dimensions differ from masks")
    p = pred.data[sel]
    g = gt.data[sel]
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    tn = int((~p & ~g).sum())
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("no evaluated pixels")
    return (c.tp + c.tn) / c.total


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        raise UndefinedMetricError("no positive predictions")
    return c.tp / (c.tp + c.fp)


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("no positive ground truth")
    return c.tp / (c.tp + c.fn)


def iou(c: ConfusionCounts) -> float:
    if c.tp + c.fp + c.fn == 0:
        raise UndefinedMetricError("empty union")
    return c.tp / (c.tp + c.fp + c.fn)


def dice(c: ConfusionCounts) -> float:
    if 2 * c.tp + c.fp + c.fn == 0:
        raise UndefinedMetricError("both masks empty")
    return 2 * c.tp / (2 * c.tp + c.fp + c.fn)


def cl_dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Centerline Dice: harmonic mean of skeleton-restricted precision
    (skeleton of the prediction inside the ground truth) and sensitivity
    (skeleton of the ground truth inside the prediction)."""
    skel_p = skeletonize(pred).skel
    skel_g = skeletonize(gt).skel
    np_, ng = int(skel_p.sum()), int(skel_g.sum())
    if np_ == 0 or ng == 0:
        raise UndefinedMetricError("empty skeleton")
    tprec = (skel_p & gt.data).sum() / np_
    tsens = (skel_g & pred.data).sum() / ng
    if tprec + tsens == 0.0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


def evaluate_pair(pred: BinaryMask, gt: BinaryMask, roi: BinaryMask | None = None) -> dict:
    """All Table-style metrics for one frame; absent metrics map to None."""
    c = confusion(pred, gt, roi)
    out: dict = {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn}
    for name, fn in (("accuracy", accuracy), ("dice", dice), ("iou", iou),
                     ("precision", precision), ("sensitivity", sensitivity)):
        try:
            out[name] = fn(c)
        except UndefinedMetricError:
            out[name] = None
    sel_p = pred.data if roi is None else pred.data & roi.data
    sel_g = gt.data if roi is None else gt.data & roi.data
    try:
        out["cl_dice"] = cl_dice(BinaryMask(sel_p), BinaryMask(sel_g))
    except UndefinedMetricError:
        out["cl_dice"] = None
    return out


def evaluation_report(per_frame: list[dict]) -> dict:
    """Aggregate frame metrics: mean/std over the frames where each metric
    is defined, with the defined count disclosed."""
    mean, std, count = {}, {}, {}
    for name in METRIC_COLUMNS:
        vals = [f[name] for f in per_frame if f.get(name) is not None and not math.isnan(f[name])]
        count[name] = len(vals)
        if vals:
            mean[name] = float(np.mean(vals))
            std[name] = float(np.std(vals))
    return {"per_frame": per_frame, "aggregate": {"mean": mean, "std": std, "count": count}}


def write_report(report: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
