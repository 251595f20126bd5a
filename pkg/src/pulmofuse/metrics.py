"""Dice, multi-level (trunk/branch) dice and the CCA trade-off report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .errors import EmptyList, RegionNotPartition, ShapeMismatch, WeightOutOfRange
from .morphology import BRANCH, MAIN, largest_component

DEFAULT_W_BRANCH = 0.6
CSV_HEADER = ("case_id", "overall", "main", "branch", "multilevel")


@dataclass(frozen=True)
class DiceReport:
    overall_dice: float
    main_dice: float
    branch_dice: float
    multi_level_dice: float
    w_branch: float
    w_main: float

    def csv_row(self, case_id: str) -> list[str]:
        return [case_id] + [
            repr(float(x))
            for x in (self.overall_dice, self.main_dice, self.branch_dice, self.multi_level_dice)
        ]


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A∩B| / (|A| + |B|); two empty masks score 1.0."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def _check_w_branch(w_branch: float, strict: bool) -> None:
    if strict and not 0.5 < w_branch < 1.0:
        raise WeightOutOfRange(f"w_branch must lie in (0.5, 1), got {w_branch}")
    if not 0.0 <= w_branch <= 1.0:
        raise WeightOutOfRange(f"w_branch must lie in [0, 1], got {w_branch}")


def assign_regions(pred: np.ndarray, gt_regions: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Region label (1/2) for every predicted voxel, 0 elsewhere.

    Voxels inside the ground truth keep its label; false positives take the
    label of the nearest ground-truth voxel (in mm). With an empty ground
    truth every predicted voxel counts as trunk.
    """
    pred = np.asarray(pred) != 0
    gt_regions = np.asarray(gt_regions)
    fg = gt_regions != 0
    out = np.zeros(pred.shape, dtype=np.uint8)
    if not fg.any():
        out[pred] = MAIN
        return out
    idx = ndi.distance_transform_edt(~fg, sampling=spacing, return_distances=False,
                                     return_indices=True)
    out[pred] = gt_regions[tuple(idx)][pred]
    return out


def multi_level_dice(
    pred: np.ndarray,
    gt: np.ndarray,
    gt_regions: np.ndarray,
    w_branch: float = DEFAULT_W_BRANCH,
    spacing=(1.0, 1.0, 1.0),
    *,
    strict_weights: bool = True,
) -> DiceReport:
    """Weighted combination of trunk and branch dice.

    ``strict_weights=False`` relaxes the ``w_branch in (0.5, 1)`` check to
    ``[0, 1]``; only meant for tests comparing against an unweighted mean.
    """
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    gt_regions = np.asarray(gt_regions)
    if not pred.shape == gt.shape == gt_regions.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape}, {gt.shape}, {gt_regions.shape}")
    _check_w_branch(w_branch, strict_weights)
    if not np.isin(gt_regions, (0, MAIN, BRANCH)).all() or not np.array_equal(gt_regions != 0, gt):
        raise RegionNotPartition("region labels must be 0/1/2 and cover the ground truth exactly")
    pred_regions = assign_regions(pred, gt_regions, spacing)
    main = dice(pred_regions == MAIN, gt_regions == MAIN)
    branch = dice(pred_regions == BRANCH, gt_regions == BRANCH)
    w_main = 1.0 - w_branch
    return DiceReport(
        overall_dice=dice(pred, gt),
        main_dice=main,
        branch_dice=branch,
        multi_level_dice=w_branch * branch + w_main * main,
        w_branch=w_branch,
        w_main=w_main,
    )


def cca_tradeoff_report(
    pred: np.ndarray,
    gt: np.ndarray,
    gt_regions: np.ndarray,
    w_branch: float = DEFAULT_W_BRANCH,
    spacing=(1.0, 1.0, 1.0),
    connectivity: int = 26,
) -> tuple[DiceReport, DiceReport]:
    """Reports for the raw prediction and for its largest component."""
    before = multi_level_dice(pred, gt, gt_regions, w_branch, spacing)
    if not np.any(pred):
        return before, before
    kept = largest_component(pred, connectivity)
    after = multi_level_dice(kept, gt, gt_regions, w_branch, spacing)
    return before, after


def average_reports(reports: Sequence[DiceReport]) -> DiceReport:
    if not reports:
        raise EmptyList("no reports to average")
    weights = {(r.w_branch, r.w_main) for r in reports}
    if len(weights) != 1:
        raise WeightOutOfRange(f"reports use different weights: {sorted(weights)}")
    (w_branch, w_main), = weights
    cols = np.array([astuple(r)[:4] for r in reports], dtype=np.float64)
    # fsum is exactly rounded, so the mean does not depend on list order
    means = [math.fsum(c) / len(reports) for c in cols.T]
    return DiceReport(*means, w_branch=w_branch, w_main=w_main)


def format_csv(rows: Sequence[tuple[str, DiceReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for case_id, report in rows:
        writer.writerow(report.csv_row(case_id))
    return buf.getvalue()
