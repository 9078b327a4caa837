"""COCO-style AP50 evaluation and the compute-budget comparison harness.

Evaluation always happens in original-image coordinates. AP uses greedy
score-ordered matching at IoU >= 0.5 with one match per ground-truth box
and 101-point interpolation; size-bucketed AP follows the COCO area-range
convention (out-of-bucket matches are ignored, unmatched detections count
as false positives only in their own size bucket).

Speed against external systems is not reproducible here, so the harness
reports a deterministic normalized-pixel budget as the cost proxy, plus
informative wall-clock timings from the costed adapter.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    Annotation,
    BoundingBox,
    EvalSizeBucket,
    ScaleLevel,
    SceneExtent,
    eval_size_bucket,
    iou,
)
from .gaze import DetectorAdapter, run_gaze
from .merge import DEFAULT_NMS_IOU, GlobalDetection, merge_run
from .saccade import DEFAULT_EXPANSION, Patch, expand_and_clip

MATCH_IOU = 0.5
_RECALL_SAMPLES = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class ApResult:
    """AP for one evaluation slice plus its raw precision-recall points."""

    ap: float
    curve: list[tuple[float, float]]
    gt_count: int
    matched: int
    false_positives: int

    @property
    def missed(self) -> int:
        return self.gt_count - self.matched

    @property
    def recall(self) -> float:
        return self.matched / self.gt_count if self.gt_count else 0.0


@dataclass(frozen=True)
class EvalReport:
    """AP50 overall and per size bucket, with match bookkeeping."""

    overall: ApResult
    small: ApResult
    middle: ApResult
    large: ApResult

    @property
    def ap50(self) -> float:
        return self.overall.ap

    def to_json_dict(self) -> dict:
        def slice_dict(r: ApResult) -> dict:
            return {
                "ap50": r.ap,
                "gt_count": r.gt_count,
                "matched": r.matched,
                "false_positives": r.false_positives,
                "missed": r.missed,
                "recall": r.recall,
            }

        return {
            "overall": slice_dict(self.overall),
            "small": slice_dict(self.small),
            "middle": slice_dict(self.middle),
            "large": slice_dict(self.large),
        }

    def to_table(self) -> str:
        rows = [("slice", "ap50", "gts", "matched", "fps", "missed")]
        for name, r in (
            ("overall", self.overall),
            ("small", self.small),
            ("middle", self.middle),
            ("large", self.large),
        ):
            rows.append((name, f"{r.ap:.4f}", str(r.gt_count), str(r.matched),
                         str(r.false_positives), str(r.missed)))
        widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows)


def _sorted_order(dets: list[GlobalDetection]) -> list[int]:
    return sorted(
        range(len(dets)),
        key=lambda i: (
            -dets[i].score,
            dets[i].bbox.x,
            dets[i].bbox.y,
            dets[i].bbox.width,
            dets[i].bbox.height,
        ),
    )


def match_detections(
    dets: list[GlobalDetection],
    gts: list[Annotation],
    iou_threshold: float = MATCH_IOU,
) -> tuple[list[int], list[int | None]]:
    """Greedy matching in score order: each detection takes the free
    same-category ground truth with the highest IoU at or above threshold.

    Returns (detection order, matched gt index per ordered detection).
    """
    order = _sorted_order(dets)
    taken = [False] * len(gts)
    matches: list[int | None] = []
    for di in order:
        det = dets[di]
        best: int | None = None
        best_iou = 0.0
        for gi, gt in enumerate(gts):
            if taken[gi] or gt.category != det.category:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best = gi
                best_iou = overlap
        if best is not None:
            taken[best] = True
        matches.append(best)
    return order, matches


def _interpolated_ap(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """101-point interpolated AP from cumulative recall/precision points."""
    if recalls.size == 0:
        return 0.0
    # Precision envelope: best precision achievable at or beyond each recall.
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    idx = np.searchsorted(recalls, _RECALL_SAMPLES, side="left")
    sampled = np.where(idx < len(recalls), envelope[np.minimum(idx, len(recalls) - 1)], 0.0)
    return float(sampled.mean())


def ap50(
    dets: list[GlobalDetection],
    gts: list[Annotation],
    size_filter: EvalSizeBucket | None = None,
) -> ApResult:
    """AP at IoU 0.5, optionally restricted to one size bucket of ground truth."""
    order, matches = match_detections(dets, gts)
    if size_filter is None:
        in_slice = [True] * len(gts)
    else:
        in_slice = [eval_size_bucket(gt.bbox) == size_filter for gt in gts]
    gt_count = sum(in_slice)

    tp_flags: list[bool] = []
    for di, gi in zip(order, matches):
        if gi is not None:
            if in_slice[gi]:
                tp_flags.append(True)
            # Matched outside the slice: ignored entirely.
        else:
            det_bucket = eval_size_bucket(dets[di].bbox)
            if size_filter is None or det_bucket == size_filter:
                tp_flags.append(False)

    tp = np.cumsum([1 if f else 0 for f in tp_flags], dtype=np.float64)
    fp = np.cumsum([0 if f else 1 for f in tp_flags], dtype=np.float64)
    if gt_count == 0 or tp.size == 0:
        matched = int(tp[-1]) if tp.size else 0
        fps = int(fp[-1]) if fp.size else 0
        return ApResult(ap=0.0, curve=[], gt_count=gt_count, matched=matched, false_positives=fps)
    recalls = tp / gt_count
    precisions = tp / (tp + fp)
    curve = list(zip(recalls.tolist(), precisions.tolist()))
    return ApResult(
        ap=_interpolated_ap(recalls, precisions),
        curve=curve,
        gt_count=gt_count,
        matched=int(tp[-1]),
        false_positives=int(fp[-1]),
    )


def evaluate_detections(dets: list[GlobalDetection], gts: list[Annotation]) -> EvalReport:
    """Full report: overall AP50 plus the three size-bucket slices."""
    return EvalReport(
        overall=ap50(dets, gts),
        small=ap50(dets, gts, EvalSizeBucket.SMALL),
        middle=ap50(dets, gts, EvalSizeBucket.MIDDLE),
        large=ap50(dets, gts, EvalSizeBucket.LARGE),
    )


def curve_csv(result: ApResult) -> str:
    """Precision-recall samples as CSV for plotting."""
    lines = ["recall,precision"]
    lines.extend(f"{r:.6f},{p:.6f}" for r, p in result.curve)
    return "\n".join(lines) + "\n"


@dataclass
class BudgetReport:
    """Deterministic pixel budget of a run plus informative wall-clock."""

    pixels_processed: int
    patch_count: int
    wall_seconds: float = 0.0
    baseline_name: str = ""
    budget_ratio: float | None = None

    def to_json_dict(self) -> dict:
        ratio: float | None = self.budget_ratio
        infinite = ratio is not None and math.isinf(ratio)
        return {
            "pixels_processed": self.pixels_processed,
            "patch_count": self.patch_count,
            "wall_seconds": self.wall_seconds,
            "baseline": self.baseline_name,
            "budget_ratio": None if infinite else ratio,
            "budget_ratio_infinite": infinite,
        }


def pixel_budget(patch_count: int, standard_size: tuple[int, int]) -> int:
    """Total normalized-frame pixels for a patch count at one standard size."""
    return patch_count * standard_size[0] * standard_size[1]


def compare_budgets(saccade_report: BudgetReport, baseline_report: BudgetReport) -> float:
    """Baseline pixels over saccade pixels; inf when the saccade run was empty."""
    if saccade_report.pixels_processed == 0:
        return math.inf
    return baseline_report.pixels_processed / saccade_report.pixels_processed


def sliding_window_patches(extent: SceneExtent, grid: int, expansion: float = DEFAULT_EXPANSION) -> list[Patch]:
    """Every cell of a grid x grid partition of the scene, expanded like
    saccade patches for parity; no density selection."""
    if grid < 1:
        raise ValueError(f"grid must be >= 1, got {grid}")
    xs = [(i * extent.width) // grid for i in range(grid + 1)]
    ys = [(j * extent.height) // grid for j in range(grid + 1)]
    patches = []
    for iy in range(grid):
        for ix in range(grid):
            region = BoundingBox(
                float(xs[ix]), float(ys[iy]), float(xs[ix + 1] - xs[ix]), float(ys[iy + 1] - ys[iy])
            )
            patches.append(
                Patch(
                    scale=ScaleLevel.TINY,
                    ix=ix,
                    iy=iy,
                    region=expand_and_clip(region, expansion, extent),
                    density=0.0,
                )
            )
    return patches


def sliding_window_run(
    extent: SceneExtent,
    grid: int,
    annotations: list[Annotation],
    adapter: DetectorAdapter,
    standard_size: tuple[int, int],
    expansion: float = DEFAULT_EXPANSION,
    workers: int = 1,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> tuple[list[GlobalDetection], BudgetReport]:
    """Selection-free baseline: detect on every grid cell, then merge.

    The budget charges every cell; annotations are accepted for signature
    parity with pipeline runs and are not consulted (the adapter may hold
    its own ground truth).
    """
    del annotations
    patches = sliding_window_patches(extent, grid, expansion)
    start = time.perf_counter()
    results = run_gaze(patches, adapter, standard_size, workers=workers)
    dets = merge_run(results, extent, nms_iou)
    elapsed = time.perf_counter() - start
    report = BudgetReport(
        pixels_processed=pixel_budget(len(patches), standard_size),
        patch_count=len(patches),
        wall_seconds=elapsed,
    )
    return dets, report
