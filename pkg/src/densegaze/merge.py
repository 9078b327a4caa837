"""Map per-patch detections back to the original scale and merge them.

Overlapping patches see the same object more than once; after the inverse
normalization transform, greedy per-category NMS keeps the best-scoring
view. Output order is canonical, so merged results never depend on patch
processing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import BoundingBox, SceneExtent, iou
from .gaze import GazeResult, NormalizedPatch, PatchDetection

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class GlobalDetection:
    """A detection in original-image coordinates; source is the patch index."""

    bbox: BoundingBox
    score: float
    category: int = 0
    source: int = -1


def to_global(det: PatchDetection, np_patch: NormalizedPatch, source: int = -1) -> GlobalDetection:
    """Invert the normalization transform: divide by zoom, shift by patch origin."""
    b = det.bbox
    x, y = np_patch.to_scene(b.x, b.y)
    return GlobalDetection(
        bbox=BoundingBox(x, y, b.width / np_patch.zoom, b.height / np_patch.zoom),
        score=det.score,
        category=det.category,
        source=source,
    )


def _canonical_key(d: GlobalDetection):
    return (-d.score, d.bbox.x, d.bbox.y, d.source, d.bbox.width, d.bbox.height, d.category)


def global_nms(dets: list[GlobalDetection], iou_threshold: float = DEFAULT_NMS_IOU) -> list[GlobalDetection]:
    """Greedy score-descending suppression per category.

    A box is dropped when it overlaps an already-kept box of the same
    category with IoU strictly above the threshold. Ties are broken by
    (score desc, x asc, y asc, source asc) so output is deterministic.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    ordered = sorted(dets, key=_canonical_key)
    kept: list[GlobalDetection] = []
    kept_by_category: dict[int, list[GlobalDetection]] = {}
    for det in ordered:
        rivals = kept_by_category.setdefault(det.category, [])
        if all(iou(det.bbox, r.bbox) <= iou_threshold for r in rivals):
            rivals.append(det)
            kept.append(det)
    return kept


def merge_run(
    results: list[GazeResult],
    extent: SceneExtent,
    iou_threshold: float = DEFAULT_NMS_IOU,
) -> list[GlobalDetection]:
    """Lift all patch detections to global coordinates, clip, and suppress."""
    flat: list[GlobalDetection] = []
    for source, result in enumerate(results):
        for det in result.detections:
            g = to_global(det, result.normalized, source=source)
            clipped = g.bbox.clip(extent)
            if clipped is None:
                continue
            flat.append(GlobalDetection(bbox=clipped, score=g.score, category=g.category, source=source))
    return global_nms(flat, iou_threshold)


def write_detections(path: str | Path, dets: list[GlobalDetection]) -> None:
    """Write the final detections JSON (a list of bbox/score/category rows)."""
    rows = [
        {
            "bbox": [d.bbox.x, d.bbox.y, d.bbox.width, d.bbox.height],
            "score": d.score,
            "category": d.category,
        }
        for d in dets
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def read_detections(path: str | Path) -> list[GlobalDetection]:
    """Read a detections JSON written by write_detections (or compatible)."""
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    dets = []
    for row in rows:
        x, y, w, h = (float(v) for v in row["bbox"])
        dets.append(
            GlobalDetection(
                bbox=BoundingBox(x, y, w, h),
                score=float(row["score"]),
                category=int(row.get("category", 0)),
            )
        )
    return dets
