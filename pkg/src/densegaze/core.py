"""Geometry primitives, scale buckets, and the annotation interchange format.

Everything here is an immutable value type; instances are safe to share
across threads without coordination.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

DEFAULT_SCALE_BOUNDARIES = (800.0, 1600.0, 3200.0)

# Pixel-area cutoffs for the evaluation size buckets (96x96 and 288x288).
EVAL_SMALL_AREA = 96.0 * 96.0
EVAL_LARGE_AREA = 288.0 * 288.0


class ScaleLevel(IntEnum):
    """Coarse object-size bucket routing objects to density maps and grids.

    Total order: TINY < SMALL < MIDDLE < LARGE.
    """

    TINY = 0
    SMALL = 1
    MIDDLE = 2
    LARGE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "ScaleLevel":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown scale level {label!r}") from None


class EvalSizeBucket(Enum):
    """Size buckets for evaluation reporting (area-based, unlike ScaleLevel)."""

    SMALL = "small"
    MIDDLE = "middle"
    LARGE = "large"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as (left, top, width, height) in pixels.

    The coordinate frame (global image vs. patch) is tracked by context;
    a single collection never mixes frames.
    """

    x: float
    y: float
    width: float
    height: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "width", "height"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BoundingBox.{name} must be finite, got {v!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"BoundingBox dimensions must be positive, got {self.width}x{self.height}"
            )

    @property
    def right(self) -> float:
        return self.x + self.width

    @property
    def bottom(self) -> float:
        return self.y + self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2.0, self.y + self.height / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def max_side(self) -> float:
        return max(self.width, self.height)

    def clip(self, extent: "SceneExtent") -> "BoundingBox | None":
        """Intersect with the scene; None when the box lies fully outside."""
        x0 = max(self.x, 0.0)
        y0 = max(self.y, 0.0)
        x1 = min(self.right, float(extent.width))
        y1 = min(self.bottom, float(extent.height))
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Annotation:
    """A labeled object: unique id, global-frame box, integer category."""

    id: int
    bbox: BoundingBox
    category: int = 0


@dataclass(frozen=True)
class SceneExtent:
    """Scene dimensions in original-image pixels."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"SceneExtent must be positive, got {self.width}x{self.height}")

    @property
    def area(self) -> float:
        return float(self.width) * float(self.height)

    def contains_point(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    if a == b:
        return 1.0
    ix0 = max(a.x, b.x)
    iy0 = max(a.y, b.y)
    ix1 = min(a.right, b.right)
    iy1 = min(a.bottom, b.bottom)
    # Cap by the box extents: rounding of right/bottom at large coordinates
    # must never let the intersection exceed either box.
    iw = min(ix1 - ix0, a.width, b.width)
    ih = min(iy1 - iy0, a.height, b.height)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def scale_bucket(
    box: BoundingBox,
    boundaries: tuple[float, float, float] = DEFAULT_SCALE_BOUNDARIES,
) -> ScaleLevel:
    """Bucket a box by its longest side against three increasing thresholds."""
    b0, b1, b2 = boundaries
    if not (b0 < b1 < b2):
        raise ValueError(f"scale boundaries must be strictly increasing, got {boundaries}")
    side = box.max_side
    if side < b0:
        return ScaleLevel.TINY
    if side < b1:
        return ScaleLevel.SMALL
    if side < b2:
        return ScaleLevel.MIDDLE
    return ScaleLevel.LARGE


def eval_size_bucket(box: BoundingBox) -> EvalSizeBucket:
    """Bucket a box by pixel area for evaluation reporting."""
    area = box.area
    if area < EVAL_SMALL_AREA:
        return EvalSizeBucket.SMALL
    if area < EVAL_LARGE_AREA:
        return EvalSizeBucket.MIDDLE
    return EvalSizeBucket.LARGE


def load_scene(path: str | Path) -> tuple[list[Annotation], SceneExtent]:
    """Read the annotation interchange JSON.

    Boxes are clipped into the scene at ingestion; an annotation entirely
    outside the scene, a duplicate id, or a non-positive box is an error.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        extent = SceneExtent(int(doc["scene"]["width"]), int(doc["scene"]["height"]))
        raw = doc["annotations"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed annotation document {path}: {exc}") from exc

    annotations: list[Annotation] = []
    seen: set[int] = set()
    for entry in raw:
        ann_id = int(entry["id"])
        if ann_id in seen:
            raise ValueError(f"duplicate annotation id {ann_id} in {path}")
        seen.add(ann_id)
        x, y, w, h = (float(v) for v in entry["bbox"])
        clipped = BoundingBox(x, y, w, h).clip(extent)
        if clipped is None:
            raise ValueError(f"annotation {ann_id} lies entirely outside the scene")
        annotations.append(Annotation(ann_id, clipped, int(entry.get("category", 0))))
    return annotations, extent


def save_scene(path: str | Path, annotations: list[Annotation], extent: SceneExtent) -> None:
    """Write the annotation interchange JSON (deterministic layout)."""
    doc = {
        "scene": {"width": extent.width, "height": extent.height},
        "annotations": [
            {
                "id": a.id,
                "bbox": [a.bbox.x, a.bbox.y, a.bbox.width, a.bbox.height],
                "category": a.category,
            }
            for a in annotations
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
