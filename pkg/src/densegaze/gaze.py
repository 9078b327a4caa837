"""Stage two: scale-normalize selected patches and run a detector over them.

Every patch is mapped onto one standard frame sized for the tiny scale,
so small objects keep native resolution while larger scales are recorded
at 1/2, 1/4, 1/8 zoom and each patch costs the same pixel budget. The
detector behind the stage is pluggable: oracle and noisy adapters answer
from ground truth for desk-scale verification, a costed wrapper meters
pixel spend, and an external-command adapter hands batches to a real
model through a JSON file exchange.

Patches are processed by a pool of worker threads; adapters must be safe
to call concurrently, and results are always returned in input patch
order, so worker count never changes the output.
"""

from __future__ import annotations

import json
import math
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Annotation, BoundingBox, SceneExtent
from .saccade import DEFAULT_EXPANSION, Patch


class AdapterError(Exception):
    """A detector adapter failed; carries the identity of the failing patch."""

    def __init__(self, message: str, patch: Patch | None = None):
        super().__init__(message)
        self.patch = patch


@dataclass(frozen=True)
class NormalizedPatch:
    """A patch plus its transform onto the standard detection frame.

    zoom is normalized pixels per original pixel; the patch content spans
    (content_width, content_height) inside the standard frame, and the
    frame is padded (as a record, no pixels exist here) to standard_size.
    """

    patch: Patch
    standard_size: tuple[int, int]
    zoom: float

    @property
    def content_width(self) -> float:
        return self.patch.region.width * self.zoom

    @property
    def content_height(self) -> float:
        return self.patch.region.height * self.zoom

    def to_frame(self, x: float, y: float) -> tuple[float, float]:
        """Map a global point into the normalized frame."""
        r = self.patch.region
        return ((x - r.x) * self.zoom, (y - r.y) * self.zoom)

    def to_scene(self, x: float, y: float) -> tuple[float, float]:
        """Map a normalized-frame point back to global coordinates."""
        r = self.patch.region
        return (x / self.zoom + r.x, y / self.zoom + r.y)


@dataclass(frozen=True)
class PatchDetection:
    """A scored box in the normalized-patch frame."""

    bbox: BoundingBox
    score: float
    category: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be finite in [0, 1], got {self.score}")


def default_standard_size(
    extent: SceneExtent,
    tiny_cells: tuple[int, int] = (16, 16),
    expansion: float = DEFAULT_EXPANSION,
) -> tuple[int, int]:
    """Standard frame for a scene: the expanded tiny cell, rounded to even."""

    def round_even(v: float) -> int:
        return max(2, int(round(v / 2.0)) * 2)

    return (
        round_even(extent.width / tiny_cells[0] * expansion),
        round_even(extent.height / tiny_cells[1] * expansion),
    )


def normalize(patch: Patch, standard_size: tuple[int, int]) -> NormalizedPatch:
    """Fit a patch onto the standard frame; zoom is uniform in x and y."""
    sw, sh = standard_size
    if sw <= 0 or sh <= 0:
        raise ValueError(f"standard size must be positive, got {standard_size}")
    return NormalizedPatch(patch=patch, standard_size=(sw, sh), zoom=sw / patch.region.width)


class DetectorAdapter(ABC):
    """Boundary for any megapixel-level detector.

    detect must be a pure function of the normalized patch and safe to
    call from several workers at once.
    """

    @abstractmethod
    def detect(self, np_patch: NormalizedPatch) -> list[PatchDetection]:
        raise NotImplementedError


class OracleDetector(DetectorAdapter):
    """Answers from ground truth: perfect boxes for test pipelines.

    Returns every annotation whose center lies inside the patch region
    (half-open, so a center on a shared edge belongs to one cell only),
    with the box mapped into the normalized frame, clipped to the patch
    content, and scored 1.0.
    """

    def __init__(self, annotations: list[Annotation]):
        self._annotations = list(annotations)
        n = len(annotations)
        self._centers = np.empty((n, 2), dtype=np.float64)
        self._boxes = np.empty((n, 4), dtype=np.float64)
        for i, ann in enumerate(annotations):
            self._centers[i] = ann.bbox.center
            self._boxes[i] = (ann.bbox.x, ann.bbox.y, ann.bbox.width, ann.bbox.height)

    def detect(self, np_patch: NormalizedPatch) -> list[PatchDetection]:
        region = np_patch.patch.region
        c = self._centers
        inside = (
            (c[:, 0] >= region.x)
            & (c[:, 0] < region.right)
            & (c[:, 1] >= region.y)
            & (c[:, 1] < region.bottom)
        )
        out: list[PatchDetection] = []
        for i in np.nonzero(inside)[0]:
            x, y, w, h = self._boxes[i]
            fx0, fy0 = np_patch.to_frame(x, y)
            fx1, fy1 = np_patch.to_frame(x + w, y + h)
            fx0 = max(fx0, 0.0)
            fy0 = max(fy0, 0.0)
            fx1 = min(fx1, np_patch.content_width)
            fy1 = min(fy1, np_patch.content_height)
            if fx1 - fx0 <= 0 or fy1 - fy0 <= 0:
                continue
            out.append(
                PatchDetection(
                    bbox=BoundingBox(fx0, fy0, fx1 - fx0, fy1 - fy0),
                    score=1.0,
                    category=self._annotations[i].category,
                )
            )
        return out


class NoisyDetector(DetectorAdapter):
    """Oracle output degraded with seeded jitter, misses, and false positives.

    Randomness is keyed on (seed, patch identity), so output is identical
    across runs and worker counts regardless of call order.
    """

    def __init__(
        self,
        annotations: list[Annotation],
        jitter: float = 0.0,
        miss_rate: float = 0.0,
        fp_rate: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= miss_rate <= 1.0:
            raise ValueError(f"miss_rate must be in [0, 1], got {miss_rate}")
        if fp_rate < 0:
            raise ValueError(f"fp_rate must be >= 0, got {fp_rate}")
        if jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {jitter}")
        self._oracle = OracleDetector(annotations)
        self.jitter = jitter
        self.miss_rate = miss_rate
        self.fp_rate = fp_rate
        self.seed = seed

    def detect(self, np_patch: NormalizedPatch) -> list[PatchDetection]:
        p = np_patch.patch
        rng = np.random.default_rng([self.seed, int(p.scale), p.iy, p.ix])
        out: list[PatchDetection] = []
        fw, fh = np_patch.content_width, np_patch.content_height
        for det in self._oracle.detect(np_patch):
            if rng.random() < self.miss_rate:
                continue
            b = det.bbox
            if self.jitter > 0:
                dx, dy, dw, dh = rng.normal(0.0, self.jitter, size=4)
            else:
                dx = dy = dw = dh = 0.0
            w = max(b.width + dw, 1.0)
            h = max(b.height + dh, 1.0)
            x = min(max(b.x + dx, 0.0), max(fw - w, 0.0))
            y = min(max(b.y + dy, 0.0), max(fh - h, 0.0))
            w = min(w, fw - x)
            h = min(h, fh - y)
            if w <= 0 or h <= 0:
                continue
            score = float(rng.uniform(0.6, 1.0)) if self.jitter > 0 or self.miss_rate > 0 else 1.0
            out.append(PatchDetection(bbox=BoundingBox(x, y, w, h), score=score, category=det.category))
        for _ in range(int(rng.poisson(self.fp_rate))):
            w = float(rng.uniform(4.0, max(fw / 4.0, 8.0)))
            h = float(rng.uniform(4.0, max(fh / 4.0, 8.0)))
            x = float(rng.uniform(0.0, max(fw - w, 1.0)))
            y = float(rng.uniform(0.0, max(fh - h, 1.0)))
            out.append(
                PatchDetection(
                    bbox=BoundingBox(x, y, min(w, fw - x), min(h, fh - y)),
                    score=float(rng.uniform(0.05, 0.6)),
                )
            )
        return out


@dataclass
class PixelLedger:
    """Thread-safe tally of normalized-frame pixels submitted to a detector."""

    pixels: int = 0
    patches: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, pixels: int) -> None:
        with self._lock:
            self.pixels += pixels
            self.patches += 1


class CostedDetector(DetectorAdapter):
    """Wraps an adapter with a pixel ledger and optional proportional busy work.

    Every call charges the full padded frame (standard_size area) to the
    ledger, which is the deterministic stand-in for inference cost. With
    cost_per_pixel > 0, a numpy busy loop burns CPU proportional to the
    frame so wall-clock comparisons track the pixel budget.
    """

    _CHUNK = 1 << 15

    def __init__(self, inner: DetectorAdapter, cost_per_pixel: float = 0.0):
        if cost_per_pixel < 0:
            raise ValueError(f"cost_per_pixel must be >= 0, got {cost_per_pixel}")
        self.inner = inner
        self.cost_per_pixel = cost_per_pixel
        self.ledger = PixelLedger()

    def detect(self, np_patch: NormalizedPatch) -> list[PatchDetection]:
        sw, sh = np_patch.standard_size
        pixels = sw * sh
        self.ledger.add(pixels)
        if self.cost_per_pixel > 0:
            self._burn(int(pixels * self.cost_per_pixel))
        return self.inner.detect(np_patch)

    def _burn(self, ops: int) -> None:
        buf = np.arange(1, self._CHUNK + 1, dtype=np.float64)
        while ops > 0:
            np.sqrt(buf[: min(ops, self._CHUNK)])
            ops -= self._CHUNK


@dataclass(frozen=True)
class GazeResult:
    """One patch's normalization record and its detections."""

    normalized: NormalizedPatch
    detections: list[PatchDetection]

    @property
    def patch(self) -> Patch:
        return self.normalized.patch


def run_gaze(
    patches: list[Patch],
    adapter: DetectorAdapter,
    standard_size: tuple[int, int],
    workers: int = 1,
) -> list[GazeResult]:
    """Normalize and detect every patch; results follow input patch order.

    Worker count affects scheduling only, never results. Adapter failures
    are re-raised as AdapterError carrying the first failing patch in
    input order.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    normalized = [normalize(p, standard_size) for p in patches]

    batch = getattr(adapter, "detect_batch", None)
    if batch is not None:
        return [GazeResult(np_p, dets) for np_p, dets in zip(normalized, batch(normalized))]

    def call(np_patch: NormalizedPatch) -> list[PatchDetection]:
        return adapter.detect(np_patch)

    outcomes: list[list[PatchDetection] | Exception]
    if workers == 1 or len(normalized) <= 1:
        outcomes = []
        for np_p in normalized:
            try:
                outcomes.append(call(np_p))
            except Exception as exc:
                outcomes.append(exc)
    else:
        def guarded(np_patch: NormalizedPatch):
            try:
                return call(np_patch)
            except Exception as exc:
                return exc

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, normalized))

    for np_p, outcome in zip(normalized, outcomes):
        if isinstance(outcome, Exception):
            p = np_p.patch
            raise AdapterError(
                f"detector failed on patch scale={p.scale.label} cell=({p.ix},{p.iy}): {outcome}",
                patch=p,
            ) from outcome
    return [GazeResult(np_p, out) for np_p, out in zip(normalized, outcomes)]


class ExternalCommandDetector(DetectorAdapter):
    """File-exchange adapter for out-of-process detectors.

    For each batch it writes a patch manifest JSON, runs the configured
    command as `cmd <manifest.json> <detections_out.json>`, and reads the
    detections back. The manifest rows are
    {"patch_id", "scale", "cell", "region", "zoom", "standard_size"};
    the command must write a JSON list of
    {"patch_id", "bbox": [x, y, w, h] (normalized frame), "score", "category"}.
    """

    def __init__(self, command: list[str]):
        if not command:
            raise ValueError("external detector command must not be empty")
        self.command = list(command)

    def detect(self, np_patch: NormalizedPatch) -> list[PatchDetection]:
        return self.detect_batch([np_patch])[0]

    def detect_batch(self, normalized: list[NormalizedPatch]) -> list[list[PatchDetection]]:
        if not normalized:
            return []
        manifest = [
            {
                "patch_id": i,
                "scale": np_p.patch.scale.label,
                "cell": [np_p.patch.ix, np_p.patch.iy],
                "region": [
                    np_p.patch.region.x,
                    np_p.patch.region.y,
                    np_p.patch.region.width,
                    np_p.patch.region.height,
                ],
                "zoom": np_p.zoom,
                "standard_size": list(np_p.standard_size),
            }
            for i, np_p in enumerate(normalized)
        ]
        with tempfile.TemporaryDirectory(prefix="densegaze-exec-") as tmp:
            manifest_path = Path(tmp) / "patches.json"
            out_path = Path(tmp) / "detections.json"
            manifest_path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
            proc = subprocess.run(
                self.command + [str(manifest_path), str(out_path)],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                raise AdapterError(
                    f"external detector exited {proc.returncode}: {proc.stderr.strip()}"
                )
            if not out_path.exists():
                raise AdapterError("external detector wrote no detections file")
            try:
                rows = json.loads(out_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise AdapterError(f"external detector wrote invalid JSON: {exc}") from exc

        results: list[list[PatchDetection]] = [[] for _ in normalized]
        for row in rows:
            try:
                pid = int(row["patch_id"])
                x, y, w, h = (float(v) for v in row["bbox"])
                score = float(row["score"])
                category = int(row.get("category", 0))
            except (KeyError, TypeError, ValueError) as exc:
                raise AdapterError(f"malformed detection row {row!r}: {exc}") from exc
            if not 0 <= pid < len(normalized):
                raise AdapterError(f"detection references unknown patch_id {pid}")
            np_p = normalized[pid]
            x0 = max(x, 0.0)
            y0 = max(y, 0.0)
            x1 = min(x + w, np_p.content_width)
            y1 = min(y + h, np_p.content_height)
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                continue
            if not (math.isfinite(score) and 0.0 <= score <= 1.0):
                raise AdapterError(f"detection score {score} outside [0, 1]")
            results[pid].append(
                PatchDetection(bbox=BoundingBox(x0, y0, x1 - x0, y1 - y0), score=score, category=category)
            )
        return results
