"""Density-map rendering, the scale-aware error metric, and DMAP raster I/O.

Each annotated object contributes a unit-mass Gaussian blob to the map of
its scale bucket, so the integral of a map region estimates the object
count inside it. Kernel width follows the three-sigma rule: sigma is one
third of the longest box side, so the blob support roughly covers the
object. Maps are rendered at a configurable downsample (original pixels
per map cell); rendering accumulates in a fixed annotation order, so
results are deterministic.

The DMAP binary format is the exchange surface for density rasters
produced by external regression models; planes are stored as float32 and
hold unscaled, true-count densities. Trainers that scale densities up for
numeric range (typically by 1000) should undo that before writing, or use
apply_count_scale / invert_count_scale at the boundary.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Annotation, BoundingBox, ScaleLevel, SceneExtent, scale_bucket
from .core import DEFAULT_SCALE_BOUNDARIES

DEFAULT_DOWNSAMPLE = 32.0
DEFAULT_ALPHAS = (0.01, 0.1, 10.0, 100.0)
DEFAULT_COUNT_SCALE = 1000.0

DMAP_MAGIC = b"DMAP"
DMAP_VERSION = 1
DMAP_PLANES = 4
_DMAP_HEADER = struct.Struct("<4sIIIId")
# Cells per plane above this are rejected as corrupt rather than allocated.
_DMAP_MAX_CELLS = 2**32


class DmapError(Exception):
    """Base class for DMAP format failures."""


class DmapMagicError(DmapError):
    """File does not start with the DMAP magic bytes."""


class DmapVersionError(DmapError):
    """Unsupported DMAP format version."""


class DmapPlaneCountError(DmapError):
    """Plane count in the header is not the required four."""


class DmapDimensionError(DmapError):
    """Declared plane dimensions are zero or implausibly large."""


class DmapTruncatedError(DmapError):
    """File ends before the declared payload is complete."""


class DmapValueError(DmapError):
    """Payload contains negative or non-finite densities."""


@dataclass
class DensityMap:
    """A low-resolution density raster.

    values is a (height, width) float64 array of non-negative intensities
    in persons per map cell; downsample is original pixels per map cell.
    """

    values: np.ndarray
    downsample: float

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"density map must be a non-empty 2-D grid, got shape {self.values.shape}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density map contains non-finite values")
        if np.any(self.values < 0):
            raise ValueError("density map contains negative values")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def total_mass(self) -> float:
        """Expected object count over the whole map."""
        return float(self.values.sum())


@dataclass
class DensityMapSet:
    """One density map per scale level, all sharing geometry.

    maps are ordered TINY, SMALL, MIDDLE, LARGE; index with a ScaleLevel.
    """

    maps: tuple[DensityMap, DensityMap, DensityMap, DensityMap]

    def __post_init__(self) -> None:
        if len(self.maps) != len(ScaleLevel):
            raise ValueError(f"expected {len(ScaleLevel)} maps, got {len(self.maps)}")
        first = self.maps[0]
        for m in self.maps[1:]:
            if m.values.shape != first.values.shape or m.downsample != first.downsample:
                raise ValueError("all maps in a set must share dimensions and downsample")

    def __getitem__(self, scale: ScaleLevel) -> DensityMap:
        return self.maps[int(scale)]

    @property
    def width(self) -> int:
        return self.maps[0].width

    @property
    def height(self) -> int:
        return self.maps[0].height

    @property
    def downsample(self) -> float:
        return self.maps[0].downsample


@dataclass(frozen=True)
class GaussianStamp:
    """A truncated, renormalized Gaussian kernel ready to splat onto a map.

    The kernel has square support of half-width `radius` map cells around
    the cell containing `center`, is evaluated at cell centers, and is
    renormalized to total mass exactly 1 after truncation (boundary
    clipping during splatting may later drop part of that mass).
    """

    center: tuple[float, float]
    sigma: float
    radius: int
    weights: np.ndarray

    @property
    def origin(self) -> tuple[int, int]:
        """Map-cell index of the top-left corner of the support window."""
        cx, cy = self.center
        return (int(math.floor(cx)) - self.radius, int(math.floor(cy)) - self.radius)


def sigma_for(box: BoundingBox) -> int:
    """Kernel width in original-image pixels: longest side over three.

    Integer (floor) division, clamped to at least 1 pixel so degenerate
    boxes still render a representable blob.
    """
    return max(1, int(box.max_side // 3))


def make_stamp(center: tuple[float, float], sigma: float) -> GaussianStamp:
    """Build the truncated unit-mass kernel for a blob center in map cells.

    sigma is in map cells and is clamped to >= 1 so the blob spans at
    least a few cells regardless of downsampling.
    """
    sigma = max(float(sigma), 1.0)
    radius = int(math.ceil(3.0 * sigma))
    cx, cy = center
    ix = math.floor(cx)
    iy = math.floor(cy)
    xs = np.arange(ix - radius, ix + radius + 1, dtype=np.float64) + 0.5 - cx
    ys = np.arange(iy - radius, iy + radius + 1, dtype=np.float64) + 0.5 - cy
    kernel = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    return GaussianStamp(center=(cx, cy), sigma=sigma, radius=radius, weights=kernel)


def _splat(accumulator: np.ndarray, stamp: GaussianStamp) -> None:
    """Add a stamp to an accumulator, dropping mass outside the raster."""
    h, w = accumulator.shape
    x0, y0 = stamp.origin
    k = stamp.weights
    kh, kw = k.shape
    ax0, ay0 = max(x0, 0), max(y0, 0)
    ax1, ay1 = min(x0 + kw, w), min(y0 + kh, h)
    if ax0 >= ax1 or ay0 >= ay1:
        return
    accumulator[ay0:ay1, ax0:ax1] += k[ay0 - y0 : ay1 - y0, ax0 - x0 : ax1 - x0]


def render_gt_density(
    annotations: list[Annotation],
    extent: SceneExtent,
    downsample: float = DEFAULT_DOWNSAMPLE,
    boundaries: tuple[float, float, float] = DEFAULT_SCALE_BOUNDARIES,
) -> DensityMapSet:
    """Render ground-truth density maps, one per scale bucket.

    Each annotation contributes one unit-mass stamp to the map of its
    bucket; an annotation whose center lies outside the scene is rejected.
    """
    if downsample < 1:
        raise ValueError(f"downsample must be >= 1, got {downsample}")
    map_w = int(math.ceil(extent.width / downsample))
    map_h = int(math.ceil(extent.height / downsample))
    planes = [np.zeros((map_h, map_w), dtype=np.float64) for _ in ScaleLevel]

    for ann in annotations:
        cx, cy = ann.bbox.center
        if not extent.contains_point(cx, cy):
            raise ValueError(
                f"annotation {ann.id} center ({cx:.1f}, {cy:.1f}) lies outside the scene"
            )
        sigma_map = sigma_for(ann.bbox) / downsample
        stamp = make_stamp((cx / downsample, cy / downsample), sigma_map)
        _splat(planes[int(scale_bucket(ann.bbox, boundaries))], stamp)

    return DensityMapSet(
        maps=tuple(DensityMap(values=p, downsample=float(downsample)) for p in planes)
    )


def scale_aware_loss(
    pred: DensityMapSet,
    gt: DensityMapSet,
    alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS,
) -> float:
    """Weighted sum over scales of the per-cell mean squared difference.

    The per-scale weights counter the heavy example imbalance across
    scale buckets; defaults weight the sparse large scales up.
    """
    if (pred.width, pred.height, pred.downsample) != (gt.width, gt.height, gt.downsample):
        raise ValueError(
            f"geometry mismatch: pred {pred.width}x{pred.height}@{pred.downsample} "
            f"vs gt {gt.width}x{gt.height}@{gt.downsample}"
        )
    if len(alphas) != len(ScaleLevel):
        raise ValueError(f"expected {len(ScaleLevel)} alpha weights, got {len(alphas)}")
    total = 0.0
    for scale in ScaleLevel:
        diff = pred[scale].values - gt[scale].values
        total += alphas[int(scale)] * float(np.mean(diff * diff))
    return total


def apply_count_scale(dmap: DensityMap, factor: float) -> DensityMap:
    """Multiply all densities by a positive factor (training-style scaling)."""
    if not factor > 0:
        raise ValueError(f"count scale factor must be positive, got {factor}")
    return DensityMap(values=dmap.values * factor, downsample=dmap.downsample)


def invert_count_scale(dmap: DensityMap, factor: float) -> DensityMap:
    """Undo apply_count_scale with the same factor."""
    if not factor > 0:
        raise ValueError(f"count scale factor must be positive, got {factor}")
    return DensityMap(values=dmap.values / factor, downsample=dmap.downsample)


def write_dmap(dset: DensityMapSet, path: str | Path) -> None:
    """Write a map set as a DMAP file.

    Planes are stored as little-endian float32 in TINY..LARGE order;
    values outside float32 precision are rounded on write.
    """
    header = _DMAP_HEADER.pack(
        DMAP_MAGIC, DMAP_VERSION, DMAP_PLANES, dset.width, dset.height, dset.downsample
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for scale in ScaleLevel:
            fh.write(np.ascontiguousarray(dset[scale].values, dtype="<f4").tobytes())


def read_dmap(path: str | Path) -> DensityMapSet:
    """Read a DMAP file, validating magic, version, plane count, and size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DMAP_HEADER.size:
        raise DmapTruncatedError(f"{path}: {len(blob)} bytes is shorter than the DMAP header")
    magic, version, plane_count, width, height, downsample = _DMAP_HEADER.unpack_from(blob)
    if magic != DMAP_MAGIC:
        raise DmapMagicError(f"{path}: bad magic {magic!r}")
    if version != DMAP_VERSION:
        raise DmapVersionError(f"{path}: unsupported version {version}")
    if plane_count != DMAP_PLANES:
        raise DmapPlaneCountError(f"{path}: expected {DMAP_PLANES} planes, found {plane_count}")
    cells = int(width) * int(height)
    if width == 0 or height == 0 or cells > _DMAP_MAX_CELLS:
        raise DmapDimensionError(f"{path}: implausible plane dimensions {width}x{height}")
    if downsample < 1 or not math.isfinite(downsample):
        raise DmapDimensionError(f"{path}: invalid downsample {downsample}")
    expected = _DMAP_HEADER.size + DMAP_PLANES * cells * 4
    if len(blob) < expected:
        raise DmapTruncatedError(
            f"{path}: payload needs {expected} bytes, file has {len(blob)}"
        )

    maps = []
    offset = _DMAP_HEADER.size
    for _ in range(DMAP_PLANES):
        plane = np.frombuffer(blob, dtype="<f4", count=cells, offset=offset)
        offset += cells * 4
        values = plane.reshape(height, width).astype(np.float64)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DmapValueError(f"{path}: plane contains negative or non-finite densities")
        maps.append(DensityMap(values=values, downsample=float(downsample)))
    return DensityMapSet(maps=tuple(maps))
