"""Stage one: pick out the image regions worth detailed detection.

Each scale's density map is partitioned into a coarse grid, the expected
object count of every cell is read off a summed-area table, and cells
above a density threshold become patches, grown about their centers so
neighbors overlap and objects on cell borders stay whole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, ScaleLevel, SceneExtent
from .density import DensityMap, DensityMapSet

DEFAULT_GRID_CELLS = (16, 8, 4, 2)
DEFAULT_DENSITY_THRESHOLD = 0.2
DEFAULT_EXPANSION = 1.2


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry for one scale level."""

    scale: ScaleLevel
    cells_x: int
    cells_y: int

    def __post_init__(self) -> None:
        if self.cells_x < 1 or self.cells_y < 1:
            raise ValueError(f"grid must have at least one cell, got {self.cells_x}x{self.cells_y}")


def default_grids(cells: tuple[int, int, int, int] = DEFAULT_GRID_CELLS) -> dict[ScaleLevel, GridSpec]:
    """Square grids per scale; finer grids for smaller objects."""
    return {s: GridSpec(s, cells[int(s)], cells[int(s)]) for s in ScaleLevel}


@dataclass(frozen=True)
class IntegralImage:
    """Summed-area table over a density map, with a zero top row and left column."""

    table: np.ndarray

    def rect_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum of map cells in the half-open rectangle [x0,x1) x [y0,y1)."""
        t = self.table
        s = t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]
        # Cancellation can leave a tiny negative residue on zero regions.
        return max(float(s), 0.0)


@dataclass(frozen=True)
class CellDensity:
    """Expected object count inside one grid cell.

    region is the cell footprint in original-image pixels; cells of one
    grid tile the scene exactly.
    """

    scale: ScaleLevel
    ix: int
    iy: int
    region: BoundingBox
    density: float


@dataclass(frozen=True)
class Patch:
    """A selected region: its cell grown by the expansion factor and clipped."""

    scale: ScaleLevel
    ix: int
    iy: int
    region: BoundingBox
    density: float


def build_integral(dmap: DensityMap) -> IntegralImage:
    """Build the summed-area table for a density map."""
    h, w = dmap.values.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(dmap.values, axis=0, out=table[1:, 1:])
    np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
    return IntegralImage(table=table)


def _axis_bounds(map_cells: int, grid_cells: int) -> list[int]:
    """Cell boundaries along one axis; floor rule so the grid tiles exactly."""
    return [(i * map_cells) // grid_cells for i in range(grid_cells + 1)]


def grid_densities(dmap: DensityMap, grid: GridSpec, extent: SceneExtent) -> list[CellDensity]:
    """Integrate the map over each grid cell; cells ordered row-major (iy, ix)."""
    if grid.cells_x > dmap.width or grid.cells_y > dmap.height:
        raise ValueError(
            f"grid {grid.cells_x}x{grid.cells_y} is finer than the {dmap.width}x{dmap.height} map"
        )
    integral = build_integral(dmap)
    xs = _axis_bounds(dmap.width, grid.cells_x)
    ys = _axis_bounds(dmap.height, grid.cells_y)
    d = dmap.downsample

    cells: list[CellDensity] = []
    for iy in range(grid.cells_y):
        y0, y1 = ys[iy], ys[iy + 1]
        ry0 = y0 * d
        ry1 = min(y1 * d, float(extent.height))
        for ix in range(grid.cells_x):
            x0, x1 = xs[ix], xs[ix + 1]
            rx0 = x0 * d
            rx1 = min(x1 * d, float(extent.width))
            region = BoundingBox(rx0, ry0, rx1 - rx0, ry1 - ry0)
            cells.append(
                CellDensity(
                    scale=grid.scale,
                    ix=ix,
                    iy=iy,
                    region=region,
                    density=integral.rect_sum(x0, y0, x1, y1),
                )
            )
    return cells


def expand_and_clip(region: BoundingBox, expansion: float, extent: SceneExtent) -> BoundingBox:
    """Grow a region about its center, then clip it to the scene."""
    cx, cy = region.center
    w = region.width * expansion
    h = region.height * expansion
    x0 = max(cx - w / 2.0, 0.0)
    y0 = max(cy - h / 2.0, 0.0)
    x1 = min(cx + w / 2.0, float(extent.width))
    y1 = min(cy + h / 2.0, float(extent.height))
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def select_patches(
    cells: list[CellDensity],
    threshold: float = DEFAULT_DENSITY_THRESHOLD,
    expansion: float = DEFAULT_EXPANSION,
    extent: SceneExtent | None = None,
) -> list[Patch]:
    """Turn cells strictly above the density threshold into expanded patches.

    The comparison is strict, so threshold 0 keeps exactly the cells with
    any mass. Patches clipped at a scene border keep their clipped region
    and are not re-centered. Output is ordered by (scale, iy, ix).
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    if expansion < 1:
        raise ValueError(f"expansion must be >= 1, got {expansion}")
    if extent is None:
        raise ValueError("select_patches requires the scene extent for clipping")
    selected = [c for c in cells if c.density > threshold]
    selected.sort(key=lambda c: (int(c.scale), c.iy, c.ix))
    return [
        Patch(
            scale=c.scale,
            ix=c.ix,
            iy=c.iy,
            region=expand_and_clip(c.region, expansion, extent),
            density=c.density,
        )
        for c in selected
    ]


def saccade(
    dset: DensityMapSet,
    grids: dict[ScaleLevel, GridSpec] | None = None,
    threshold: float = DEFAULT_DENSITY_THRESHOLD,
    expansion: float = DEFAULT_EXPANSION,
    extent: SceneExtent | None = None,
) -> list[Patch]:
    """Run patch selection over all four scales; output ordered TINY..LARGE."""
    if extent is None:
        raise ValueError("saccade requires the scene extent")
    if grids is None:
        grids = default_grids()
    patches: list[Patch] = []
    for scale in ScaleLevel:
        cells = grid_densities(dset[scale], grids[scale], extent)
        patches.extend(select_patches(cells, threshold, expansion, extent))
    return patches


def patch_manifest(patches: list[Patch]) -> list[dict]:
    """JSON-ready manifest rows for a patch list."""
    return [
        {
            "scale": p.scale.label,
            "cell": [p.ix, p.iy],
            "region": [p.region.x, p.region.y, p.region.width, p.region.height],
            "density": p.density,
        }
        for p in patches
    ]
