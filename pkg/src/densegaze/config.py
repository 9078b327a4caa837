"""Pipeline configuration: defaults, key=value files, and CLI overrides.

Precedence is built-in defaults < config file < explicit overrides.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .core import ScaleLevel, SceneExtent
from .density import DEFAULT_ALPHAS, DEFAULT_COUNT_SCALE, DEFAULT_DOWNSAMPLE
from .core import DEFAULT_SCALE_BOUNDARIES
from .gaze import default_standard_size
from .merge import DEFAULT_NMS_IOU
from .saccade import (
    DEFAULT_DENSITY_THRESHOLD,
    DEFAULT_EXPANSION,
    DEFAULT_GRID_CELLS,
    GridSpec,
)


class ConfigError(Exception):
    """Invalid configuration value, file, or key."""


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline tunables with their stock defaults."""

    downsample: float = DEFAULT_DOWNSAMPLE
    boundaries: tuple[float, float, float] = DEFAULT_SCALE_BOUNDARIES
    grids: tuple[int, int, int, int] = DEFAULT_GRID_CELLS
    threshold: float = DEFAULT_DENSITY_THRESHOLD
    expansion: float = DEFAULT_EXPANSION
    alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS
    count_scale: float = DEFAULT_COUNT_SCALE
    nms_iou: float = DEFAULT_NMS_IOU
    standard_size: tuple[int, int] | None = None
    workers: int = 1
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        if self.downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {self.downsample}")
        b = self.boundaries
        if len(b) != 3 or not (0 < b[0] < b[1] < b[2]):
            raise ConfigError(f"boundaries must be three increasing thresholds, got {b}")
        if len(self.grids) != 4 or any(g < 1 for g in self.grids):
            raise ConfigError(f"grids must be four counts >= 1, got {self.grids}")
        if self.threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if len(self.alphas) != 4 or any(a < 0 for a in self.alphas):
            raise ConfigError(f"alphas must be four non-negative weights, got {self.alphas}")
        if self.count_scale <= 0:
            raise ConfigError(f"count_scale must be positive, got {self.count_scale}")
        if not 0 < self.nms_iou <= 1:
            raise ConfigError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        if self.standard_size is not None and any(v < 2 for v in self.standard_size):
            raise ConfigError(f"standard_size must be at least 2x2, got {self.standard_size}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        return self

    def grid_specs(self) -> dict[ScaleLevel, GridSpec]:
        return {s: GridSpec(s, self.grids[int(s)], self.grids[int(s)]) for s in ScaleLevel}

    def resolve_standard_size(self, extent: SceneExtent) -> tuple[int, int]:
        """The configured standard size, or the scene-derived default."""
        if self.standard_size is not None:
            return self.standard_size
        tiny = self.grids[int(ScaleLevel.TINY)]
        return default_standard_size(extent, (tiny, tiny), self.expansion)

    def to_file_text(self) -> str:
        """Effective config in the key=value file syntax."""
        lines = [
            f"downsample={_fmt(self.downsample)}",
            "boundaries=" + ",".join(_fmt(v) for v in self.boundaries),
            "grids=" + ",".join(str(v) for v in self.grids),
            f"threshold={_fmt(self.threshold)}",
            f"expansion={_fmt(self.expansion)}",
            "alphas=" + ",".join(_fmt(v) for v in self.alphas),
            f"count_scale={_fmt(self.count_scale)}",
            f"nms_iou={_fmt(self.nms_iou)}",
            "standard_size="
            + ("auto" if self.standard_size is None else f"{self.standard_size[0]}x{self.standard_size[1]}"),
            f"workers={self.workers}",
            f"seed={self.seed}",
        ]
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return repr(float(v))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "downsample":
            return float(raw)
        if key == "boundaries":
            vals = tuple(float(v) for v in raw.split(","))
            return vals
        if key == "grids":
            return tuple(int(v) for v in raw.split(","))
        if key in ("threshold", "expansion", "count_scale", "nms_iou"):
            return float(raw)
        if key == "alphas":
            return tuple(float(v) for v in raw.split(","))
        if key == "standard_size":
            if raw == "auto":
                return None
            w, h = raw.split("x")
            return (int(w), int(h))
        if key in ("workers", "seed"):
            return int(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r}: {exc}") from exc
    raise ConfigError(f"unknown config key {key!r}")


_KNOWN_KEYS = {f.name for f in fields(PipelineConfig)}


def parse_config_file(path: str | Path) -> dict:
    """Read a line-oriented key=value file; '#' starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def build_config(file_path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Layer file values and explicit overrides onto the defaults."""
    config = PipelineConfig()
    if file_path is not None:
        config = replace(config, **parse_config_file(file_path))
    if overrides:
        unknown = set(overrides) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config = replace(config, **overrides)
    return config.validate()
