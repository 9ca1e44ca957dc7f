"""Signal environment: arena geometry, acoustic point source, noise, grid fields.

Every field maps a planar position to a sound pressure level in dB. Fields are
plain callables so downstream code never cares whether samples come from the
analytic model, a noisy wrapper around it, or an interpolated measurement grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

#: Reference pressure for SPL, Pa (hearing threshold).
DEFAULT_P_REF = 20e-6
#: Source pressure amplitude at 1 m, Pa. Yields roughly 85 dB at the clamp distance.
DEFAULT_P0 = 0.00495
#: Distance clamp, m; keeps the level finite at the source itself.
DEFAULT_R_MIN = 0.01


@dataclass(frozen=True, slots=True)
class Position:
    """A point in the arena plane, metres."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @staticmethod
    def from_array(a: Sequence[float]) -> "Position":
        return Position(float(a[0]), float(a[1]))


def distance(a: Position, b: Position) -> float:
    """Euclidean distance between two positions."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True, slots=True)
class ArenaBounds:
    """Axis-aligned rectangular workspace."""

    lower: Position
    upper: Position

    def __post_init__(self) -> None:
        if not (self.lower.x < self.upper.x and self.lower.y < self.upper.y):
            raise ValueError("arena bounds must satisfy lower < upper componentwise")

    @property
    def width(self) -> float:
        return self.upper.x - self.lower.x

    @property
    def height(self) -> float:
        return self.upper.y - self.lower.y

    def diagonal(self) -> float:
        """Length of the corner-to-corner diagonal."""
        return math.hypot(self.width, self.height)

    def contains(self, pos: Position, slack: float = 0.0) -> bool:
        return (
            self.lower.x - slack <= pos.x <= self.upper.x + slack
            and self.lower.y - slack <= pos.y <= self.upper.y + slack
        )

    def clip(self, pos: Position) -> Position:
        """Project a point onto the workspace rectangle."""
        return Position(
            min(max(pos.x, self.lower.x), self.upper.x),
            min(max(pos.y, self.lower.y), self.upper.y),
        )

    def sample(self, rng: np.random.Generator) -> Position:
        """Uniform random point inside the workspace."""
        return Position(
            float(rng.uniform(self.lower.x, self.upper.x)),
            float(rng.uniform(self.lower.y, self.upper.y)),
        )


#: The 2 m x 2 m bench arena used throughout the shipped experiment configs.
DEFAULT_ARENA = ArenaBounds(Position(-1.0, -1.0), Position(1.0, 1.0))


@dataclass(frozen=True, slots=True)
class AcousticSource:
    """Monopole sound source emitting a constant tone."""

    location: Position
    p0: float = DEFAULT_P0
    p_ref: float = DEFAULT_P_REF
    r_min: float = DEFAULT_R_MIN

    def __post_init__(self) -> None:
        if self.p0 <= 0 or self.p_ref <= 0 or self.r_min <= 0:
            raise ValueError("source pressures and distance clamp must be positive")


def acoustic_spl(pos: Position, source: AcousticSource) -> float:
    """Sound pressure level at ``pos``, dB.

    Spherical spreading from a point source: RMS pressure p0/(sqrt(2) r) with
    the distance clamped below by ``r_min``, converted to dB re ``p_ref``.
    """
    r = max(distance(pos, source.location), source.r_min)
    p = source.p0 / (math.sqrt(2.0) * r)
    return 20.0 * math.log10(p / source.p_ref)


# --------------------------------------------------------------------------- noise


@dataclass(frozen=True, slots=True)
class NoiseConfig:
    """Measurement corruption model: Gaussian jitter plus sparse large outliers.

    ``outlier_range`` bounds the magnitude of an outlier offset, drawn uniform
    and added with random sign.
    """

    gaussian_sigma: float = 1.0
    outlier_probability: float = 0.02
    outlier_range: tuple[float, float] = (15.0, 30.0)

    def __post_init__(self) -> None:
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if not 0.0 <= self.outlier_probability <= 1.0:
            raise ValueError("outlier_probability must lie in [0, 1]")
        lo, hi = self.outlier_range
        if lo < 0 or hi < lo:
            raise ValueError("outlier_range must satisfy 0 <= low <= high")

    @staticmethod
    def none() -> "NoiseConfig":
        """Noise-free configuration (draws nothing from the stream)."""
        return NoiseConfig(gaussian_sigma=0.0, outlier_probability=0.0)

    @property
    def is_zero(self) -> bool:
        return self.gaussian_sigma == 0.0 and self.outlier_probability == 0.0


def perturb(value: float, noise: NoiseConfig, rng: np.random.Generator) -> float:
    """Apply the corruption model to one reading.

    Zero-noise configs consume no random draws, so a noiseless run is
    bit-reproducible regardless of which generator is passed in.
    """
    if noise.is_zero:
        return value
    out = value
    if noise.gaussian_sigma > 0.0:
        out += noise.gaussian_sigma * float(rng.standard_normal())
    if noise.outlier_probability > 0.0 and float(rng.random()) < noise.outlier_probability:
        lo, hi = noise.outlier_range
        magnitude = float(rng.uniform(lo, hi))
        sign = 1.0 if float(rng.random()) < 0.5 else -1.0
        out += sign * magnitude
    return out


#: Anything mapping a Position to a dB level acts as a signal field.
SignalField = Callable[[Position], float]


class PointSourceField:
    """Noise-free analytic field around an acoustic source."""

    def __init__(self, source: AcousticSource):
        self.source = source

    @property
    def source_location(self) -> Position:
        return self.source.location

    def __call__(self, pos: Position) -> float:
        return acoustic_spl(pos, self.source)


class NoisyField:
    """Wraps a base field with the measurement corruption model."""

    def __init__(self, base: SignalField, noise: NoiseConfig, rng: np.random.Generator):
        self.base = base
        self.noise = noise
        self.rng = rng

    @property
    def source_location(self) -> Position:
        return getattr(self.base, "source_location")

    def __call__(self, pos: Position) -> float:
        return perturb(self.base(pos), self.noise, self.rng)


def noisy_sample(
    field: SignalField, pos: Position, noise: NoiseConfig, rng: np.random.Generator
) -> float:
    """One corrupted reading of ``field`` at ``pos``."""
    return perturb(field(pos), noise, rng)


# ---------------------------------------------------------------------- grid fields


@dataclass(frozen=True)
class GridField:
    """Levels tabulated on a rectilinear grid; row-major with y varying slowest."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "values", vals)
        if xs.ndim != 1 or ys.ndim != 1 or len(xs) < 2 or len(ys) < 2:
            raise ValueError("grid needs at least 2 coordinates per axis")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("grid coordinates must be strictly increasing")
        if vals.shape != (len(ys), len(xs)):
            raise ValueError(
                f"values shape {vals.shape} does not match grid ({len(ys)}, {len(xs)})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")

    def peak(self) -> Position:
        """Grid node with the highest level (first in row-major order on ties)."""
        iy, ix = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return Position(float(self.xs[ix]), float(self.ys[iy]))


class GridSignalField:
    """Bilinear interpolation over a GridField; queries are clamped to the grid."""

    def __init__(self, grid: GridField):
        self.grid = grid

    @property
    def source_location(self) -> Position:
        return self.grid.peak()

    def __call__(self, pos: Position) -> float:
        g = self.grid
        x = min(max(pos.x, float(g.xs[0])), float(g.xs[-1]))
        y = min(max(pos.y, float(g.ys[0])), float(g.ys[-1]))
        ix = int(np.clip(np.searchsorted(g.xs, x, side="right") - 1, 0, len(g.xs) - 2))
        iy = int(np.clip(np.searchsorted(g.ys, y, side="right") - 1, 0, len(g.ys) - 2))
        tx = (x - g.xs[ix]) / (g.xs[ix + 1] - g.xs[ix])
        ty = (y - g.ys[iy]) / (g.ys[iy + 1] - g.ys[iy])
        v00 = g.values[iy, ix]
        v10 = g.values[iy, ix + 1]
        v01 = g.values[iy + 1, ix]
        v11 = g.values[iy + 1, ix + 1]
        top = (1.0 - tx) * v01 + tx * v11
        bot = (1.0 - tx) * v00 + tx * v10
        return float((1.0 - ty) * bot + ty * top)


def interp_field(grid: GridField) -> GridSignalField:
    """Continuous field backed by a measurement grid."""
    return GridSignalField(grid)


def grid_scan(field: SignalField, bounds: ArenaBounds, resolution: int) -> GridField:
    """Sample ``field`` on a regular resolution x resolution grid over ``bounds``."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    xs = np.linspace(bounds.lower.x, bounds.upper.x, resolution)
    ys = np.linspace(bounds.lower.y, bounds.upper.y, resolution)
    values = np.empty((resolution, resolution), dtype=float)
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            values[iy, ix] = field(Position(float(x), float(y)))
    return GridField(xs=xs, ys=ys, values=values)


GRID_HEADER = "x,y,phi_db"


def write_grid(grid: GridField, path: str | Path, comments: Iterable[str] = ()) -> None:
    """Write a grid as CSV: optional ``#`` comment lines, header, one row per node.

    Nine significant digits per number; rows ordered y-major then x, matching
    the in-memory layout, so write -> read -> write is byte-stable.
    """
    lines: list[str] = []
    for comment in comments:
        text = str(comment)
        lines.append(text if text.startswith("#") else f"# {text}")
    lines.append(GRID_HEADER)
    for iy in range(len(grid.ys)):
        for ix in range(len(grid.xs)):
            lines.append(
                f"{grid.xs[ix]:.9g},{grid.ys[iy]:.9g},{grid.values[iy, ix]:.9g}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path: str | Path) -> tuple[GridField, list[str]]:
    """Parse a grid CSV produced by :func:`write_grid`.

    Returns the grid and any leading/interior comment lines (without ``#``).
    Rows may appear in any order but must cover a full rectilinear grid.
    """
    comments: list[str] = []
    rows: list[tuple[float, float, float]] = []
    saw_header = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line.lstrip("#").strip())
            continue
        if not saw_header:
            if line != GRID_HEADER:
                raise ValueError(f"{path}: line {lineno}: expected header {GRID_HEADER!r}")
            saw_header = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 columns, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not saw_header or not rows:
        raise ValueError(f"{path}: no grid data")
    xs = np.unique([r[0] for r in rows])
    ys = np.unique([r[1] for r in rows])
    if len(xs) * len(ys) != len(rows):
        raise ValueError(f"{path}: rows do not form a full {len(ys)}x{len(xs)} grid")
    values = np.full((len(ys), len(xs)), np.nan)
    for x, y, v in rows:
        ix = int(np.searchsorted(xs, x))
        iy = int(np.searchsorted(ys, y))
        values[iy, ix] = v
    if np.any(np.isnan(values)):
        raise ValueError(f"{path}: rows do not cover every grid node")
    return GridField(xs=xs, ys=ys, values=values), comments
