"""Microphone array model and the measurement cleanup pipeline.

A robot carries four microphones recessed into its circular body. Each mic
reports the ambient level; a fixed weighting projects the four readings to the
level at the body centre. Raw streams then pass through blockwise outlier
rejection and a centred moving average before any of it reaches a decider.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import NoiseConfig, perturb


@dataclass(frozen=True, slots=True)
class MicGeometry:
    """Physical mic layout on the robot body.

    Distances in centimetres. ``insets`` is how deep each mic sits from the
    body rim; ``angles_deg`` records where around the rim each mic points.
    The angles document the build and are not used by the centre projection,
    which depends on radial placement only.
    """

    body_radius: float = 3.5
    insets: tuple[float, float, float, float] = (0.35, 0.35, 1.25, 0.2)
    angles_deg: tuple[float, float, float, float] = (3.5, 75.0, 285.0, 180.0)

    def __post_init__(self) -> None:
        if self.body_radius <= 0:
            raise ValueError("body_radius must be positive")
        if len(self.insets) != 4 or len(self.angles_deg) != 4:
            raise ValueError("geometry describes exactly 4 microphones")
        for d in self.insets:
            if not 0 < d < self.body_radius:
                raise ValueError("each inset must lie strictly inside the body radius")


DEFAULT_MIC_GEOMETRY = MicGeometry()


@dataclass(frozen=True, slots=True)
class MicArrayReading:
    """One simultaneous reading of all four microphones, dB."""

    values: tuple[float, float, float, float]
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if len(self.values) != 4:
            raise ValueError("reading must carry exactly 4 mic values")


def center_weights(geometry: MicGeometry = DEFAULT_MIC_GEOMETRY) -> np.ndarray:
    """Per-mic weights projecting rim readings to the body centre.

    Weight k is (r / (r - d_k)) / D with normaliser
    D = 2 r/(r - d_0) + r/(r - d_2) + r/(r - d_3); the doubled first term
    matches the stock build where mics 0 and 1 sit at the same depth. The
    weights sum to 1 exactly when d_0 == d_1.
    """
    r = geometry.body_radius
    d = geometry.insets
    gains = np.array([r / (r - dk) for dk in d])
    norm = 2.0 * gains[0] + gains[2] + gains[3]
    return gains / norm


def center_spl(
    reading: MicArrayReading, geometry: MicGeometry = DEFAULT_MIC_GEOMETRY
) -> float:
    """Level at the body centre from one array reading."""
    return float(np.dot(center_weights(geometry), np.asarray(reading.values)))


def simulate_mics(
    true_level: float,
    noise: NoiseConfig,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> MicArrayReading:
    """Synthesise an array reading: four independent corruptions of one level.

    With a zero noise config nothing is drawn from ``rng``.
    """
    if noise.is_zero:
        vals = (true_level,) * 4
    else:
        vals = tuple(perturb(true_level, noise, rng) for _ in range(4))
    return MicArrayReading(values=vals, timestamp=timestamp)


# ----------------------------------------------------------------- stream cleanup


@dataclass(frozen=True, slots=True)
class FilterConfig:
    """Cleanup parameters: outlier block length and smoothing width.

    ``window`` is both the block size and the threshold offset in dB; even
    windows are fine (the median averages the middle pair). ``smooth_width``
    must be odd so the moving average stays centred.
    """

    window: int = 10
    smooth_width: int = 5

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.smooth_width < 1 or self.smooth_width % 2 == 0:
            raise ValueError("smooth_width must be odd and >= 1")


def _outlier_mask(window: Sequence[float], n: int) -> list[bool]:
    threshold = float(np.median(np.asarray(window, dtype=float))) + n
    return [v <= threshold for v in window]


def remove_outliers(window: Sequence[float], n: int) -> list[float]:
    """Drop implausibly loud readings from one block.

    Keeps, in order, every value not exceeding median(window) + n. The offset
    equals the block length by convention: longer blocks tolerate more spread.
    """
    if len(window) == 0:
        raise ValueError("window must not be empty")
    if n != len(window):
        raise ValueError(f"n ({n}) must equal the window length ({len(window)})")
    mask = _outlier_mask(window, n)
    return [float(v) for v, keep in zip(window, mask) if keep]


def smooth(series: Sequence[float], width: int) -> list[float]:
    """Centred moving average; edge windows shrink rather than pad."""
    if width < 1 or width % 2 == 0:
        raise ValueError("width must be odd and >= 1")
    arr = np.asarray(series, dtype=float)
    half = width // 2
    out: list[float] = []
    for i in range(len(arr)):
        lo = max(0, i - half)
        hi = min(len(arr), i + half + 1)
        out.append(float(arr[lo:hi].mean()))
    return out


def filter_trajectory(
    values: Sequence[float], config: FilterConfig = FilterConfig()
) -> tuple[list[float], list[int]]:
    """Full cleanup of one leg's readings.

    The stream is cut into consecutive blocks of ``config.window`` readings
    (the last block may be shorter and uses its own length as the offset),
    outliers are dropped per block, and the survivors are smoothed as one
    series. Returns the smoothed values and the surviving original indices,
    so callers can keep filtered readings aligned with their raw samples.
    """
    kept: list[int] = []
    for start in range(0, len(values), config.window):
        block = list(values[start : start + config.window])
        for offset, keep in enumerate(_outlier_mask(block, len(block))):
            if keep:
                kept.append(start + offset)
    smoothed = smooth([float(values[i]) for i in kept], config.smooth_width)
    return smoothed, kept
