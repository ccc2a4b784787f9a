"""Place-to-frequency map of the spiral cochlea and the discrete angle grid.

Angles are in degrees throughout; 0 deg is the base (high frequencies) and
990 deg the apex (low frequencies).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THETA_MIN = 0.0
THETA_MAX = 990.0

_SCALE = 165.4
_GAIN = 3251.0 ** 2.1
_OFFSET = 177.3
_EXPONENT = -2.1 * 1.149
_SHIFT = 0.88


class TonotopyDomainError(ValueError):
    """Angle outside the cochlear range [0, 990] degrees."""


def place_to_frequency(theta):
    """Characteristic frequency in Hz at angular position ``theta`` (degrees).

    Accepts scalars or arrays. Strictly decreasing on [0, 990]; roughly
    14.6 kHz at the base and 10.4 Hz at the apex.
    """
    t = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < THETA_MIN) or np.any(t > THETA_MAX):
        raise TonotopyDomainError(f"theta must lie in [{THETA_MIN}, {THETA_MAX}] degrees")
    f = _SCALE * (_GAIN * (t + _OFFSET) ** _EXPONENT - _SHIFT)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class TonotopicMap:
    theta_min: float = THETA_MIN
    theta_max: float = THETA_MAX

    def __call__(self, theta):
        return place_to_frequency(theta)


@dataclass(frozen=True)
class AngleGrid:
    """Uniform angle grid ``k * spacing`` for ``k = 1..count``."""

    spacing: float
    count: int

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.count < 1:
            raise ValueError("grid needs at least one angle")
        if self.count * self.spacing > THETA_MAX + 1e-9:
            raise TonotopyDomainError(
                f"grid of {self.count} x {self.spacing} deg exceeds {THETA_MAX} deg"
            )

    @property
    def angles(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.count + 1, dtype=np.float64)

    @property
    def frequencies(self) -> np.ndarray:
        return place_to_frequency(self.angles)

    def __len__(self) -> int:
        return self.count


def angle_grid(spacing: float = 45.0, count: int = 20) -> AngleGrid:
    return AngleGrid(float(spacing), int(count))
