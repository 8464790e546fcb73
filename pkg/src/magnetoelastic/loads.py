"""Analytic load families: amplitude x time profile x spatial profile.

Every load provides its value, spatial gradient and time derivative in
closed form so that energy audits never difference loads numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = ["TimeProfile", "SpatialProfile", "FieldLoad"]

_TIME_KINDS = ("constant", "ramp", "sinusoid")
_SPACE_KINDS = ("uniform", "gaussian")


@dataclass(frozen=True)
class TimeProfile:
    """Scalar factor ``T(t)``.

    ``constant``: 1.  ``ramp``: ``min(t / period, 1)`` smoothed as
    ``3u^2 - 2u^3`` so the derivative is continuous.  ``sinusoid``:
    ``sin(2 pi t / period + phase)``.
    """

    kind: str = "constant"
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in _TIME_KINDS:
            raise ValidationError(f"unknown time profile {self.kind!r}")
        if not self.period > 0:
            raise ValidationError("time profile period must be positive")

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "ramp":
            u = min(max(t / self.period, 0.0), 1.0)
            return u * u * (3 - 2 * u)
        return float(np.sin(2 * np.pi * t / self.period + self.phase))

    def rate(self, t: float) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "ramp":
            u = t / self.period
            if u <= 0 or u >= 1:
                return 0.0
            return 6 * u * (1 - u) / self.period
        w = 2 * np.pi / self.period
        return float(w * np.cos(w * t + self.phase))


@dataclass(frozen=True)
class SpatialProfile:
    """Scalar factor ``S(y)``: 1, or ``exp(-|y - center|^2 / (2 width^2))``."""

    kind: str = "uniform"
    center: tuple = (0.5, 0.5)
    width: float = 0.25

    def __post_init__(self):
        if self.kind not in _SPACE_KINDS:
            raise ValidationError(f"unknown spatial profile {self.kind!r}")
        if not self.width > 0:
            raise ValidationError("spatial profile width must be positive")

    def value(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform":
            return np.ones(y.shape[0])
        c = np.asarray(self.center, dtype=float)[: y.shape[1]]
        return np.exp(-np.sum((y - c) ** 2, axis=1) / (2 * self.width**2))

    def gradient(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform":
            return np.zeros_like(y)
        c = np.asarray(self.center, dtype=float)[: y.shape[1]]
        return -(y - c) / self.width**2 * self.value(y)[:, None]


@dataclass(frozen=True)
class FieldLoad:
    """``amplitude * T(t) * S(y)`` with vector or scalar amplitude."""

    amplitude: tuple = (0.0,)
    time: TimeProfile = field(default_factory=TimeProfile)
    space: SpatialProfile = field(default_factory=SpatialProfile)

    @classmethod
    def zero(cls, rank: int) -> "FieldLoad":
        return cls(tuple([0.0] * max(rank, 1)))

    @classmethod
    def constant(cls, amplitude) -> "FieldLoad":
        return cls(tuple(np.atleast_1d(np.asarray(amplitude, dtype=float)).tolist()))

    @property
    def amp(self) -> np.ndarray:
        return np.asarray(self.amplitude, dtype=float)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.amp)

    def value(self, y: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``(n, k)`` values (``k`` amplitude components)."""
        return self.time.value(t) * self.space.value(y)[:, None] * self.amp[None, :]

    def gradient(self, y: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``(n, k, d)`` spatial gradient ``d value_i / d y_j``."""
        return self.time.value(t) * self.amp[None, :, None] * self.space.gradient(y)[:, None, :]

    def rate(self, y: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``(n, k)`` time derivative."""
        return self.time.rate(t) * self.space.value(y)[:, None] * self.amp[None, :]

    def scalar(self, y: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.value(y, t)[:, 0]
