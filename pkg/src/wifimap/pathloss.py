"""RSSI <-> range conversion under a constant-decay path-loss model.

Ranges produced here are an uncalibrated distance proxy: a per-device
multiplicative gain (solved later) absorbs transmit-power differences,
so no attempt is made to express ranges in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DEFAULT_TX_DBM",
    "DEFAULT_GAMMA",
    "PathLossParams",
    "InvalidMeasurement",
    "rssi_to_range",
    "range_to_rssi",
]

DEFAULT_TX_DBM = -50.0
DEFAULT_GAMMA = 2.5


class InvalidMeasurement(ValueError):
    """Raised for non-finite RSSI or non-positive range inputs."""


@dataclass(frozen=True)
class PathLossParams:
    """Reference transmit power (dB) and decay exponent of the link model."""

    tx_dbm: float = DEFAULT_TX_DBM
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not math.isfinite(self.tx_dbm):
            raise ValueError(f"tx_dbm must be finite, got {self.tx_dbm}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be finite and > 0, got {self.gamma}")


def rssi_to_range(rssi_dbm: float, params: PathLossParams = PathLossParams()) -> float:
    """Convert a received power in dBm to an uncalibrated range.

    Strictly positive and strictly decreasing in ``rssi_dbm``.
    """
    if not math.isfinite(rssi_dbm):
        raise InvalidMeasurement(f"RSSI must be finite, got {rssi_dbm}")
    return 10.0 ** ((params.tx_dbm - rssi_dbm) / (10.0 * params.gamma))


def range_to_rssi(range_: float, params: PathLossParams = PathLossParams()) -> float:
    """Inverse of :func:`rssi_to_range`; used by the synthetic forward model."""
    if not (math.isfinite(range_) and range_ > 0):
        raise InvalidMeasurement(f"range must be finite and > 0, got {range_}")
    return params.tx_dbm - 10.0 * params.gamma * math.log10(range_)
