"""Frame records passed between pipeline stages.

Channel order is fixed everywhere: Hall cells 1, 3, 5, 7, 9 (indices 0-4),
piezo sides x+, x-, y+, y- (5-8), thermistor (9).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CHANNELS = 10
HALL_SLICE = slice(0, 5)
PIEZO_SLICE = slice(5, 9)
THERM_INDEX = 9

CHANNEL_NAMES = ("h1", "h3", "h5", "h7", "h9", "sx+", "sx-", "sy+", "sy-", "ntc")

ADC_BITS = 12
ADC_MAX = (1 << ADC_BITS) - 1
ADC_REF_V = 3.3

# thermistor divider: fixed 100k leg to ground, NTC to Vcc
THERM_DIVIDER_OHM = 100_000.0


def resistance_from_thermistor_volts(volts) -> np.ndarray:
    """Invert the thermistor divider read-out back to a resistance."""
    v = np.clip(np.asarray(volts, dtype=float), 1e-4, ADC_REF_V - 1e-4)
    return THERM_DIVIDER_OHM * (ADC_REF_V - v) / v


@dataclass(frozen=True)
class RawFrame:
    """One complete 10-channel sample set (500 Hz).

    Channels inside a frame are muxed sequentially at 5 kHz, so neighbours
    are up to 1.8 ms apart; the skew is accepted, not corrected.
    """

    seq: int  # uint16, wraps
    timestamp_us: int
    channels: tuple[int, ...]  # 10 ADC counts, each 0..4095

    def __post_init__(self):
        if not 0 <= self.seq <= 0xFFFF:
            raise ValueError(f"seq {self.seq} outside uint16")
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels, got {len(self.channels)}")
        if any(not 0 <= c <= ADC_MAX for c in self.channels):
            raise ValueError("channel count outside 12-bit range")

    def volts(self) -> np.ndarray:
        return np.asarray(self.channels, dtype=float) * (ADC_REF_V / ADC_MAX)


@dataclass(frozen=True)
class FilteredFrame:
    """Ten conditioned channel voltages at the 100 Hz processing rate."""

    timestamp_us: int
    channels: np.ndarray  # (10,) volts

    def __post_init__(self):
        if self.channels.shape != (N_CHANNELS,):
            raise ValueError(f"expected ({N_CHANNELS},) channels")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("non-finite channel value")


@dataclass(frozen=True)
class ForceState:
    """Calibrated output of one processing step."""

    timestamp_us: int
    normal_grid: np.ndarray  # (9,) N, grid positions 1..9
    shear: np.ndarray  # (4,) N, sides x+, x-, y+, y-
    temperature: float  # degC
    interference: bool = False
    saturated: bool = False

    @property
    def shear_vector(self) -> np.ndarray:
        s = self.shear
        return np.array([s[0] - s[1], s[2] - s[3]])

    @property
    def total_normal(self) -> float:
        return float(self.normal_grid.sum())

    @property
    def shear_magnitude(self) -> float:
        return float(np.hypot(*self.shear_vector))

    def as_dict(self) -> dict:
        return {
            "timestamp_us": self.timestamp_us,
            "normal_grid": [float(v) for v in self.normal_grid],
            "shear": {
                "x+": float(self.shear[0]),
                "x-": float(self.shear[1]),
                "y+": float(self.shear[2]),
                "y-": float(self.shear[3]),
            },
            "shear_vector": [float(v) for v in self.shear_vector],
            "temperature": float(self.temperature),
            "interference": bool(self.interference),
            "saturated": bool(self.saturated),
        }
