"""Signal conditioning ahead of calibration.

The acquisition stream arrives at 500 Hz; groups of five frames are
averaged down to the 100 Hz processing rate, then a 15-sample moving
average and a 4th-order Butterworth low-pass (5 Hz cutoff) are applied in
that order.  Streaming classes keep per-channel state for the live path;
batch helpers run the identical recurrences over arrays for the offline
calibration path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _signal

from .frames import N_CHANNELS, FilteredFrame


@dataclass(frozen=True)
class FilterSpec:
    ma_window: int = 15
    butter_order: int = 4
    sample_rate_hz: float = 100.0
    cutoff_hz: float = 5.0
    decimate_by: int = 5  # 500 Hz acquisition -> 100 Hz processing

    def __post_init__(self):
        if self.ma_window < 1:
            raise ValueError(f"ma_window must be >= 1, got {self.ma_window}")
        if self.butter_order < 2 or self.butter_order % 2:
            raise ValueError(f"butter_order must be even and >= 2, got {self.butter_order}")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise ValueError(
                f"cutoff {self.cutoff_hz} Hz must sit below Nyquist "
                f"({self.sample_rate_hz / 2} Hz)"
            )
        if self.decimate_by < 1:
            raise ValueError("decimate_by must be >= 1")

    def to_json(self) -> dict:
        return {
            "ma_window": self.ma_window,
            "butter_order": self.butter_order,
            "sample_rate_hz": self.sample_rate_hz,
            "cutoff_hz": self.cutoff_hz,
            "decimate_by": self.decimate_by,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FilterSpec":
        return cls(
            ma_window=int(doc["ma_window"]),
            butter_order=int(doc["butter_order"]),
            sample_rate_hz=float(doc["sample_rate_hz"]),
            cutoff_hz=float(doc["cutoff_hz"]),
            decimate_by=int(doc.get("decimate_by", 5)),
        )


@dataclass(frozen=True)
class Biquad:
    """One second-order section, normalized (a0 = 1)."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def response_at(self, z: complex) -> complex:
        num = self.b0 + self.b1 / z + self.b2 / z**2
        den = 1.0 + self.a1 / z + self.a2 / z**2
        return num / den


def butterworth_design(spec: FilterSpec) -> list[Biquad]:
    """Low-pass Butterworth as a cascade of biquads.

    Analog prototype pole pairs mapped through the bilinear transform with
    frequency pre-warping; each section's numerator is rescaled so the
    cascade has exactly unit DC gain.
    """
    n = spec.butter_order
    k = math.tan(math.pi * spec.cutoff_hz / spec.sample_rate_hz)  # pre-warped
    sections = []
    for pair in range(n // 2):
        theta = math.pi * (2 * pair + 1) / (2 * n)
        q = 1.0 / (2.0 * math.sin(theta))
        norm = 1.0 / (1.0 + k / q + k * k)
        b0 = k * k * norm
        b1 = 2.0 * b0
        b2 = b0
        a1 = 2.0 * (k * k - 1.0) * norm
        a2 = (1.0 - k / q + k * k) * norm
        # pin DC gain to exactly 1 against float round-off
        dc = (b0 + b1 + b2) / (1.0 + a1 + a2)
        sections.append(Biquad(b0 / dc, b1 / dc, b2 / dc, a1, a2))
    return sections


def cascade_response(sections: list[Biquad], freq_hz, sample_rate_hz: float):
    """Complex frequency response of a biquad cascade (direct evaluation)."""
    w = 2.0 * np.pi * np.asarray(freq_hz, dtype=float) / sample_rate_hz
    z = np.exp(1j * w)
    h = np.ones_like(z, dtype=complex)
    for s in sections:
        h = h * (s.b0 + s.b1 / z + s.b2 / z**2) / (1.0 + s.a1 / z + s.a2 / z**2)
    return h


class MovingAverage:
    """Causal mean of the last ``window`` samples, per channel.

    During warm-up the mean runs over the samples seen so far, so a
    constant input is reproduced exactly from the first sample.
    """

    def __init__(self, window: int, n_channels: int = N_CHANNELS):
        self.window = int(window)
        self.n_channels = n_channels
        self._buf = np.zeros((self.window, n_channels))
        self._idx = 0
        self._count = 0

    def reset(self) -> None:
        self._buf[:] = 0.0
        self._idx = 0
        self._count = 0

    def push(self, x: np.ndarray) -> np.ndarray:
        self._buf[self._idx] = x
        self._idx = (self._idx + 1) % self.window
        if self._count < self.window:
            self._count += 1
            return self._buf[: self._count].sum(axis=0) / self._count
        return self._buf.sum(axis=0) / self.window


def moving_average_batch(x: np.ndarray, window: int) -> np.ndarray:
    """Vectorized equivalent of MovingAverage.push over axis 0."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(len(x), -1)
    csum = np.cumsum(flat, axis=0)
    out = np.empty_like(flat)
    w = min(window, len(flat))
    counts = np.arange(1, w + 1, dtype=float)
    out[:w] = csum[:w] / counts[:, None]
    if len(flat) > window:
        out[window:] = (csum[window:] - csum[:-window]) / window
    return out.reshape(x.shape)


class BiquadCascade:
    """Stateful cascade (transposed direct form II), per channel.

    A non-finite input resets the state and bumps ``error_count`` instead of
    poisoning the recursion.
    """

    def __init__(self, sections: list[Biquad], n_channels: int = N_CHANNELS):
        self.sections = sections
        self.n_channels = n_channels
        self._s1 = np.zeros((len(sections), n_channels))
        self._s2 = np.zeros((len(sections), n_channels))
        self.error_count = 0

    def reset(self) -> None:
        self._s1[:] = 0.0
        self._s2[:] = 0.0

    def push(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            self.error_count += 1
            self.reset()
            x = np.where(np.isfinite(x), x, 0.0)
        y = x
        for i, s in enumerate(self.sections):
            out = s.b0 * y + self._s1[i]
            self._s1[i] = s.b1 * y - s.a1 * out + self._s2[i]
            self._s2[i] = s.b2 * y - s.a2 * out
            y = out
        return y


def cascade_batch(sections: list[Biquad], x: np.ndarray) -> np.ndarray:
    """Run the cascade over axis 0 of an array with zero initial state."""
    y = np.asarray(x, dtype=float)
    for s in sections:
        y = _signal.lfilter([s.b0, s.b1, s.b2], [1.0, s.a1, s.a2], y, axis=0)
    return y


class Decimator:
    """Average each group of ``factor`` samples; emits once per group."""

    def __init__(self, factor: int, n_channels: int = N_CHANNELS):
        self.factor = int(factor)
        self.n_channels = n_channels
        self._acc = np.zeros(n_channels)
        self._count = 0

    def reset(self) -> None:
        self._acc[:] = 0.0
        self._count = 0

    def push(self, x: np.ndarray) -> np.ndarray | None:
        self._acc += x
        self._count += 1
        if self._count < self.factor:
            return None
        out = self._acc / self.factor
        self.reset()
        return out


def decimate_batch(x: np.ndarray, factor: int) -> np.ndarray:
    """Group-average decimation over axis 0; trailing partial group dropped."""
    x = np.asarray(x, dtype=float)
    n = (len(x) // factor) * factor
    grouped = x[:n].reshape(len(x) // factor, factor, *x.shape[1:])
    return grouped.mean(axis=1)


class FilterChain:
    """Decimate -> moving average -> Butterworth, with shared spec."""

    def __init__(self, spec: FilterSpec, n_channels: int = N_CHANNELS):
        self.spec = spec
        self.decimator = Decimator(spec.decimate_by, n_channels)
        self.ma = MovingAverage(spec.ma_window, n_channels)
        self.lp = BiquadCascade(butterworth_design(spec), n_channels)

    def reset(self) -> None:
        self.decimator.reset()
        self.ma.reset()
        self.lp.reset()

    def push(self, x: np.ndarray, timestamp_us: int = 0) -> FilteredFrame | None:
        grouped = self.decimator.push(x)
        if grouped is None:
            return None
        y = self.lp.push(self.ma.push(grouped))
        return FilteredFrame(timestamp_us=timestamp_us, channels=y)


def filter_batch(x: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Whole-pipeline batch filtering (same recurrences as the live chain)."""
    y = decimate_batch(x, spec.decimate_by)
    y = moving_average_batch(y, spec.ma_window)
    return cascade_batch(butterworth_design(spec), y)


def fluctuation_reduction(raw: np.ndarray, filtered: np.ndarray) -> float | None:
    """Percent drop in steady-state standard deviation, filtered vs raw.

    Both inputs must cover the same constant-input span.  Returns None when
    the raw segment carries no fluctuation at all.
    """
    raw = np.asarray(raw, dtype=float)
    filtered = np.asarray(filtered, dtype=float)
    if raw.shape != filtered.shape:
        raise ValueError("raw and filtered segments must have equal length")
    raw_std = float(np.std(raw))
    if raw_std == 0.0:
        return None
    return 100.0 * (1.0 - float(np.std(filtered)) / raw_std)
