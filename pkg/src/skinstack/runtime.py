"""Live pipeline logic: re-zeroing, heater control, cross-checking, materials.

Everything here operates on conditioned frames or calibrated states and is
meant to run on a single control/analysis thread; published states are
immutable snapshots.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import calibration, dsp
from .frames import (
    HALL_SLICE,
    N_CHANNELS,
    PIEZO_SLICE,
    FilteredFrame,
    ForceState,
    RawFrame,
)


class RuntimeError_(ValueError):
    """Raised when a runtime operation's entry conditions are not met."""


# --- thermostat ---------------------------------------------------------------


@dataclass(frozen=True)
class ThermostatConfig:
    stop_c: float = 36.0  # heater off at or above this temperature
    heat_c: float = 32.0  # heater fully on at or below this temperature
    max_power_w: float = 2.0
    pwm_period_s: float = 0.1

    def __post_init__(self):
        if not self.heat_c < self.stop_c:
            raise RuntimeError_(
                f"heat temperature {self.heat_c} must sit below stop {self.stop_c}"
            )
        if self.max_power_w <= 0 or self.pwm_period_s <= 0:
            raise RuntimeError_("max_power_w and pwm_period_s must be positive")


def thermostat_duty(temperature_c: float, cfg: ThermostatConfig) -> float:
    """PWM duty in [0, 1]: off above stop, full below heat, linear between."""
    if temperature_c >= cfg.stop_c:
        return 0.0
    if temperature_c <= cfg.heat_c:
        return 1.0
    return (cfg.stop_c - temperature_c) / (cfg.stop_c - cfg.heat_c)


@dataclass(frozen=True)
class RuntimeParams:
    """Operator-tunable runtime knobs, loadable from a JSON config file."""

    thermostat: ThermostatConfig = ThermostatConfig()
    gamma_window: int = 100
    gamma_gate_n: float = 4.0
    gamma_threshold_cv: float = 0.25
    gamma_min_frames: int = 30
    material_baseline_c: float = 33.0
    material_episode_s: float = 25.0

    def build_gamma_window(self) -> "GammaWindow":
        return GammaWindow(
            window=self.gamma_window,
            gate_n=self.gamma_gate_n,
            threshold_cv=self.gamma_threshold_cv,
            min_frames=self.gamma_min_frames,
        )

    def build_material_tracker(self) -> "MaterialTracker":
        return MaterialTracker(
            baseline_c=self.material_baseline_c, episode_s=self.material_episode_s
        )

    def to_json(self) -> dict:
        return {
            "thermostat": {
                "stop_c": self.thermostat.stop_c,
                "heat_c": self.thermostat.heat_c,
                "max_power_w": self.thermostat.max_power_w,
                "pwm_period_s": self.thermostat.pwm_period_s,
            },
            "gamma": {
                "window": self.gamma_window,
                "gate_n": self.gamma_gate_n,
                "threshold_cv": self.gamma_threshold_cv,
                "min_frames": self.gamma_min_frames,
            },
            "material": {
                "baseline_c": self.material_baseline_c,
                "episode_s": self.material_episode_s,
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RuntimeParams":
        thermostat = doc.get("thermostat", {})
        gamma_doc = doc.get("gamma", {})
        material = doc.get("material", {})
        return cls(
            thermostat=ThermostatConfig(
                stop_c=float(thermostat.get("stop_c", 36.0)),
                heat_c=float(thermostat.get("heat_c", 32.0)),
                max_power_w=float(thermostat.get("max_power_w", 2.0)),
                pwm_period_s=float(thermostat.get("pwm_period_s", 0.1)),
            ),
            gamma_window=int(gamma_doc.get("window", 100)),
            gamma_gate_n=float(gamma_doc.get("gate_n", 4.0)),
            gamma_threshold_cv=float(gamma_doc.get("threshold_cv", 0.25)),
            gamma_min_frames=int(gamma_doc.get("min_frames", 30)),
            material_baseline_c=float(material.get("baseline_c", 33.0)),
            material_episode_s=float(material.get("episode_s", 25.0)),
        )

    @classmethod
    def load(cls, path) -> "RuntimeParams":
        import json
        from pathlib import Path

        return cls.from_json(json.loads(Path(path).read_text()))


class ThermostatController:
    """Holds each duty command for one PWM period."""

    def __init__(self, cfg: ThermostatConfig):
        self.cfg = cfg
        self._next_update_s = 0.0
        self._power_w = 0.0

    def power(self, now_s: float, temperature_c: float) -> float:
        if now_s >= self._next_update_s:
            self._power_w = thermostat_duty(temperature_c, self.cfg) * self.cfg.max_power_w
            self._next_update_s = now_s + self.cfg.pwm_period_s
        return self._power_w


# --- zero calibration -----------------------------------------------------------

ZERO_MIN_FRAMES = 50
# rest-noise envelope of the calibrated outputs over a capture window; the
# nine-cell sum wanders far more than the shear magnitude does
REST_FORCE_STD_N = {"normal": 1.2, "shear": 0.3}

GROUP_CHANNELS = {"normal": HALL_SLICE, "shear": PIEZO_SLICE}


def zero_calibrate(
    frames: list[FilteredFrame],
    group: str,
    profile: calibration.CalibrationProfile,
) -> np.ndarray:
    """New zero offsets for one channel group from unloaded frames.

    The window is rejected when the calibrated force output varies more than
    a resting sensor can explain, so zeroing under load fails loudly instead
    of poisoning the profile.  Returns the offsets and stores them in the
    profile; the other group's offsets stay untouched.
    """
    if group not in GROUP_CHANNELS:
        raise RuntimeError_(f"zero group must be normal or shear, got {group!r}")
    if len(frames) < ZERO_MIN_FRAMES:
        raise RuntimeError_(
            f"need >= {ZERO_MIN_FRAMES} rest frames, got {len(frames)}"
        )
    volts = np.stack([f.channels for f in frames])
    out = calibration.apply_profile_batch(profile, volts)
    force_std = (
        float(np.std(out["normal_grid"].sum(axis=1)))
        if group == "normal"
        else float(np.std(np.hypot(
            out["shear"][:, 0] - out["shear"][:, 1],
            out["shear"][:, 2] - out["shear"][:, 3],
        )))
    )
    if force_std > REST_FORCE_STD_N[group]:
        raise RuntimeError_(
            f"sensor not at rest: {group} force std {force_std:.2f} N during capture"
        )
    sl = GROUP_CHANNELS[group]
    offsets = volts[:, sl].mean(axis=0)
    profile.zero_offsets[sl] = offsets
    return offsets


# --- cross-reference ratio and interference -------------------------------------

SHEAR_GUARD_N = 0.2
SHEAR_GATE_N = 4.0


def gamma(state: ForceState, guard_n: float = SHEAR_GUARD_N) -> float | None:
    """Ratio of aggregate normal force to shear magnitude; None under the guard."""
    shear_mag = state.shear_magnitude
    if shear_mag < guard_n:
        return None
    return state.total_normal / shear_mag


@dataclass
class InterferenceResult:
    status: str  # "ok" | "indeterminate"
    flag: bool = False
    cv: float = float("nan")
    confidence: float = 0.0
    n_gated: int = 0


class GammaWindow:
    """Ring of recent ratio samples gated on sufficient shear load.

    The ratio between the two force modalities stays put under clean
    conditions; a disturbed magnetic environment makes it wander, which
    shows up as a large coefficient of variation.
    """

    def __init__(
        self,
        window: int = 100,
        gate_n: float = SHEAR_GATE_N,
        threshold_cv: float = 0.25,
        min_frames: int = 30,
    ):
        self.gate_n = gate_n
        self.threshold_cv = threshold_cv
        self.min_frames = min_frames
        self.total_gated = 0
        self._ring: deque[float] = deque(maxlen=window)

    def push(self, state: ForceState) -> None:
        if state.shear_magnitude <= self.gate_n:
            return
        value = gamma(state)
        if value is not None:
            self._ring.append(value)
            self.total_gated += 1

    def detect(self) -> InterferenceResult:
        n = len(self._ring)
        if n < self.min_frames:
            return InterferenceResult(status="indeterminate", n_gated=n)
        values = np.asarray(self._ring)
        mean = float(values.mean())
        cv = float(values.std() / abs(mean)) if mean != 0.0 else float("inf")
        return InterferenceResult(
            status="ok",
            flag=cv > self.threshold_cv,
            cv=cv,
            confidence=min(1.0, cv / self.threshold_cv),
            n_gated=n,
        )


# --- material recognition --------------------------------------------------------


@dataclass(frozen=True)
class MaterialFeatures:
    max_drop_c: float
    recovery_onset_s: float | None  # None when still falling at window end


@dataclass(frozen=True)
class MaterialCall:
    label: str  # "metal" | "plastic" | "cardboard_or_fiber"
    features: MaterialFeatures


METAL_DROP_C = 2.5
PLASTIC_DROP_C = 0.8
BASELINE_BAND_C = 0.5
RECOVERY_RISE_C = 0.05


def classify_material(
    t_s: np.ndarray,
    temperature_c: np.ndarray,
    baseline_c: float = 33.0,
) -> MaterialCall:
    """Label a contact episode from its temperature trace.

    ``t_s`` runs from contact onset (t=0) with the pre-contact span included
    as negative times; the pre-contact portion must sit at the regulated
    baseline.  Features are expressed in seconds and degrees so the decision
    is indifferent to the trace's sampling rate.
    """
    t = np.asarray(t_s, dtype=float)
    temp = np.asarray(temperature_c, dtype=float)
    pre = t < 0.0
    if not pre.any():
        raise RuntimeError_("trace has no pre-contact baseline span")
    pre_temp = temp[pre]
    if np.ptp(pre_temp) > BASELINE_BAND_C or abs(pre_temp.mean() - baseline_c) > BASELINE_BAND_C:
        raise RuntimeError_(
            f"no stable pre-contact baseline near {baseline_c} degC "
            f"(mean {pre_temp.mean():.2f}, spread {np.ptp(pre_temp):.2f})"
        )
    base = float(pre_temp.mean())

    post = t >= 0.0
    t_post = t[post]
    temp_post = temp[post]
    i_min = int(np.argmin(temp_post))
    max_drop = base - float(temp_post[i_min])

    recovery: float | None = None
    if temp_post[i_min:].max() - temp_post[i_min] >= RECOVERY_RISE_C:
        recovery = float(t_post[i_min])

    features = MaterialFeatures(max_drop_c=max_drop, recovery_onset_s=recovery)
    if max_drop >= METAL_DROP_C:
        label = "metal"
    elif max_drop >= PLASTIC_DROP_C:
        label = "plastic"
    else:
        label = "cardboard_or_fiber"
    return MaterialCall(label=label, features=features)


class MaterialTracker:
    """Watches the calibrated stream for touch episodes and labels them.

    Contact is judged per direct grid cell against a lagged unloaded
    baseline: the cell under a touch rises by the applied force while its
    rest wander stays small, whereas the nine-cell sum wanders too much to
    gate on.  The lag keeps the contact ramp itself and filter warm-up
    transients out of the judgement window.  An episode closes after
    ``episode_s`` or on release, whichever comes first; traces whose
    pre-contact span fails the baseline check are discarded silently.
    """

    DIRECT_CELLS = (0, 2, 4, 6, 8)  # grid indices of cells 1, 3, 5, 7, 9
    CONTACT_RISE_N = 1.2
    RELEASE_RISE_N = 0.5
    QUIET_SPAN_N = 1.0

    def __init__(self, baseline_c: float = 33.0, episode_s: float = 25.0, min_episode_s: float = 8.0):
        self.baseline_c = baseline_c
        self.episode_s = episode_s
        self.min_episode_s = min_episode_s
        self._pre: deque[tuple[float, float, np.ndarray]] = deque(maxlen=500)
        self._episode: list[tuple[float, float]] | None = None
        self._onset_s: float | None = None
        self._rest_cells: np.ndarray | None = None

    def _lagged_rest(self) -> np.ndarray | None:
        """Per-cell median force half a second back, None while unsettled."""
        cells = [c for _, _, c in self._pre][-150:-50]
        if len(cells) < 100:
            return None
        stack = np.stack(cells)
        if np.ptp(stack, axis=0).max() > self.QUIET_SPAN_N:
            return None
        return np.median(stack, axis=0)

    def push(self, state: ForceState) -> MaterialCall | None:
        now = state.timestamp_us * 1e-6
        cells = state.normal_grid[list(self.DIRECT_CELLS)]
        if self._episode is None:
            self._pre.append((now, state.temperature, cells))
            rest = self._lagged_rest()
            if rest is not None and np.max(cells - rest) > self.CONTACT_RISE_N:
                self._episode = []
                self._onset_s = now
                self._rest_cells = rest
            return None
        self._episode.append((now, state.temperature))
        elapsed = now - self._onset_s
        released = np.max(cells - self._rest_cells) < self.RELEASE_RISE_N
        if (released and elapsed >= self.min_episode_s) or elapsed >= self.episode_s:
            return self._finish()
        return None

    def _finish(self) -> MaterialCall | None:
        pre = np.asarray([(t, temp) for t, temp, _ in self._pre])
        episode = np.asarray(self._episode)
        onset = self._onset_s
        self._episode = None
        self._onset_s = None
        self._rest_cells = None
        self._pre.clear()
        t = np.concatenate([pre[:, 0], episode[:, 0]]) - onset
        temp = np.concatenate([pre[:, 1], episode[:, 1]])
        try:
            return classify_material(t, temp, self.baseline_c)
        except RuntimeError_:
            return None


# --- live pipeline ----------------------------------------------------------------


@dataclass
class PipelineEvent:
    kind: str  # "interference" | "material"
    timestamp_us: int
    payload: dict


class LivePipeline:
    """Raw 500 Hz frames in, calibrated 100 Hz states out.

    Deterministic: the same frame sequence with the same profile always
    produces the identical state sequence.
    """

    def __init__(
        self,
        profile: calibration.CalibrationProfile,
        thermostat: ThermostatConfig | None = None,
        gamma_window: GammaWindow | None = None,
        material_tracker: MaterialTracker | None = None,
    ):
        self.profile = profile
        self.chain = dsp.FilterChain(profile.filter_spec)
        self.gamma_window = gamma_window or GammaWindow()
        self.material_tracker = material_tracker
        self.thermostat = ThermostatController(thermostat) if thermostat else None
        self._interference_flag = False
        self._events: list[PipelineEvent] = []
        self._recent: deque[FilteredFrame] = deque(maxlen=200)

    def push_raw(self, frame: RawFrame) -> ForceState | None:
        filtered = self.chain.push(frame.volts(), timestamp_us=frame.timestamp_us)
        if filtered is None:
            return None
        return self.push_filtered(filtered)

    def push_filtered(self, filtered: FilteredFrame) -> ForceState:
        self._recent.append(filtered)
        state = calibration.apply_profile(self.profile, filtered)
        self.gamma_window.push(state)
        detection = self.gamma_window.detect()
        flag = detection.flag if detection.status == "ok" else self._interference_flag
        if flag != self._interference_flag:
            self._interference_flag = flag
            self._events.append(
                PipelineEvent(
                    kind="interference",
                    timestamp_us=filtered.timestamp_us,
                    payload={"flag": flag, "cv": detection.cv},
                )
            )
        state = ForceState(
            timestamp_us=state.timestamp_us,
            normal_grid=state.normal_grid,
            shear=state.shear,
            temperature=state.temperature,
            interference=flag,
            saturated=state.saturated,
        )
        if self.material_tracker is not None:
            call = self.material_tracker.push(state)
            if call is not None:
                self._events.append(
                    PipelineEvent(
                        kind="material",
                        timestamp_us=filtered.timestamp_us,
                        payload={
                            "label": call.label,
                            "max_drop_c": call.features.max_drop_c,
                            "recovery_onset_s": call.features.recovery_onset_s,
                        },
                    )
                )
        return state

    def zero(self, group: str, n_frames: int = ZERO_MIN_FRAMES) -> np.ndarray:
        frames = list(self._recent)[-n_frames:]
        return zero_calibrate(frames, group, self.profile)

    def heater_power(self, now_s: float, temperature_c: float) -> float:
        if self.thermostat is None:
            return 0.0
        return self.thermostat.power(now_s, temperature_c)

    def poll_events(self) -> list[PipelineEvent]:
        events, self._events = self._events, []
        return events

    def reset_filters(self) -> None:
        self.chain.reset()
