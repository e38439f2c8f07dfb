"""Stepped rig: turns scenario commands into the 5 kHz muxed voltage stream.

The rig owns the physical state and the command ramps.  Each advance()
produces whole 500 Hz frames; within a frame the ten channels are evaluated
at their own mux slot times, so the stream carries the real intra-frame
skew.  Channel noise is white gaussian plus a slow first-order wander whose
split is tuned so the documented filter chain removes roughly the benefit
seen on the bench (~8 percent of the steady-state fluctuation) while the
post-filter spread lands in the few-percent noise-to-range class.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as _signal

from ..frames import N_CHANNELS
from ..runtime import ThermostatConfig, thermostat_duty
from .physics import (
    HALL_FORCE_LIMIT_N,
    MATERIAL_TABLE,
    PIEZO_SIDES,
    ScenarioError,
    SensorGeometry,
    SensorPhysicalState,
    hall_voltage,
    piezo_voltage,
    spread_weights,
    thermal_step,
    thermistor_voltage,
)
from .scenario import ScenarioScript

FRAME_HZ = 500
SLOT_HZ = 5000
SLOTS_PER_FRAME = 10
CONTROL_DT_S = 0.1


@dataclass(frozen=True)
class NoiseParams:
    """Per-channel white noise and slow-wander standard deviations (volts)."""

    hall_white_v: float = 0.012
    hall_wander_v: float = 0.018
    piezo_white_v: float = 0.011
    piezo_wander_v: float = 0.014
    therm_white_v: float = 0.0008
    therm_wander_v: float = 0.0003
    wander_tau_s: float = 0.5

    def white(self, channel: int) -> float:
        if channel < 5:
            return self.hall_white_v
        if channel < 9:
            return self.piezo_white_v
        return self.therm_white_v

    def wander(self, channel: int) -> float:
        if channel < 5:
            return self.hall_wander_v
        if channel < 9:
            return self.piezo_wander_v
        return self.therm_wander_v


@dataclass
class _Ramp:
    t0: float
    v0: float
    t1: float
    v1: float

    def value(self, t):
        return np.interp(t, [self.t0, self.t1], [self.v0, self.v1])

    @classmethod
    def hold(cls, value: float) -> "_Ramp":
        return cls(0.0, value, 1e-9, value)


@dataclass
class _Press:
    point: tuple[float, float]
    grid_label: int  # nearest grid cell, carries the ground-truth assignment
    weights: np.ndarray  # (5,) kernel share per magnet
    ramp: _Ramp


@dataclass
class RigChunk:
    """Arrays for a run of consecutive frames."""

    t: np.ndarray  # (n,) frame start seconds
    channels: np.ndarray  # (n, 10) volts at each channel's slot time
    truth_normal: np.ndarray  # (n, 9) N per grid cell
    truth_shear: np.ndarray  # (n, 4) N per side
    truth_temp: np.ndarray  # (n,) degC
    interference_on: np.ndarray  # (n,) bool
    saturated: np.ndarray  # (n,) bool
    heater_w: np.ndarray  # (n,) W applied during the frame


class SimulatedRig:
    """Mutable stand-in for the sensor, mux front end and heater driver."""

    def __init__(
        self,
        *,
        geometry: SensorGeometry | None = None,
        noise: NoiseParams | None = None,
        seed: int = 0,
        ambient_c: float = 26.0,
        body_c: float | None = None,
        material_table: dict | None = None,
    ):
        self.geometry = geometry or SensorGeometry()
        self.noise = noise or NoiseParams()
        self.material_table = material_table or MATERIAL_TABLE
        self.state = SensorPhysicalState(
            ambient_temperature=ambient_c,
            body_temperature=ambient_c if body_c is None else body_c,
        )
        self._frame = 0
        self._presses: dict = {}
        self._shear: dict[str, _Ramp] = {d: _Ramp.hold(0.0) for d in PIEZO_SIDES}
        self._interference: tuple[float, float, float] | None = None  # t_on, amp, hz
        self._clamp_c: float | None = None
        self._thermostat: ThermostatConfig | None = None
        self._heater_cmd_w = 0.0  # external command when no internal thermostat

        seeds = np.random.SeedSequence(seed).spawn(2 * N_CHANNELS)
        self._white_rng = [np.random.default_rng(s) for s in seeds[:N_CHANNELS]]
        self._wander_rng = [np.random.default_rng(s) for s in seeds[N_CHANNELS:]]
        self._wander_zi = np.zeros(N_CHANNELS)

    # -- clock ------------------------------------------------------------

    @property
    def time_s(self) -> float:
        return self._frame / FRAME_HZ

    @property
    def frame_index(self) -> int:
        return self._frame

    # -- commands ----------------------------------------------------------

    def command_force(
        self,
        target_n: float,
        ramp_s: float,
        position: int | None = None,
        point: tuple[float, float] | None = None,
    ) -> None:
        if point is None:
            if position is None:
                raise ScenarioError("force command needs a position or a point")
            point = self.geometry.grid_position(position)
            label = position
        else:
            point = (float(point[0]), float(point[1]))
            if not self.geometry.contains(point):
                raise ScenarioError(f"contact point {point} outside surface")
            label = self._nearest_grid_label(point)
        key = position if position is not None else ("pt", point)
        now = self.time_s
        current = self._presses[key].ramp.value(now) if key in self._presses else 0.0
        ramp = _Ramp(now, float(current), now + max(ramp_s, 1e-9), float(target_n))
        self._presses[key] = _Press(
            point=point,
            grid_label=label,
            weights=spread_weights(point, self.geometry),
            ramp=ramp,
        )

    def command_shear(self, direction: str, target_n: float, ramp_s: float) -> None:
        if direction not in PIEZO_SIDES:
            raise ScenarioError(f"unknown shear direction {direction!r}")
        now = self.time_s
        current = float(self._shear[direction].value(now))
        self._shear[direction] = _Ramp(
            now, current, now + max(ramp_s, 1e-9), float(target_n)
        )

    def set_material(self, material: str) -> None:
        patch = self.state.ambient_temperature if material != "none" else None
        self.state = replace(
            self.state, contact_material=material, contact_patch_temperature=patch
        )

    def set_ambient(self, celsius: float) -> None:
        self.state = replace(self.state, ambient_temperature=float(celsius))

    def set_interference(
        self, enabled: bool, amplitude_v: float = 0.15, freq_hz: float = 1.7
    ) -> None:
        self._interference = (self.time_s, amplitude_v, freq_hz) if enabled else None

    def clamp_temperature(self, celsius: float | None) -> None:
        self._clamp_c = None if celsius is None else float(celsius)
        if self._clamp_c is not None:
            self.state = replace(self.state, body_temperature=self._clamp_c)

    def set_thermostat(self, cfg: ThermostatConfig | None) -> None:
        self._thermostat = cfg

    def set_heater_power(self, watts: float) -> None:
        self._heater_cmd_w = float(np.clip(watts, 0.0, 2.0))

    def _nearest_grid_label(self, point: tuple[float, float]) -> int:
        def dist2(label: int) -> float:
            gx, gy = self.geometry.grid_position(label)
            return (gx - point[0]) ** 2 + (gy - point[1]) ** 2

        return min(range(1, 10), key=dist2)

    # -- stepping ----------------------------------------------------------

    def advance(self, n_frames: int) -> RigChunk:
        if n_frames <= 0:
            raise ScenarioError("advance needs a positive frame count")
        frame_dt = 1.0 / FRAME_HZ
        slot_dt = 1.0 / SLOT_HZ
        t = (self._frame + np.arange(n_frames)) * frame_dt
        knot_t, knot_temp, pieces = self._advance_thermal(
            self._frame * frame_dt, (self._frame + n_frames) * frame_dt
        )
        self._frame += n_frames

        channels = np.empty((n_frames, N_CHANNELS))
        saturated = np.zeros(n_frames, dtype=bool)
        presses = list(self._presses.values())

        for ch in range(5):
            t_slot = t + ch * slot_dt
            force = np.zeros(n_frames)
            for press in presses:
                force += press.weights[ch] * press.ramp.value(t_slot)
            saturated |= force > HALL_FORCE_LIMIT_N
            offset = self._interference_offset(t_slot)
            channels[:, ch] = hall_voltage(force, offset, self._noise_block(ch, n_frames))

        for k, side in enumerate(PIEZO_SIDES):
            ch = 5 + k
            t_slot = t + ch * slot_dt
            channels[:, ch] = piezo_voltage(
                self._shear[side].value(t_slot), self._noise_block(ch, n_frames)
            )

        t_slot = t + 9 * slot_dt
        temp_at_slot = np.interp(t_slot, knot_t, knot_temp)
        channels[:, 9] = thermistor_voltage(temp_at_slot, self._noise_block(9, n_frames))

        truth_normal = np.zeros((n_frames, 9))
        for press in presses:
            truth_normal[:, press.grid_label - 1] += press.ramp.value(t)
        truth_shear = np.column_stack([self._shear[d].value(t) for d in PIEZO_SIDES])

        heater = np.zeros(n_frames)
        for t_a, t_b, watts in pieces:
            heater[(t >= t_a - 1e-12) & (t < t_b - 1e-12)] = watts

        return RigChunk(
            t=t,
            channels=channels,
            truth_normal=truth_normal,
            truth_shear=truth_shear,
            truth_temp=np.interp(t, knot_t, knot_temp),
            interference_on=np.full(n_frames, self._interference is not None),
            saturated=saturated,
            heater_w=heater,
        )

    def _interference_offset(self, t_slot: np.ndarray) -> np.ndarray | float:
        if self._interference is None:
            return 0.0
        t_on, amp, hz = self._interference
        return amp * np.sin(2.0 * math.pi * hz * (t_slot - t_on))

    def _noise_block(self, channel: int, n: int) -> np.ndarray:
        white = self._white_rng[channel].standard_normal(n) * self.noise.white(channel)
        tau = self.noise.wander_tau_s
        a = math.exp(-1.0 / (FRAME_HZ * tau))
        b = self.noise.wander(channel) * math.sqrt(1.0 - a * a)
        drive = self._wander_rng[channel].standard_normal(n)
        wander, zf = _signal.lfilter(
            [b], [1.0, -a], drive, zi=[self._wander_zi[channel]]
        )
        self._wander_zi[channel] = zf[0]
        return white + wander

    def _advance_thermal(self, t0: float, t1: float):
        """Integrate body temperature over [t0, t1] at the control cadence."""
        knot_t = [t0]
        knot_temp = [self.state.body_temperature]
        pieces = []
        t = t0
        while t < t1 - 1e-12:
            boundary = (math.floor(t / CONTROL_DT_S + 1e-9) + 1) * CONTROL_DT_S
            h = min(boundary, t1) - t
            watts = self._current_heater_power()
            if self._clamp_c is not None:
                self.state = replace(
                    self.state,
                    body_temperature=self._clamp_c,
                    contact_patch_temperature=None,
                )
                watts = 0.0
            else:
                self.state = thermal_step(self.state, watts, h, self.material_table)
            pieces.append((t, t + h, watts))
            t += h
            knot_t.append(t)
            knot_temp.append(self.state.body_temperature)
        return np.asarray(knot_t), np.asarray(knot_temp), pieces

    def _current_heater_power(self) -> float:
        if self._thermostat is not None:
            duty = thermostat_duty(self.state.body_temperature, self._thermostat)
            return duty * self._thermostat.max_power_w
        return self._heater_cmd_w


# --- scenario runner --------------------------------------------------------


@dataclass
class SimRun:
    """Concatenated rig output for a whole scenario, plus ground truth."""

    script: ScenarioScript
    t: np.ndarray
    channels: np.ndarray
    truth_normal: np.ndarray
    truth_shear: np.ndarray
    truth_temp: np.ndarray
    interference_on: np.ndarray
    saturated: np.ndarray
    heater_w: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.t)

    def slot_voltages(self) -> np.ndarray:
        """The 5 kHz slot stream: frame-major, channel-minor."""
        return self.channels.reshape(-1)

    def frame_slice(self, t0: float, t1: float) -> slice:
        i0 = int(np.searchsorted(self.t, t0 - 1e-9))
        i1 = int(np.searchsorted(self.t, t1 - 1e-9))
        return slice(i0, i1)

    def write_raw_csv(self, path: str | Path) -> None:
        header = (
            ["t"]
            + [f"ch{i}" for i in range(N_CHANNELS)]
            + [f"F_true_{p}" for p in range(1, 10)]
            + ["Fs_true_xp", "Fs_true_xn", "Fs_true_yp", "Fs_true_yn", "T_true"]
        )
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n_frames):
                writer.writerow(
                    [f"{self.t[i]:.6f}"]
                    + [f"{v:.6f}" for v in self.channels[i]]
                    + [f"{v:.6f}" for v in self.truth_normal[i]]
                    + [f"{v:.6f}" for v in self.truth_shear[i]]
                    + [f"{self.truth_temp[i]:.5f}"]
                )


def _apply_event(rig: SimulatedRig, kind: str, params: dict) -> None:
    if kind == "force":
        rig.command_force(
            target_n=float(params["target_n"]),
            ramp_s=float(params.get("ramp_s", 0.0)),
            position=params.get("position"),
            point=tuple(params["point"]) if "point" in params else None,
        )
    elif kind == "shear":
        rig.command_shear(
            params["direction"], float(params["target_n"]), float(params.get("ramp_s", 0.0))
        )
    elif kind == "material":
        rig.set_material(params["material"])
    elif kind == "ambient":
        rig.set_ambient(float(params["celsius"]))
    elif kind == "interference":
        rig.set_interference(
            bool(params["enabled"]),
            float(params.get("amplitude_v", 0.15)),
            float(params.get("freq_hz", 1.7)),
        )
    elif kind == "set_temp":
        celsius = params["celsius"]
        rig.clamp_temperature(None if celsius is None else float(celsius))
    elif kind == "thermostat":
        if params.get("enabled"):
            rig.set_thermostat(
                ThermostatConfig(
                    stop_c=float(params["stop_c"]),
                    heat_c=float(params["heat_c"]),
                    max_power_w=float(params.get("max_power_w", 2.0)),
                )
            )
        else:
            rig.set_thermostat(None)
    else:
        raise ScenarioError(f"unknown event kind {kind!r}")


def build_rig(script: ScenarioScript, **rig_kwargs) -> SimulatedRig:
    kwargs = {
        "seed": script.seed,
        "ambient_c": script.ambient_c,
        "body_c": script.body_c,
    }
    kwargs.update(rig_kwargs)
    return SimulatedRig(**kwargs)


def simulate_scenario(script: ScenarioScript, **rig_kwargs) -> SimRun:
    """Run a validated script to completion; bit-identical for equal seeds."""
    script.validate()
    rig = build_rig(script, **rig_kwargs)
    total_frames = int(round(script.duration_s * FRAME_HZ))
    # events snap to the frame grid; the rig advances between boundaries
    boundaries: dict[int, list] = {}
    for ev in script.events:
        frame = min(int(round(ev.t * FRAME_HZ)), total_frames)
        boundaries.setdefault(frame, []).append(ev)

    chunks: list[RigChunk] = []
    cursor = 0
    for frame in sorted(boundaries):
        if frame > cursor:
            chunks.append(rig.advance(frame - cursor))
            cursor = frame
        for ev in boundaries[frame]:
            _apply_event(rig, ev.kind, ev.params)
    if total_frames > cursor:
        chunks.append(rig.advance(total_frames - cursor))

    return SimRun(
        script=script,
        t=np.concatenate([c.t for c in chunks]),
        channels=np.concatenate([c.channels for c in chunks]),
        truth_normal=np.concatenate([c.truth_normal for c in chunks]),
        truth_shear=np.concatenate([c.truth_shear for c in chunks]),
        truth_temp=np.concatenate([c.truth_temp for c in chunks]),
        interference_on=np.concatenate([c.interference_on for c in chunks]),
        saturated=np.concatenate([c.saturated for c in chunks]),
        heater_w=np.concatenate([c.heater_w for c in chunks]),
    )
