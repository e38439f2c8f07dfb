"""Scenario scripts: timed command schedules driving the simulated rig.

A script is a JSON document with a duration, a noise seed, a list of timed
events and optional dataset segments.  Events command ramped normal-force
presses at grid positions, ramped directional shear, material contact,
ambient changes, interference injection, body-temperature clamping (the
thermoelectric calibration jig) and thermostat enablement.

Builders at the bottom generate the desk calibration protocols: force
sweeps per grid position (12k raw samples per cycle), four-direction shear
sweeps (6k per cycle), the 13-point thermistor staircase, steady holds,
oblique presses for the cross-reference detector and material-touch
episodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .physics import MATERIALS, PIEZO_SIDES, ScenarioError

EVENT_KINDS = (
    "force",        # position or point, target_n, ramp_s
    "shear",        # direction, target_n, ramp_s
    "material",     # material
    "ambient",      # celsius
    "interference", # enabled, amplitude_v, freq_hz
    "set_temp",     # celsius (clamp body temperature; None releases the clamp)
    "thermostat",   # enabled, stop_c, heat_c (closed-loop heater inside the rig)
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    params: dict

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, **self.params}


@dataclass(frozen=True)
class Segment:
    """Labeled time span used to cut a run into dataset cycles."""

    group: str  # "normal" | "shear" | "thermistor" | "hold" | ...
    label: str  # e.g. "p3" or "x+" or a plateau temperature
    cycle: int
    t0: float
    t1: float

    def to_json(self) -> dict:
        return {
            "group": self.group,
            "label": self.label,
            "cycle": self.cycle,
            "t0": self.t0,
            "t1": self.t1,
        }


@dataclass
class ScenarioScript:
    name: str
    duration_s: float
    seed: int = 0
    events: list[Event] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)
    ambient_c: float = 26.0
    body_c: float | None = None  # None -> start at ambient

    def validate(self) -> "ScenarioScript":
        if self.duration_s <= 0:
            raise ScenarioError(f"duration must be > 0, got {self.duration_s}")
        last_t = 0.0
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                raise ScenarioError(f"unknown event kind {ev.kind!r}")
            if ev.t < last_t:
                raise ScenarioError(f"events out of order at t={ev.t}")
            if not 0.0 <= ev.t <= self.duration_s:
                raise ScenarioError(f"event at t={ev.t} outside [0, {self.duration_s}]")
            last_t = ev.t
            self._validate_params(ev)
        for seg in self.segments:
            if not (0.0 <= seg.t0 < seg.t1 <= self.duration_s):
                raise ScenarioError(f"segment {seg.label} span outside scenario")
        return self

    @staticmethod
    def _validate_params(ev: Event) -> None:
        p = ev.params
        if ev.kind == "force":
            if "position" not in p and "point" not in p:
                raise ScenarioError("force event needs a position or a point")
            if p.get("target_n", -1.0) < 0 or p.get("ramp_s", 0.0) < 0:
                raise ScenarioError("force event needs target_n >= 0 and ramp_s >= 0")
        elif ev.kind == "shear":
            if p.get("direction") not in PIEZO_SIDES:
                raise ScenarioError(f"shear direction must be one of {PIEZO_SIDES}")
            if p.get("target_n", -1.0) < 0 or p.get("ramp_s", 0.0) < 0:
                raise ScenarioError("shear event needs target_n >= 0 and ramp_s >= 0")
        elif ev.kind == "material":
            if p.get("material") not in MATERIALS:
                raise ScenarioError(f"unknown material {p.get('material')!r}")
        elif ev.kind == "ambient":
            if "celsius" not in p:
                raise ScenarioError("ambient event needs celsius")
        elif ev.kind == "interference":
            if "enabled" not in p:
                raise ScenarioError("interference event needs enabled")
        elif ev.kind == "set_temp":
            if "celsius" not in p:
                raise ScenarioError("set_temp event needs celsius (null releases)")
        elif ev.kind == "thermostat":
            if p.get("enabled") and not p.get("heat_c", 0) < p.get("stop_c", 0):
                raise ScenarioError("thermostat needs heat_c < stop_c")

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "ambient_c": self.ambient_c,
            "body_c": self.body_c,
            "events": [ev.to_json() for ev in self.events],
            "segments": [seg.to_json() for seg in self.segments],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioScript":
        if doc.get("schema_version", 1) != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema {doc.get('schema_version')}")
        events = []
        for raw in doc.get("events", []):
            raw = dict(raw)
            t = raw.pop("t")
            kind = raw.pop("kind")
            events.append(Event(t=float(t), kind=kind, params=raw))
        segments = [
            Segment(s["group"], s["label"], int(s["cycle"]), float(s["t0"]), float(s["t1"]))
            for s in doc.get("segments", [])
        ]
        script = cls(
            name=doc.get("name", "scenario"),
            duration_s=float(doc["duration_s"]),
            seed=int(doc.get("seed", 0)),
            events=events,
            segments=segments,
            ambient_c=float(doc.get("ambient_c", 26.0)),
            body_c=doc.get("body_c"),
        )
        return script.validate()

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioScript":
        return cls.from_json(json.loads(Path(path).read_text()))


# --- protocol builders -----------------------------------------------------

# one normal cycle: rest, ramp up, hold, ramp down, rest = 24 s = 12k raw samples
_NORMAL_CYCLE = (2.0, 9.0, 2.0, 9.0, 2.0)
# one shear cycle: 12 s = 6k raw samples
_SHEAR_CYCLE = (1.5, 4.0, 1.5, 4.0, 1.0)


def _press_cycle(events, segments, t, kind, key, label, peak, phases, cycle, group):
    rest0, up, hold, down, rest1 = phases
    t0 = t
    ramp_at = t + rest0
    if kind == "force":
        events.append(Event(ramp_at, "force", {"position": key, "target_n": peak, "ramp_s": up}))
        events.append(Event(ramp_at + up + hold, "force", {"position": key, "target_n": 0.0, "ramp_s": down}))
    else:
        events.append(Event(ramp_at, "shear", {"direction": key, "target_n": peak, "ramp_s": up}))
        events.append(Event(ramp_at + up + hold, "shear", {"direction": key, "target_n": 0.0, "ramp_s": down}))
    t = ramp_at + up + hold + down + rest1
    segments.append(Segment(group, label, cycle, t0, t))
    return t


def normal_sweep(cycles: int = 5, peak_n: float = 6.0, seed: int = 1) -> ScenarioScript:
    """Press each grid position 0 -> peak -> 0, ``cycles`` times per position."""
    events: list[Event] = []
    segments: list[Segment] = []
    t = 0.0
    for position in range(1, 10):
        for cycle in range(1, cycles + 1):
            t = _press_cycle(
                events, segments, t, "force", position, f"p{position}",
                peak_n, _NORMAL_CYCLE, cycle, "normal",
            )
    return ScenarioScript("normal-sweep", t, seed, events, segments).validate()


def shear_sweep(cycles: int = 5, peak_n: float = 10.0, seed: int = 2) -> ScenarioScript:
    """Sweep each shear direction 0 -> peak -> 0 in turn, ``cycles`` times."""
    events: list[Event] = []
    segments: list[Segment] = []
    t = 0.0
    for cycle in range(1, cycles + 1):
        for direction in PIEZO_SIDES:
            t = _press_cycle(
                events, segments, t, "shear", direction, direction,
                peak_n, _SHEAR_CYCLE, cycle, "shear",
            )
    return ScenarioScript("shear-sweep", t, seed, events, segments).validate()


def thermistor_sweep(
    n_points: int = 13,
    t_min_c: float = -10.0,
    t_max_c: float = 40.0,
    plateau_s: float = 4.0,
    seed: int = 3,
) -> ScenarioScript:
    """Clamp the body at a staircase of temperatures (heater off).

    Mirrors the thermoelectric calibration jig: each plateau is held until
    the read-out settles, one sample point per plateau.
    """
    events: list[Event] = []
    segments: list[Segment] = []
    t = 0.0
    for i in range(n_points):
        celsius = t_min_c + (t_max_c - t_min_c) * i / (n_points - 1)
        events.append(Event(t, "set_temp", {"celsius": celsius}))
        segments.append(Segment("thermistor", f"{celsius:.3f}", i + 1, t, t + plateau_s))
        t += plateau_s
    return ScenarioScript("thermistor-sweep", t, seed, events, segments).validate()


def steady_hold(
    position: int = 5,
    force_n: float = 3.0,
    hold_s: float = 20.0,
    seed: int = 4,
) -> ScenarioScript:
    """Ramp onto one grid position and hold: the fluctuation-metric scenario."""
    events = [Event(1.0, "force", {"position": position, "target_n": force_n, "ramp_s": 2.0})]
    duration = 3.0 + hold_s
    segments = [Segment("hold", f"p{position}", 1, 3.0, duration)]
    return ScenarioScript("steady-hold", duration, seed, events, segments).validate()


def oblique_press(
    normal_n: float = 6.0,
    shear_n: float = 5.0,
    direction: str = "x+",
    hold_s: float = 60.0,
    interference_at_s: float | None = None,
    interference_amplitude_v: float = 0.15,
    interference_freq_hz: float = 1.7,
    seed: int = 5,
) -> ScenarioScript:
    """Combined normal + shear hold, optionally with injected Hall interference."""
    events = [
        Event(0.5, "force", {"position": 5, "target_n": normal_n, "ramp_s": 2.0}),
        Event(0.5, "shear", {"direction": direction, "target_n": shear_n, "ramp_s": 2.0}),
    ]
    duration = 3.0 + hold_s
    if interference_at_s is not None:
        events.append(
            Event(
                interference_at_s,
                "interference",
                {
                    "enabled": True,
                    "amplitude_v": interference_amplitude_v,
                    "freq_hz": interference_freq_hz,
                },
            )
        )
        events.sort(key=lambda ev: ev.t)
    segments = [Segment("hold", direction, 1, 3.0, duration)]
    name = "oblique-press" + ("-interference" if interference_at_s is not None else "")
    return ScenarioScript(name, duration, seed, events, segments).validate()


def material_episode(
    material: str,
    contact_at_s: float = 5.0,
    episode_s: float = 35.0,
    stop_c: float = 33.4,
    heat_c: float = 31.4,
    seed: int = 6,
) -> ScenarioScript:
    """Touch one material with the thermostat holding the 33 degC baseline."""
    if material not in MATERIALS or material == "none":
        raise ScenarioError(f"material episode needs a touchable material, got {material!r}")
    events = [
        Event(0.0, "thermostat", {"enabled": True, "stop_c": stop_c, "heat_c": heat_c}),
        Event(contact_at_s, "material", {"material": material}),
        Event(contact_at_s, "force", {"position": 5, "target_n": 3.0, "ramp_s": 0.2}),
    ]
    segments = [Segment("material", material, 1, 0.0, episode_s)]
    script = ScenarioScript(
        f"material-{material}", episode_s, seed, events, segments, body_c=33.0
    )
    return script.validate()


def thermostat_warmup(duration_s: float = 300.0, seed: int = 7) -> ScenarioScript:
    """Cold start at ambient with the default thermostat band enabled."""
    events = [Event(0.0, "thermostat", {"enabled": True, "stop_c": 36.0, "heat_c": 32.0})]
    return ScenarioScript("thermostat-warmup", duration_s, seed, events).validate()


BUILTIN_SCENARIOS = {
    "normal-sweep": normal_sweep,
    "shear-sweep": shear_sweep,
    "thermistor-sweep": thermistor_sweep,
    "steady-hold": steady_hold,
    "oblique-press": oblique_press,
    "thermostat-warmup": thermostat_warmup,
}


def builtin_scenario(name: str, **kwargs) -> ScenarioScript:
    if name.startswith("material-"):
        return material_episode(name.removeprefix("material-"), **kwargs)
    if name not in BUILTIN_SCENARIOS:
        known = sorted(BUILTIN_SCENARIOS) + ["material-<name>"]
        raise ScenarioError(f"unknown scenario {name!r}; built-ins: {', '.join(known)}")
    return BUILTIN_SCENARIOS[name](**kwargs)
