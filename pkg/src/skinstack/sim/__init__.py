"""Physics-based stand-in for the tactile sensor hardware."""

from .physics import (
    MATERIAL_TABLE,
    MaterialThermalParams,
    ScenarioError,
    SensorGeometry,
    SensorPhysicalState,
    distribute_force,
    hall_voltage,
    piezo_voltage,
    spread_weights,
    temperature_from_resistance,
    thermal_step,
    thermistor_resistance,
    thermistor_voltage,
)
from .rig import FRAME_HZ, SLOT_HZ, NoiseParams, RigChunk, SimRun, SimulatedRig, build_rig, simulate_scenario
from .scenario import (
    BUILTIN_SCENARIOS,
    Event,
    ScenarioScript,
    Segment,
    builtin_scenario,
    material_episode,
    normal_sweep,
    oblique_press,
    shear_sweep,
    steady_hold,
    thermistor_sweep,
    thermostat_warmup,
)

__all__ = [
    "MATERIAL_TABLE",
    "MaterialThermalParams",
    "ScenarioError",
    "SensorGeometry",
    "SensorPhysicalState",
    "distribute_force",
    "hall_voltage",
    "piezo_voltage",
    "spread_weights",
    "temperature_from_resistance",
    "thermal_step",
    "thermistor_resistance",
    "thermistor_voltage",
    "FRAME_HZ",
    "SLOT_HZ",
    "NoiseParams",
    "RigChunk",
    "SimRun",
    "SimulatedRig",
    "build_rig",
    "simulate_scenario",
    "BUILTIN_SCENARIOS",
    "Event",
    "ScenarioScript",
    "Segment",
    "builtin_scenario",
    "material_episode",
    "normal_sweep",
    "oblique_press",
    "shear_sweep",
    "steady_hold",
    "thermistor_sweep",
    "thermostat_warmup",
]
