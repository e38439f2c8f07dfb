"""Physical model of the tactile patch.

Ground-truth transduction for the three sensing modalities (Hall / piezo
divider / NTC thermistor), the Gaussian force-spread kernel, and a lumped
two-state thermal model (sensor body + contact patch).  The maps here are
deliberately *not* members of the calibration model families so that the
fitting pipeline sees realistic residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..frames import THERM_DIVIDER_OHM

# surface / kernel
SURFACE_MM = 20.0
SPREAD_SIGMA_MM = 5.0

# Hall channels: quadratic ground-truth map on top of a rest output
HALL_REST_V = 0.60
HALL_LIN_V_PER_N = 0.10
HALL_QUAD_V_PER_N2 = 0.005
HALL_FORCE_LIMIT_N = 12.0

# piezo divider: R(F) = R0 / (1 + PIEZO_GAIN*F) against a fixed leg
PIEZO_R0_OHM = 10_000.0
PIEZO_FIXED_OHM = 10_000.0
PIEZO_GAIN_PER_N = 0.3

# thermistor: 100k NTC, beta model, read through the shared 100k divider
NTC_R25_OHM = 100_000.0
NTC_BETA_K = 3950.0
NTC_DIVIDER_OHM = THERM_DIVIDER_OHM

VCC_V = 3.3

# lumped thermal constants: 2 W comfortably sustains the skin band at 26 C ambient
BODY_HEAT_CAPACITY_J_PER_C = 4.0
ENV_LOSS_W_PER_C = 0.055
MAX_HEATER_W = 2.0

DIRECT_POSITIONS = (1, 3, 5, 7, 9)
INTERP_POSITIONS = (2, 4, 6, 8)
PIEZO_SIDES = ("x+", "x-", "y+", "y-")
MATERIALS = ("none", "metal", "plastic", "cardboard", "fiber")

# positions 2/4/6/8 are surrounded by these direct cells in the 3x3 layout
ADJACENT_DIRECT = {2: (1, 3, 5), 4: (1, 5, 7), 6: (3, 5, 9), 8: (5, 7, 9)}


class ScenarioError(ValueError):
    """Raised when a scenario or physical input is outside the modeled domain."""


@dataclass(frozen=True)
class SensorGeometry:
    """3x3 grid layout on the square sensing surface.

    Grid labels run row-major from the top-left: 1..3 along the top edge,
    7..9 along the bottom.  Magnets sit at the center and the four grid
    corners, i.e. exactly under grid cells 1, 3, 5, 7 and 9.
    """

    surface_mm: float = SURFACE_MM
    inset_mm: float = 3.0

    def __post_init__(self):
        if not 0 < self.inset_mm < self.surface_mm / 2:
            raise ScenarioError(f"inset {self.inset_mm} mm outside surface")

    def grid_position(self, label: int) -> tuple[float, float]:
        if label not in range(1, 10):
            raise ScenarioError(f"grid label must be 1..9, got {label}")
        row, col = divmod(label - 1, 3)
        lo, mid, hi = self.inset_mm, self.surface_mm / 2, self.surface_mm - self.inset_mm
        xs = (lo, mid, hi)
        ys = (hi, mid, lo)  # row 0 = top edge
        return (xs[col], ys[row])

    @property
    def grid_positions(self) -> dict[int, tuple[float, float]]:
        return {label: self.grid_position(label) for label in range(1, 10)}

    @property
    def magnet_positions(self) -> dict[int, tuple[float, float]]:
        return {label: self.grid_position(label) for label in DIRECT_POSITIONS}

    def contains(self, point: tuple[float, float]) -> bool:
        x, y = point
        return 0.0 <= x <= self.surface_mm and 0.0 <= y <= self.surface_mm


@dataclass(frozen=True)
class MaterialThermalParams:
    """Contact-side thermal behaviour of one touchable material.

    The contact patch is a first-order heat reservoir: it drains the sensor
    through ``contact_conductance`` while itself relaxing back to ambient
    through ``patch_loss_w_per_c``.  A large capacity with a large loss pins
    the patch at ambient (a bulk metal sink); a small capacity warms within
    seconds and lets the heater win back the skin temperature.
    """

    contact_conductance: float  # W/degC between sensor body and patch
    patch_capacity_j_per_c: float
    patch_loss_w_per_c: float  # W/degC between patch and ambient


MATERIAL_TABLE: dict[str, MaterialThermalParams] = {
    "metal": MaterialThermalParams(0.616, 800.0, 20.0),
    "plastic": MaterialThermalParams(0.48, 5.5, 0.022),
    "cardboard": MaterialThermalParams(0.34, 0.38, 0.012),
    "fiber": MaterialThermalParams(0.30, 0.32, 0.010),
}

# contact_conductance must rank metal > plastic > cardboard >= fiber > 0
assert (
    MATERIAL_TABLE["metal"].contact_conductance
    > MATERIAL_TABLE["plastic"].contact_conductance
    > MATERIAL_TABLE["cardboard"].contact_conductance
    >= MATERIAL_TABLE["fiber"].contact_conductance
    > 0
)


@dataclass
class SensorPhysicalState:
    """Ground-truth state of the simulated sensor at one instant."""

    contact_point: tuple[float, float] | None = None
    normal_force: float = 0.0  # N, total applied
    shear_vector: tuple[float, float] = (0.0, 0.0)  # N, (x, y)
    body_temperature: float = 26.0  # degC
    ambient_temperature: float = 26.0  # degC
    contact_material: str = "none"
    interference_offset: float = 0.0  # V, common offset on every Hall channel
    contact_patch_temperature: float | None = None  # degC, None when no contact

    def __post_init__(self):
        if not 0.0 <= self.normal_force <= 20.0:
            raise ScenarioError(f"normal force {self.normal_force} N outside [0, 20]")
        if not -20.0 <= self.body_temperature <= 60.0:
            raise ScenarioError(
                f"body temperature {self.body_temperature} C outside [-20, 60]"
            )
        if self.contact_material not in MATERIALS:
            raise ScenarioError(f"unknown material {self.contact_material!r}")


def distribute_force(
    contact_point: tuple[float, float],
    normal_force: float,
    geometry: SensorGeometry,
) -> np.ndarray:
    """Split a point load into the five per-magnet shares.

    Gaussian radial kernel, normalized so the shares always sum to the
    applied force.  Returns shares ordered like ``DIRECT_POSITIONS``.
    """
    if normal_force < 0:
        raise ScenarioError(f"normal force must be >= 0, got {normal_force}")
    if not geometry.contains(contact_point):
        raise ScenarioError(f"contact point {contact_point} outside surface")
    weights = spread_weights(contact_point, geometry)
    return weights * normal_force


def spread_weights(
    contact_point: tuple[float, float], geometry: SensorGeometry
) -> np.ndarray:
    """Normalized kernel weights of the five magnets for one contact point."""
    px, py = contact_point
    w = np.empty(len(DIRECT_POSITIONS))
    for i, label in enumerate(DIRECT_POSITIONS):
        mx, my = geometry.grid_position(label)
        d2 = (px - mx) ** 2 + (py - my) ** 2
        w[i] = math.exp(-d2 / (2.0 * SPREAD_SIGMA_MM**2))
    return w / w.sum()


def hall_voltage(per_magnet_force, interference_offset=0.0, noise=0.0):
    """Hall channel output for a per-magnet force (scalar or array), in volts.

    Strictly monotone quadratic above the rest output; saturates at the
    supply rails rather than aborting on out-of-range force.
    """
    f = np.clip(np.asarray(per_magnet_force, dtype=float), 0.0, HALL_FORCE_LIMIT_N)
    v = HALL_REST_V + HALL_LIN_V_PER_N * f + HALL_QUAD_V_PER_N2 * f * f
    v = v + interference_offset + noise
    return np.clip(v, 0.0, VCC_V)


def hall_force_saturated(per_magnet_force) -> np.ndarray:
    """True where the commanded per-magnet force exceeds the modeled range."""
    return np.asarray(per_magnet_force, dtype=float) > HALL_FORCE_LIMIT_N


def piezo_resistance(shear_component) -> np.ndarray:
    """Strip resistance under a one-sided shear component (negative -> 0 N)."""
    f = np.maximum(np.asarray(shear_component, dtype=float), 0.0)
    return PIEZO_R0_OHM / (1.0 + PIEZO_GAIN_PER_N * f)


def piezo_voltage(shear_component, noise=0.0):
    """Divider output of one piezo side, in volts; rises toward Vcc with force."""
    r = piezo_resistance(shear_component)
    v = VCC_V * PIEZO_FIXED_OHM / (PIEZO_FIXED_OHM + r) + noise
    return np.clip(v, 0.0, VCC_V)


def thermistor_resistance(temperature_c) -> np.ndarray:
    """NTC beta-model resistance at a body temperature in [-20, 60] degC."""
    t = np.asarray(temperature_c, dtype=float)
    if np.any(t < -20.0) or np.any(t > 60.0):
        raise ScenarioError("temperature outside [-20, 60] degC")
    t_k = t + 273.15
    return NTC_R25_OHM * np.exp(NTC_BETA_K * (1.0 / t_k - 1.0 / 298.15))


def thermistor_voltage(temperature_c, noise=0.0):
    """Divider read-out of the thermistor; rises with temperature."""
    r = thermistor_resistance(temperature_c)
    v = VCC_V * NTC_DIVIDER_OHM / (NTC_DIVIDER_OHM + r) + noise
    return np.clip(v, 0.0, VCC_V)


def temperature_from_resistance(r_ohm) -> np.ndarray:
    """Exact beta-model inverse; the oracle the piecewise calibration chases."""
    r = np.asarray(r_ohm, dtype=float)
    inv_t = 1.0 / 298.15 + np.log(r / NTC_R25_OHM) / NTC_BETA_K
    return 1.0 / inv_t - 273.15


def thermal_step(
    state: SensorPhysicalState,
    heating_power: float,
    dt: float,
    material_table: dict[str, MaterialThermalParams] | None = None,
) -> SensorPhysicalState:
    """Advance body (and contact patch) temperature by ``dt`` seconds.

    No contact: exact exponential relaxation toward T_amb + P/k_env, which
    keeps the trajectory inside [min(T0, T_amb), max(T0, T_amb) + P/k_env]
    for any step size.  With contact the coupled pair is integrated with
    sub-stepped Euler; time constants are seconds, so 10 ms sub-steps are
    far inside the stability region.
    """
    if not 0.0 < dt <= 0.1 + 1e-9:  # epsilon absorbs accumulated grid round-off
        raise ScenarioError(f"dt {dt} s outside (0, 0.1]")
    if not 0.0 <= heating_power <= MAX_HEATER_W:
        raise ScenarioError(f"heating power {heating_power} W outside [0, 2]")

    t_amb = state.ambient_temperature
    c = BODY_HEAT_CAPACITY_J_PER_C
    k_env = ENV_LOSS_W_PER_C

    if state.contact_material == "none":
        t_eq = t_amb + heating_power / k_env
        decay = math.exp(-k_env * dt / c)
        t_new = t_eq + (state.body_temperature - t_eq) * decay
        return replace(state, body_temperature=t_new, contact_patch_temperature=None)

    table = material_table or MATERIAL_TABLE
    mat = table[state.contact_material]
    t_body = state.body_temperature
    t_patch = state.contact_patch_temperature
    if t_patch is None:
        t_patch = t_amb

    n_sub = max(1, int(math.ceil(dt / 0.01)))
    h = dt / n_sub
    for _ in range(n_sub):
        flow_env = k_env * (t_body - t_amb)
        flow_mat = mat.contact_conductance * (t_body - t_patch)
        t_body += h * (heating_power - flow_env - flow_mat) / c
        t_patch += h * (flow_mat - mat.patch_loss_w_per_c * (t_patch - t_amb)) / (
            mat.patch_capacity_j_per_c
        )
    return replace(
        state, body_temperature=t_body, contact_patch_temperature=t_patch
    )
