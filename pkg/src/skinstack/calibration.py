"""Model fitting and application for the three sensing modalities.

Direct cells (1, 3, 5, 7, 9) get a quintic polynomial in the conditioned
Hall voltage; the in-between cells (2, 4, 6, 8) get a linear blend of the
three surrounding direct-cell force estimates; shear sides get a quartic in
the conditioned piezo voltage; the thermistor gets 12 exact piecewise-linear
segments through the 13 reference points.

All polynomial inputs are offset-subtracted voltages (delta from the rest
read-out), which is what makes runtime re-zeroing a pure offset update.
Fitting standardizes the input internally for conditioning and expands the
coefficients back to raw form on output.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from . import dsp
from .frames import (
    ADC_MAX,
    ADC_REF_V,
    HALL_SLICE,
    N_CHANNELS,
    PIEZO_SLICE,
    THERM_INDEX,
    FilteredFrame,
    ForceState,
    resistance_from_thermistor_volts,
)

PROFILE_SCHEMA_VERSION = 1
DATASET_SCHEMA_VERSION = 1

DIRECT_POSITIONS = (1, 3, 5, 7, 9)
INTERP_POSITIONS = (2, 4, 6, 8)
ADJACENT_DIRECT = {2: (1, 3, 5), 4: (1, 5, 7), 6: (3, 5, 9), 8: (5, 7, 9)}
PIEZO_SIDES = ("x+", "x-", "y+", "y-")

NORMAL_RANGE_N = 6.0
SHEAR_RANGE_N = 10.0

# channel index in the 10-wide frame for each model input
HALL_CHANNEL = {1: 0, 3: 1, 5: 2, 7: 3, 9: 4}
SHEAR_CHANNEL = {"x+": 5, "x-": 6, "y+": 7, "y-": 8}

FORCE_CLAMP_N = (-0.5, 15.0)

# seconds dropped from each cycle head while the filters settle
CYCLE_TRIM_S = 1.0
REST_FORCE_N = 0.02


class CalibrationError(ValueError):
    """Raised for datasets or fits that violate the calibration contract."""


# --- models ------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialModel:
    """force = bias + sum_j coeffs[j-1] * delta_v**j"""

    bias: float
    coeffs: tuple[float, ...]

    def predict(self, delta_v) -> np.ndarray:
        return np.polynomial.polynomial.polyval(
            np.asarray(delta_v, dtype=float), [self.bias, *self.coeffs]
        )

    def to_json(self) -> dict:
        return {"bias": self.bias, "coeffs": list(self.coeffs)}

    @classmethod
    def from_json(cls, doc: dict) -> "PolynomialModel":
        return cls(bias=float(doc["bias"]), coeffs=tuple(float(c) for c in doc["coeffs"]))


@dataclass(frozen=True)
class InterpModel:
    """force = bias + weights . adjacent direct-cell force estimates"""

    bias: float
    weights: tuple[float, float, float]
    adjacent: tuple[int, int, int]

    def predict(self, adjacent_forces) -> np.ndarray:
        f = np.asarray(adjacent_forces, dtype=float)
        return self.bias + f @ np.asarray(self.weights)

    def to_json(self) -> dict:
        return {
            "bias": self.bias,
            "weights": list(self.weights),
            "adjacent": list(self.adjacent),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "InterpModel":
        return cls(
            bias=float(doc["bias"]),
            weights=tuple(float(w) for w in doc["weights"]),
            adjacent=tuple(int(a) for a in doc["adjacent"]),
        )


@dataclass(frozen=True)
class PiecewiseThermometer:
    """12 linear segments through 13 (resistance, temperature) knots.

    Segment selection clamps to the end segments outside the knot range,
    i.e. out-of-range resistances extrapolate along the boundary line.
    """

    r_knots: tuple[float, ...]  # ascending resistance
    t_knots: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]

    def predict(self, r_ohm) -> np.ndarray:
        r = np.asarray(r_ohm, dtype=float)
        seg = np.clip(np.searchsorted(self.r_knots, r) - 1, 0, len(self.slopes) - 1)
        a = np.asarray(self.slopes)[seg]
        b = np.asarray(self.intercepts)[seg]
        return a * r + b

    def to_json(self) -> dict:
        return {
            "r_knots_ohm": list(self.r_knots),
            "t_knots_c": list(self.t_knots),
            "slopes": list(self.slopes),
            "intercepts": list(self.intercepts),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PiecewiseThermometer":
        return cls(
            r_knots=tuple(float(v) for v in doc["r_knots_ohm"]),
            t_knots=tuple(float(v) for v in doc["t_knots_c"]),
            slopes=tuple(float(v) for v in doc["slopes"]),
            intercepts=tuple(float(v) for v in doc["intercepts"]),
        )


@dataclass
class CalibrationProfile:
    normal_direct: dict[int, PolynomialModel]
    normal_interp: dict[int, InterpModel]
    shear: dict[str, PolynomialModel]
    thermistor: PiecewiseThermometer
    zero_offsets: np.ndarray  # (10,) volts
    filter_spec: dsp.FilterSpec
    created_at: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": PROFILE_SCHEMA_VERSION,
            "created_at": self.created_at,
            "filter_spec": self.filter_spec.to_json(),
            "zero_offsets_v": [float(v) for v in self.zero_offsets],
            "normal_direct": {str(k): m.to_json() for k, m in self.normal_direct.items()},
            "normal_interp": {str(k): m.to_json() for k, m in self.normal_interp.items()},
            "shear": {k: m.to_json() for k, m in self.shear.items()},
            "thermistor": self.thermistor.to_json(),
            "diagnostics": self.diagnostics,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def from_json(cls, doc: dict) -> "CalibrationProfile":
        version = doc.get("schema_version")
        if version != PROFILE_SCHEMA_VERSION:
            raise CalibrationError(
                f"profile schema {version!r} not supported (want {PROFILE_SCHEMA_VERSION})"
            )
        return cls(
            normal_direct={int(k): PolynomialModel.from_json(m) for k, m in doc["normal_direct"].items()},
            normal_interp={int(k): InterpModel.from_json(m) for k, m in doc["normal_interp"].items()},
            shear={k: PolynomialModel.from_json(m) for k, m in doc["shear"].items()},
            thermistor=PiecewiseThermometer.from_json(doc["thermistor"]),
            zero_offsets=np.asarray(doc["zero_offsets_v"], dtype=float),
            filter_spec=dsp.FilterSpec.from_json(doc["filter_spec"]),
            created_at=doc.get("created_at", ""),
            diagnostics=doc.get("diagnostics", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationProfile":
        return cls.from_json(json.loads(Path(path).read_text()))


# --- datasets ----------------------------------------------------------------


@dataclass
class Cycle:
    """One recorded sweep at the 500 Hz acquisition rate."""

    kind: str  # "normal" | "shear"
    label: str  # "p1".."p9" or "x+".."y-"
    index: int
    t: np.ndarray  # (n,) seconds
    voltages: np.ndarray  # (n, 5) hall volts or (n, 4) piezo volts
    f_true: np.ndarray  # (n,) N at the pressed position / swept direction

    @property
    def position(self) -> int:
        if self.kind != "normal":
            raise CalibrationError(f"cycle {self.label} is not a normal cycle")
        return int(self.label.removeprefix("p"))

    def column_names(self) -> list[str]:
        if self.kind == "normal":
            return [f"O_{p}" for p in DIRECT_POSITIONS]
        return ["O_xp", "O_xn", "O_yp", "O_yn"]


@dataclass
class CalibrationDataset:
    normal_cycles: list[Cycle] = field(default_factory=list)
    shear_cycles: list[Cycle] = field(default_factory=list)
    thermistor_samples: np.ndarray | None = None  # (13, 2) resistance, temperature
    meta: dict = field(default_factory=dict)

    def cycles_for(self, kind: str, label: str) -> list[Cycle]:
        pool = self.normal_cycles if kind == "normal" else self.shear_cycles
        return sorted((c for c in pool if c.label == label), key=lambda c: c.index)

    def labels(self, kind: str) -> list[str]:
        pool = self.normal_cycles if kind == "normal" else self.shear_cycles
        return sorted({c.label for c in pool})


def save_cycle_csv(cycle: Cycle, path: Path) -> None:
    names = cycle.column_names()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *names, "F_true", "label"])
        for i in range(len(cycle.t)):
            writer.writerow(
                [f"{cycle.t[i]:.6f}"]
                + [f"{v:.6f}" for v in cycle.voltages[i]]
                + [f"{cycle.f_true[i]:.6f}", cycle.label]
            )


def load_cycle_csv(path: Path, kind: str, index: int) -> Cycle:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    names = list(data.dtype.names)
    if names[0] != "t" or "F_true" not in names or "label" not in names:
        raise CalibrationError(f"{path}: unexpected dataset header {names}")
    volt_cols = names[1:-2]
    t = np.asarray(data["t"], dtype=float)
    voltages = np.column_stack([np.asarray(data[c], dtype=float) for c in volt_cols])
    f_true = np.asarray(data["F_true"], dtype=float)
    labels = set(np.atleast_1d(data["label"]).tolist())
    if len(labels) != 1:
        raise CalibrationError(f"{path}: mixed labels {labels}")
    return Cycle(kind=kind, label=labels.pop(), index=index, t=t, voltages=voltages, f_true=f_true)


def save_dataset(dataset: CalibrationDataset, root: str | Path) -> None:
    root = Path(root)
    for kind, cycles in (("normal", dataset.normal_cycles), ("shear", dataset.shear_cycles)):
        if not cycles:
            continue
        sub = root / kind
        sub.mkdir(parents=True, exist_ok=True)
        for c in cycles:
            stem = c.label.replace("+", "p").replace("-", "n")
            save_cycle_csv(c, sub / f"{stem}_c{c.index}.csv")
    if dataset.thermistor_samples is not None:
        root.mkdir(parents=True, exist_ok=True)
        with (root / "thermistor.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["R_ohms", "T_true_c"])
            for r, t in dataset.thermistor_samples:
                writer.writerow([f"{r:.3f}", f"{t:.4f}"])
    root.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": DATASET_SCHEMA_VERSION, **dataset.meta}
    (root / "meta.json").write_text(json.dumps(meta, indent=2))


def load_dataset(root: str | Path) -> CalibrationDataset:
    root = Path(root)
    if not root.is_dir():
        raise CalibrationError(f"dataset directory {root} does not exist")
    dataset = CalibrationDataset()
    meta_path = root / "meta.json"
    if meta_path.exists():
        dataset.meta = json.loads(meta_path.read_text())
        version = dataset.meta.get("schema_version")
        if version != DATASET_SCHEMA_VERSION:
            raise CalibrationError(f"dataset schema {version!r} not supported")
    for kind in ("normal", "shear"):
        sub = root / kind
        if not sub.is_dir():
            continue
        for path in sorted(sub.glob("*.csv")):
            index = int(path.stem.rsplit("_c", 1)[1])
            cycle = load_cycle_csv(path, kind, index)
            (dataset.normal_cycles if kind == "normal" else dataset.shear_cycles).append(cycle)
    therm = root / "thermistor.csv"
    if therm.exists():
        rows = np.genfromtxt(therm, delimiter=",", skip_header=1)
        dataset.thermistor_samples = np.atleast_2d(rows)
    return dataset


def dataset_from_run(run) -> CalibrationDataset:
    """Cut a simulated run into dataset cycles along its segment markers.

    Channel voltages pass through the ADC (quantize/dequantize) so the
    dataset carries the same granularity the wire protocol would deliver.
    """
    from .acquisition import dequantize, quantize  # local: avoids import cycle

    dataset = CalibrationDataset(
        meta={
            "scenario": run.script.name,
            "seed": run.script.seed,
            "acquisition_hz": 500,
        }
    )
    volts = dequantize(quantize(run.channels))
    therm_points: list[tuple[float, float]] = []
    for seg in run.script.segments:
        sl = run.frame_slice(seg.t0, seg.t1)
        if seg.group == "normal":
            position = int(seg.label.removeprefix("p"))
            cycle = Cycle(
                kind="normal",
                label=seg.label,
                index=seg.cycle,
                t=run.t[sl],
                voltages=volts[sl, HALL_SLICE],
                f_true=run.truth_normal[sl, position - 1],
            )
            dataset.normal_cycles.append(cycle)
        elif seg.group == "shear":
            side = PIEZO_SIDES.index(seg.label)
            cycle = Cycle(
                kind="shear",
                label=seg.label,
                index=seg.cycle,
                t=run.t[sl],
                voltages=volts[sl, PIEZO_SLICE],
                f_true=run.truth_shear[sl, side],
            )
            dataset.shear_cycles.append(cycle)
        elif seg.group == "thermistor":
            # settle for the first half of the plateau, sample over the rest
            mid = sl.start + (sl.stop - sl.start) // 2
            v_mean = float(volts[mid : sl.stop, THERM_INDEX].mean())
            r = float(resistance_from_thermistor_volts(v_mean))
            t_true = float(run.truth_temp[mid : sl.stop].mean())
            therm_points.append((r, t_true))
    if therm_points:
        dataset.thermistor_samples = np.asarray(therm_points)
    return dataset


def split_cycles(
    cycles: list[Cycle], n_calibration: int = 3, n_validation: int = 2, seed: int | None = None
) -> tuple[list[Cycle], list[Cycle]]:
    """Partition one label's cycles into calibration and validation sets.

    Default is the deterministic first-3 / last-2 split; a seed shuffles
    reproducibly instead.
    """
    want = n_calibration + n_validation
    if len(cycles) != want:
        raise CalibrationError(f"expected {want} cycles, got {len(cycles)}")
    ordered = sorted(cycles, key=lambda c: c.index)
    if seed is not None:
        rng = np.random.default_rng(seed)
        ordered = [ordered[i] for i in rng.permutation(want)]
    return ordered[:n_calibration], ordered[n_calibration:]


# --- preprocessing -----------------------------------------------------------


@dataclass
class ConditionedCycle:
    """A cycle after decimation and filtering, trimmed of filter warm-up."""

    cycle: Cycle
    t: np.ndarray  # (m,) seconds at the processing rate
    voltages: np.ndarray  # (m, k) filtered volts
    f_filtered: np.ndarray  # (m,) N through the identical filter chain
    f_command: np.ndarray  # (m,) N decimated only; used for masks


def condition_cycle(cycle: Cycle, spec: dsp.FilterSpec) -> ConditionedCycle:
    """Run the acquisition-rate cycle through the processing chain.

    The ground-truth force column passes through the same filters as the
    voltages so both streams carry the same group delay.
    """
    stacked = np.column_stack([cycle.voltages, cycle.f_true])
    filtered = dsp.filter_batch(stacked, spec)
    t = dsp.decimate_batch(cycle.t, spec.decimate_by)
    f_command = dsp.decimate_batch(cycle.f_true, spec.decimate_by)
    keep = t >= (t[0] + CYCLE_TRIM_S)
    return ConditionedCycle(
        cycle=cycle,
        t=t[keep],
        voltages=filtered[keep, :-1],
        f_filtered=filtered[keep, -1],
        f_command=f_command[keep],
    )


def rest_mask(f_command: np.ndarray, erode: int = 30) -> np.ndarray:
    """Frames with no applied force, shrunk away from transitions."""
    return _erode_mask(f_command < REST_FORCE_N, erode)


def hold_mask(f_command: np.ndarray, erode: int = 50) -> np.ndarray:
    """Frames sitting on the cycle's peak plateau, shrunk from the edges."""
    peak = f_command.max()
    if peak < REST_FORCE_N:
        return np.zeros_like(f_command, dtype=bool)
    return _erode_mask(np.isclose(f_command, peak, rtol=0.0, atol=1e-9), erode)


def _erode_mask(mask: np.ndarray, erode: int) -> np.ndarray:
    out = np.zeros_like(mask)
    start = None
    for i, flag in enumerate(list(mask) + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            lo, hi = start + erode, i - erode
            if hi > lo:
                out[lo:hi] = True
            start = None
    return out


# --- fitting -----------------------------------------------------------------

DEGENERATE_STD_V = 1e-12
RIDGE_LAMBDA = 1e-8


def fit_polynomial_model(
    delta_v: np.ndarray,
    force: np.ndarray,
    degree: int,
    *,
    name: str,
    min_samples: int = 100,
    required_span_n: float | None = None,
    full_range_n: float | None = None,
) -> tuple[PolynomialModel, dict]:
    """Least squares on a standardized Vandermonde system.

    Constant-voltage input degenerates to a ridge-regularized solve (which
    collapses to a pure bias); genuine rank deficiency is an error naming
    the offending model.
    """
    x = np.asarray(delta_v, dtype=float)
    y = np.asarray(force, dtype=float)
    if len(x) < min_samples:
        raise CalibrationError(f"{name}: {len(x)} samples, need >= {min_samples}")
    if required_span_n is not None and np.ptp(y) < required_span_n:
        raise CalibrationError(
            f"{name}: force span {np.ptp(y):.2f} N covers less than "
            f"{required_span_n:.2f} N of the {full_range_n:.0f} N range"
        )

    mu = float(x.mean())
    sigma = float(x.std())
    if sigma < DEGENERATE_STD_V:
        # constant input: ridge limit is the bias-only model
        model = PolynomialModel(bias=float(y.mean()), coeffs=(0.0,) * degree)
        return model, {"degenerate": True, "n_samples": len(x)}

    u = (x - mu) / sigma
    design = np.vander(u, degree + 1, increasing=True)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < degree + 1:
        gram = design.T @ design + RIDGE_LAMBDA * np.eye(degree + 1)
        try:
            coef = np.linalg.solve(gram, design.T @ y)
        except np.linalg.LinAlgError as exc:
            raise CalibrationError(f"{name}: ill-conditioned fit") from exc

    raw = Polynomial(coef)(Polynomial([-mu / sigma, 1.0 / sigma])).coef
    raw = np.pad(raw, (0, degree + 1 - len(raw)))
    residual = y - design @ coef
    diag = {
        "n_samples": len(x),
        "residual_rms": float(np.sqrt(np.mean(residual**2))),
        "condition": float(np.linalg.cond(design)),
        "input_span_v": float(np.ptp(x)),
        # central span: the fit domain with the noise tails trimmed
        "input_lo_v": float(np.quantile(x, 0.005)),
        "input_hi_v": float(np.quantile(x, 0.995)),
    }
    return PolynomialModel(bias=float(raw[0]), coeffs=tuple(float(c) for c in raw[1:])), diag


def fit_normal_direct(
    delta_v: np.ndarray, force: np.ndarray, position: int
) -> tuple[PolynomialModel, dict]:
    if position not in DIRECT_POSITIONS:
        raise CalibrationError(f"position {position} has no Hall cell under it")
    return fit_polynomial_model(
        delta_v,
        force,
        degree=5,
        name=f"normal position {position}",
        required_span_n=0.8 * NORMAL_RANGE_N,
        full_range_n=NORMAL_RANGE_N,
    )


def fit_shear(delta_v: np.ndarray, force: np.ndarray, direction: str) -> tuple[PolynomialModel, dict]:
    if direction not in PIEZO_SIDES:
        raise CalibrationError(f"unknown shear direction {direction!r}")
    return fit_polynomial_model(
        delta_v,
        force,
        degree=4,
        name=f"shear {direction}",
        required_span_n=0.8 * SHEAR_RANGE_N,
        full_range_n=SHEAR_RANGE_N,
    )


def fit_normal_interp(
    adjacent_forces: np.ndarray, force: np.ndarray, position: int
) -> tuple[InterpModel, dict]:
    """Blend the three surrounding direct estimates into the in-between cell."""
    if position not in INTERP_POSITIONS:
        raise CalibrationError(f"position {position} is not an interpolated cell")
    f = np.asarray(adjacent_forces, dtype=float)
    y = np.asarray(force, dtype=float)
    if f.shape[1] != 3:
        raise CalibrationError("interp fit needs the three adjacent force estimates")
    design = np.column_stack([np.ones(len(f)), f])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 4:
        gram = design.T @ design + RIDGE_LAMBDA * np.eye(4)
        coef = np.linalg.solve(gram, design.T @ y)
    residual = y - design @ coef
    model = InterpModel(
        bias=float(coef[0]),
        weights=tuple(float(w) for w in coef[1:]),
        adjacent=ADJACENT_DIRECT[position],
    )
    return model, {"n_samples": len(y), "residual_rms": float(np.sqrt(np.mean(residual**2)))}


def fit_thermistor(samples: np.ndarray) -> PiecewiseThermometer:
    """Exact piecewise-linear interpolation through 13 (R, T) reference points."""
    pts = np.asarray(samples, dtype=float)
    if pts.shape != (13, 2):
        raise CalibrationError(f"thermistor fit needs exactly 13 samples, got {pts.shape}")
    order = np.argsort(pts[:, 0])
    r = pts[order, 0]
    t = pts[order, 1]
    dr = np.diff(r)
    if np.any(dr <= 0):
        raise CalibrationError("thermistor resistances must be strictly monotone")
    slopes = np.diff(t) / dr
    intercepts = t[:-1] - slopes * r[:-1]
    return PiecewiseThermometer(
        r_knots=tuple(float(v) for v in r),
        t_knots=tuple(float(v) for v in t),
        slopes=tuple(float(v) for v in slopes),
        intercepts=tuple(float(v) for v in intercepts),
    )


# --- application ---------------------------------------------------------------


def evaluate_grid(profile: CalibrationProfile, delta_v_hall: np.ndarray) -> np.ndarray:
    """All nine normal-force estimates from the five Hall voltage deltas.

    ``delta_v_hall``: (..., 5) offset-subtracted Hall voltages in channel
    order (positions 1, 3, 5, 7, 9).  Returns (..., 9) in grid order 1..9.
    """
    dv = np.asarray(delta_v_hall, dtype=float)
    direct = {
        pos: profile.normal_direct[pos].predict(dv[..., HALL_CHANNEL[pos]])
        for pos in DIRECT_POSITIONS
    }
    grid = np.zeros(dv.shape[:-1] + (9,))
    for pos in DIRECT_POSITIONS:
        grid[..., pos - 1] = direct[pos]
    for pos in INTERP_POSITIONS:
        model = profile.normal_interp[pos]
        adj = np.stack([direct[a] for a in model.adjacent], axis=-1)
        grid[..., pos - 1] = model.predict(adj)
    return grid


def apply_profile(profile: CalibrationProfile, frame: FilteredFrame) -> ForceState:
    """Calibrated output for one conditioned frame."""
    out = apply_profile_batch(profile, frame.channels[None, :])
    return ForceState(
        timestamp_us=frame.timestamp_us,
        normal_grid=out["normal_grid"][0],
        shear=out["shear"][0],
        temperature=float(out["temperature"][0]),
        saturated=bool(out["saturated"][0]),
    )


def apply_profile_batch(profile: CalibrationProfile, volts: np.ndarray) -> dict:
    """Vectorized apply over (n, 10) conditioned voltages."""
    v = np.asarray(volts, dtype=float)
    delta = v - profile.zero_offsets[None, :]
    grid = evaluate_grid(profile, delta[:, HALL_SLICE])
    shear = np.stack(
        [
            profile.shear[side].predict(delta[:, SHEAR_CHANNEL[side]])
            for side in PIEZO_SIDES
        ],
        axis=-1,
    )
    lo, hi = FORCE_CLAMP_N
    saturated = np.any((grid < lo) | (grid > hi), axis=-1) | np.any(
        (shear < lo) | (shear > hi), axis=-1
    )
    grid = np.clip(grid, lo, hi)
    shear = np.clip(shear, lo, hi)
    # temperature path works on absolute voltage; re-zeroing does not touch it
    r = resistance_from_thermistor_volts(v[:, THERM_INDEX])
    temperature = profile.thermistor.predict(r)
    return {
        "normal_grid": grid,
        "shear": shear,
        "temperature": temperature,
        "saturated": saturated,
    }


# --- evaluation ----------------------------------------------------------------


@dataclass
class GroupMetrics:
    rmse_n: float
    mae_n: float
    noise_to_range: float
    r2: float
    n_samples: int

    def to_json(self) -> dict:
        return {
            "rmse_n": self.rmse_n,
            "mae_n": self.mae_n,
            "noise_to_range": self.noise_to_range,
            "r2": self.r2,
            "n_samples": self.n_samples,
        }


@dataclass
class EvalReport:
    groups: dict[str, GroupMetrics]
    thermistor_max_err_c: float | None = None

    def to_json(self) -> dict:
        doc = {"groups": {k: m.to_json() for k, m in self.groups.items()}}
        if self.thermistor_max_err_c is not None:
            doc["thermistor_max_err_c"] = self.thermistor_max_err_c
        return doc

    def format_table(self) -> str:
        header = f"{'group':<16} {'RMSE (N)':>9} {'MAE (N)':>9} {'NRR':>7} {'R2':>7} {'n':>7}"
        lines = [header, "-" * len(header)]
        for name, m in self.groups.items():
            lines.append(
                f"{name:<16} {m.rmse_n:>9.3f} {m.mae_n:>9.3f} "
                f"{m.noise_to_range * 100:>6.2f}% {m.r2:>7.4f} {m.n_samples:>7d}"
            )
        if self.thermistor_max_err_c is not None:
            lines.append(f"thermistor max abs error: {self.thermistor_max_err_c:.3f} degC")
        return "\n".join(lines)


def _metrics(pred: np.ndarray, truth: np.ndarray, hold_stds: list[float], range_n: float) -> GroupMetrics:
    if len(pred) == 0:
        raise CalibrationError("empty validation set")
    err = pred - truth
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    nrr = float(np.sqrt(np.mean(np.square(hold_stds)))) / range_n if hold_stds else float("nan")
    return GroupMetrics(
        rmse_n=float(np.sqrt(np.mean(err**2))),
        mae_n=float(np.mean(np.abs(err))),
        noise_to_range=nrr,
        r2=r2,
        n_samples=len(pred),
    )


def _force_prediction(profile: CalibrationProfile, conditioned: ConditionedCycle) -> np.ndarray:
    """Predicted force at the cycle's own position or direction."""
    cyc = conditioned.cycle
    if cyc.kind == "normal":
        delta = conditioned.voltages - profile.zero_offsets[HALL_SLICE][None, :]
        grid = evaluate_grid(profile, delta)
        return grid[:, cyc.position - 1]
    delta = conditioned.voltages - profile.zero_offsets[PIEZO_SLICE][None, :]
    side = SHEAR_CHANNEL[cyc.label] - 5
    return profile.shear[cyc.label].predict(delta[:, side])


def evaluate_profile(
    profile: CalibrationProfile,
    validation: dict[str, list[Cycle]],
    thermistor_reference=None,
) -> EvalReport:
    """Table-style metrics over held-out cycles.

    ``validation`` maps group names ("normal_direct", "normal_interp",
    "shear") to cycles; noise-to-range comes from the predicted-force spread
    over the peak-hold plateaus.
    """
    groups: dict[str, GroupMetrics] = {}
    for group_name, cycles in validation.items():
        if not cycles:
            continue
        range_n = SHEAR_RANGE_N if group_name == "shear" else NORMAL_RANGE_N
        preds, truths, hold_stds = [], [], []
        for cycle in cycles:
            conditioned = condition_cycle(cycle, profile.filter_spec)
            pred = _force_prediction(profile, conditioned)
            preds.append(pred)
            truths.append(conditioned.f_filtered)
            hold = hold_mask(conditioned.f_command)
            if hold.any():
                hold_stds.append(float(np.std(pred[hold])))
        groups[group_name] = _metrics(
            np.concatenate(preds), np.concatenate(truths), hold_stds, range_n
        )
    therm_err = None
    if thermistor_reference is not None:
        r, t_true = np.asarray(thermistor_reference).T
        therm_err = float(np.max(np.abs(profile.thermistor.predict(r) - t_true)))
    return EvalReport(groups=groups, thermistor_max_err_c=therm_err)


# --- end-to-end fit -------------------------------------------------------------


def _gather(conditioned: list[ConditionedCycle], channel: int) -> tuple[np.ndarray, np.ndarray]:
    dv = np.concatenate([c.voltages[:, channel] for c in conditioned])
    f = np.concatenate([c.f_filtered for c in conditioned])
    return dv, f


def compute_zero_offsets(conditioned: list[ConditionedCycle]) -> tuple[np.ndarray, np.ndarray]:
    """Mean rest voltage per channel column from the no-load spans."""
    rests = []
    for c in conditioned:
        mask = rest_mask(c.f_command)
        if mask.any():
            rests.append(c.voltages[mask])
    if not rests:
        raise CalibrationError("no rest frames found for zero reference")
    stacked = np.concatenate(rests)
    return stacked.mean(axis=0), stacked.std(axis=0)


def calibrate_dataset(
    dataset: CalibrationDataset,
    spec: dsp.FilterSpec | None = None,
    split_seed: int | None = None,
) -> tuple[CalibrationProfile, EvalReport]:
    """Fit every model from a recorded dataset and score the held-out cycles."""
    spec = spec or dsp.FilterSpec()
    zero_offsets = np.zeros(N_CHANNELS)
    diagnostics: dict = {"fits": {}}

    calib_by_label: dict[str, list[ConditionedCycle]] = {}
    valid_by_label: dict[str, list[Cycle]] = {}
    for kind in ("normal", "shear"):
        for label in dataset.labels(kind):
            calib, valid = split_cycles(dataset.cycles_for(kind, label), seed=split_seed)
            calib_by_label[label] = [condition_cycle(c, spec) for c in calib]
            valid_by_label[label] = valid

    normal_conditioned = [
        c for label, cs in calib_by_label.items() if label.startswith("p") for c in cs
    ]
    shear_conditioned = [
        c for label, cs in calib_by_label.items() if not label.startswith("p") for c in cs
    ]
    if normal_conditioned:
        hall_rest_mean, _ = compute_zero_offsets(normal_conditioned)
        zero_offsets[HALL_SLICE] = hall_rest_mean
    if shear_conditioned:
        piezo_rest_mean, _ = compute_zero_offsets(shear_conditioned)
        zero_offsets[PIEZO_SLICE] = piezo_rest_mean

    normal_direct: dict[int, PolynomialModel] = {}
    for pos in DIRECT_POSITIONS:
        label = f"p{pos}"
        if label not in calib_by_label:
            raise CalibrationError(f"dataset is missing cycles for position {pos}")
        channel = HALL_CHANNEL[pos]
        dv, f = _gather(calib_by_label[label], channel)
        model, diag = fit_normal_direct(dv - zero_offsets[HALL_SLICE][channel], f, pos)
        normal_direct[pos] = model
        diagnostics["fits"][label] = diag

    normal_interp: dict[int, InterpModel] = {}
    for pos in INTERP_POSITIONS:
        label = f"p{pos}"
        if label not in calib_by_label:
            raise CalibrationError(f"dataset is missing cycles for position {pos}")
        adjacent = ADJACENT_DIRECT[pos]
        feats, targets = [], []
        for c in calib_by_label[label]:
            delta = c.voltages - zero_offsets[HALL_SLICE][None, :]
            est = np.stack(
                [normal_direct[a].predict(delta[:, HALL_CHANNEL[a]]) for a in adjacent],
                axis=-1,
            )
            feats.append(est)
            targets.append(c.f_filtered)
        model, diag = fit_normal_interp(np.concatenate(feats), np.concatenate(targets), pos)
        normal_interp[pos] = model
        diagnostics["fits"][label] = diag

    shear_models: dict[str, PolynomialModel] = {}
    for side in PIEZO_SIDES:
        if side not in calib_by_label:
            raise CalibrationError(f"dataset is missing cycles for shear {side}")
        channel = SHEAR_CHANNEL[side] - 5
        dv, f = _gather(calib_by_label[side], channel)
        model, diag = fit_shear(dv - zero_offsets[PIEZO_SLICE][channel], f, side)
        shear_models[side] = model
        diagnostics["fits"][side] = diag

    if dataset.thermistor_samples is None:
        raise CalibrationError("dataset has no thermistor samples")
    thermometer = fit_thermistor(dataset.thermistor_samples)

    profile = CalibrationProfile(
        normal_direct=normal_direct,
        normal_interp=normal_interp,
        shear=shear_models,
        thermistor=thermometer,
        zero_offsets=zero_offsets,
        filter_spec=spec,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        diagnostics=diagnostics,
    )

    validation = {
        "normal_direct": [
            c for pos in DIRECT_POSITIONS for c in valid_by_label.get(f"p{pos}", [])
        ],
        "normal_interp": [
            c for pos in INTERP_POSITIONS for c in valid_by_label.get(f"p{pos}", [])
        ],
        "shear": [c for side in PIEZO_SIDES for c in valid_by_label.get(side, [])],
    }
    report = evaluate_profile(profile, validation, dataset.thermistor_samples)
    return profile, report
