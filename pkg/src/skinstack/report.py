"""Report rendering: evaluation tables to CSV/JSON plus matplotlib figures.

Figures land next to the delimited output so a calibration run leaves a
self-contained directory: scatter of predicted vs reference force per
group, a raw-vs-filtered trace segment, and the thermometer curve against
its reference points.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import calibration, dsp


def write_report_files(report: calibration.EvalReport, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    json_path = outdir / "report.json"
    json_path.write_text(json.dumps(report.to_json(), indent=2))
    csv_path = outdir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "rmse_n", "mae_n", "noise_to_range", "r2", "n_samples"])
        for name, metrics in report.groups.items():
            writer.writerow(
                [
                    name,
                    f"{metrics.rmse_n:.6f}",
                    f"{metrics.mae_n:.6f}",
                    f"{metrics.noise_to_range:.6f}",
                    f"{metrics.r2:.6f}",
                    metrics.n_samples,
                ]
            )
    return [json_path, csv_path]


def _prediction_pairs(profile, cycles):
    preds, truths = [], []
    for cycle in cycles:
        conditioned = calibration.condition_cycle(cycle, profile.filter_spec)
        preds.append(calibration._force_prediction(profile, conditioned))
        truths.append(conditioned.f_filtered)
    return np.concatenate(truths), np.concatenate(preds)


def fit_scatter_figure(profile, cycles, title: str, path: Path) -> Path:
    truth, pred = _prediction_pairs(profile, cycles)
    fig, ax = plt.subplots(figsize=(5, 5))
    step = max(1, len(truth) // 4000)
    ax.plot(truth[::step], pred[::step], ".", ms=2, alpha=0.4, label="validation samples")
    lims = [min(truth.min(), pred.min()), max(truth.max(), pred.max())]
    ax.plot(lims, lims, "k--", lw=1, label="identity")
    ax.set_xlabel("reference force (N)")
    ax.set_ylabel("calibrated force (N)")
    ax.set_title(title)
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def filtering_figure(raw_100hz: np.ndarray, filtered: np.ndarray, path: Path) -> Path:
    t = np.arange(len(raw_100hz)) / 100.0
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(t, raw_100hz, lw=0.6, alpha=0.6, label="raw")
    ax.plot(t, filtered, lw=1.2, label="filtered")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("channel voltage (V)")
    reduction = dsp.fluctuation_reduction(raw_100hz, filtered)
    if reduction is not None:
        ax.set_title(f"steady-hold fluctuation reduced {reduction:.1f}%")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def thermometer_figure(profile, reference_samples: np.ndarray, path: Path) -> Path:
    r_knots = np.asarray(profile.thermistor.r_knots)
    r_dense = np.linspace(r_knots.min(), r_knots.max(), 600)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(r_dense / 1e3, profile.thermistor.predict(r_dense), lw=1.2, label="piecewise model")
    ref = np.asarray(reference_samples)
    ax.plot(ref[:, 0] / 1e3, ref[:, 1], "o", ms=4, label="reference points")
    ax.set_xlabel("thermistor resistance (kOhm)")
    ax.set_ylabel("temperature (degC)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_calibration_report(
    profile,
    report: calibration.EvalReport,
    dataset: calibration.CalibrationDataset,
    outdir: str | Path,
) -> list[Path]:
    """Delimited report plus the standard figure set for a calibration run."""
    outdir = Path(outdir)
    outputs = write_report_files(report, outdir)
    figdir = outdir / "figures"
    figdir.mkdir(exist_ok=True)

    groups = {
        "normal_direct": [
            c for c in dataset.normal_cycles
            if int(c.label.removeprefix("p")) in calibration.DIRECT_POSITIONS and c.index > 3
        ],
        "normal_interp": [
            c for c in dataset.normal_cycles
            if int(c.label.removeprefix("p")) in calibration.INTERP_POSITIONS and c.index > 3
        ],
        "shear": [c for c in dataset.shear_cycles if c.index > 3],
    }
    for name, cycles in groups.items():
        if cycles:
            outputs.append(
                fit_scatter_figure(profile, cycles, name.replace("_", " "), figdir / f"fit_{name}.png")
            )

    hold_cycle = next(iter(groups["normal_direct"]), None)
    if hold_cycle is not None:
        raw100 = dsp.decimate_batch(hold_cycle.voltages[:, 0], profile.filter_spec.decimate_by)
        filtered = dsp.cascade_batch(
            dsp.butterworth_design(profile.filter_spec),
            dsp.moving_average_batch(raw100, profile.filter_spec.ma_window),
        )
        outputs.append(filtering_figure(raw100, filtered, figdir / "filtering.png"))

    if dataset.thermistor_samples is not None:
        outputs.append(
            thermometer_figure(profile, dataset.thermistor_samples, figdir / "thermometer.png")
        )
    return outputs
