"""Command-line entry point wiring simulator -> acquisition -> calibration -> runtime.

Verbs:
    sim        run a scenario, write dataset CSVs (and optionally the raw export)
    calibrate  fit a profile from a dataset directory, print the evaluation table
    evaluate   score an existing profile against a dataset directory
    serve      stream live calibrated state from a simulated sensor
    replay     push a recording back through the pipeline

The default service port comes from SKINSTACK_PORT when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import calibration, report, runtime, service
from .sim import ScenarioError, ScenarioScript, builtin_scenario, simulate_scenario
from .sim.scenario import BUILTIN_SCENARIOS

DEFAULT_PORT = int(os.environ.get("SKINSTACK_PORT", "7355"))


def _load_scenario(spec: str) -> ScenarioScript:
    path = Path(spec)
    if path.exists():
        return ScenarioScript.load(path)
    return builtin_scenario(spec)


def _cmd_sim(args) -> int:
    script = _load_scenario(args.scenario)
    if args.seed is not None:
        script.seed = args.seed
    run = simulate_scenario(script)
    print(f"simulated {script.name}: {run.n_frames} frames over {script.duration_s:.1f} s")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = calibration.dataset_from_run(run)
    if dataset.normal_cycles or dataset.shear_cycles or dataset.thermistor_samples is not None:
        calibration.save_dataset(dataset, outdir)
        print(
            f"wrote dataset to {outdir}: {len(dataset.normal_cycles)} normal cycles, "
            f"{len(dataset.shear_cycles)} shear cycles"
            + (", thermistor table" if dataset.thermistor_samples is not None else "")
        )
    if args.raw_csv:
        run.write_raw_csv(args.raw_csv)
        print(f"wrote raw ground-truth export to {args.raw_csv}")
    script.save(outdir / "scenario.json")
    return 0


def _cmd_calibrate(args) -> int:
    dataset = calibration.load_dataset(args.dataset)
    profile, eval_report = calibration.calibrate_dataset(dataset, split_seed=args.split_seed)
    profile.save(args.out)
    print(f"profile written to {args.out}")
    print(eval_report.format_table())
    if args.report:
        outputs = report.render_calibration_report(profile, eval_report, dataset, args.report)
        print(f"report files: {', '.join(str(p) for p in outputs)}")
    return 0


def _cmd_evaluate(args) -> int:
    profile = calibration.CalibrationProfile.load(args.profile)
    dataset = calibration.load_dataset(args.dataset)
    validation = {
        "normal_direct": [
            c for c in dataset.normal_cycles
            if int(c.label.removeprefix("p")) in calibration.DIRECT_POSITIONS
        ],
        "normal_interp": [
            c for c in dataset.normal_cycles
            if int(c.label.removeprefix("p")) in calibration.INTERP_POSITIONS
        ],
        "shear": list(dataset.shear_cycles),
    }
    eval_report = calibration.evaluate_profile(
        profile, validation, dataset.thermistor_samples
    )
    print(eval_report.format_table())
    if args.report:
        outputs = report.write_report_files(eval_report, args.report)
        print(f"report files: {', '.join(str(p) for p in outputs)}")
    return 0


def _cmd_coeffs(args) -> int:
    from . import dsp

    spec = dsp.FilterSpec(
        ma_window=args.ma_window, sample_rate_hz=args.rate, cutoff_hz=args.cutoff
    )
    print(f"moving average: window {spec.ma_window} at {spec.sample_rate_hz:.0f} Hz")
    print(f"butterworth order {spec.butter_order}, cutoff {spec.cutoff_hz:.2f} Hz, biquad sections:")
    for i, s in enumerate(dsp.butterworth_design(spec), 1):
        print(f"  section {i}: b = [{s.b0:.12g}, {s.b1:.12g}, {s.b2:.12g}]  "
              f"a = [1, {s.a1:.12g}, {s.a2:.12g}]")
    return 0


def _cmd_serve(args) -> int:
    script = _load_scenario(args.scenario)
    profile = calibration.CalibrationProfile.load(args.profile)
    config = service.ServiceConfig(
        host=args.host, port=args.port, raw_port=args.raw_port, realtime=True
    )
    params = runtime.RuntimeParams.load(args.runtime_config) if args.runtime_config else None
    thermostat = (params.thermostat if params else runtime.ThermostatConfig()) if args.thermostat else None
    svc = service.SensorService(script, profile, config, thermostat=thermostat, params=params)
    svc.start()
    print(f"serving on {args.host}:{svc.bound_port}" +
          (f" (raw packets on {svc.bound_raw_port})" if svc.bound_raw_port else ""))
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        print("stopping")
    finally:
        svc.stop()
    return 0


def _cmd_replay(args) -> int:
    profile = calibration.CalibrationProfile.load(args.profile)
    pipeline = runtime.LivePipeline(profile)
    states = []
    for frame in service.replay_frames(args.recording, speed=args.speed):
        state = pipeline.push_raw(frame)
        if state is not None:
            states.append(state)
    print(f"replayed {len(states)} states from {args.recording}")
    if args.out:
        with Path(args.out).open("w") as fh:
            for state in states:
                fh.write(json.dumps(state.as_dict()) + "\n")
        print(f"states written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skinstack", description="tactile sensor stack: simulate, calibrate, serve"
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_sim = sub.add_parser("sim", help="run a scenario and write dataset CSVs")
    p_sim.add_argument("scenario", help=f"script path or built-in ({', '.join(sorted(BUILTIN_SCENARIOS))}, material-<name>)")
    p_sim.add_argument("--out", default="dataset", help="output dataset directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the script seed")
    p_sim.add_argument("--raw-csv", default=None, help="also write the frame-rate ground-truth CSV")
    p_sim.set_defaults(func=_cmd_sim)

    p_cal = sub.add_parser("calibrate", help="fit a profile from a dataset directory")
    p_cal.add_argument("dataset", help="dataset directory (from `skinstack sim`)")
    p_cal.add_argument("--out", default="profile.json", help="profile output path")
    p_cal.add_argument("--report", default=None, help="directory for report files and figures")
    p_cal.add_argument("--split-seed", type=int, default=None, help="shuffle the 3/2 cycle split")
    p_cal.set_defaults(func=_cmd_calibrate)

    p_eval = sub.add_parser("evaluate", help="score a profile against a dataset")
    p_eval.add_argument("profile")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--report", default=None, help="directory for report files")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_serve = sub.add_parser("serve", help="stream live calibrated state over TCP")
    p_serve.add_argument("--scenario", required=True)
    p_serve.add_argument("--profile", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=DEFAULT_PORT)
    p_serve.add_argument("--raw-port", type=int, default=None, help="binary packet stream port")
    p_serve.add_argument("--thermostat", action="store_true", help="run the heater loop")
    p_serve.add_argument("--runtime-config", default=None, help="JSON file of runtime parameters")
    p_serve.set_defaults(func=_cmd_serve)

    p_coeffs = sub.add_parser("coeffs", help="print the designed filter coefficients")
    p_coeffs.add_argument("--ma-window", type=int, default=15)
    p_coeffs.add_argument("--rate", type=float, default=100.0)
    p_coeffs.add_argument("--cutoff", type=float, default=5.0)
    p_coeffs.set_defaults(func=_cmd_coeffs)

    p_replay = sub.add_parser("replay", help="run a recording through the pipeline")
    p_replay.add_argument("recording")
    p_replay.add_argument("--profile", required=True)
    p_replay.add_argument("--speed", type=float, default=1.0, help="0 = as fast as possible")
    p_replay.add_argument("--out", default=None, help="write resulting states as JSON lines")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        calibration.CalibrationError,
        service.ServiceError,
        ScenarioError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
