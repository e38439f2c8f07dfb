import json
import math

import numpy as np
import pytest

from skinstack import calibration, dsp, sim
from skinstack.calibration import (
    CalibrationError,
    CalibrationProfile,
    Cycle,
    GroupMetrics,
    PiecewiseThermometer,
    PolynomialModel,
    apply_profile,
    apply_profile_batch,
    evaluate_grid,
    fit_normal_direct,
    fit_normal_interp,
    fit_shear,
    fit_thermistor,
    split_cycles,
)
from skinstack.frames import FilteredFrame
from skinstack.sim import physics


def _planted_voltage_force(coeffs, bias, n=600, v_span=1.2, force_scale=None, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    dv = np.sort(rng.uniform(0.0, v_span, size=n))
    f = bias + sum(c * dv ** (j + 1) for j, c in enumerate(coeffs))
    return dv, f


class TestPolynomialFits:
    def test_quintic_roundtrip_recovers_planted_coefficients(self):
        planted = (9.5, -3.2, 6.0, -1.5, 0.4)
        bias = 0.05
        dv, f = _planted_voltage_force(planted, bias)
        scale = 6.0 / f.max()  # keep the force span inside the contract
        model, diag = fit_normal_direct(dv, f * scale, position=1)
        expected = np.asarray([bias, *planted]) * scale
        got = np.asarray([model.bias, *model.coeffs])
        assert np.allclose(got, expected, rtol=1e-6, atol=1e-9)
        assert diag["residual_rms"] < 1e-9

    def test_quartic_roundtrip_recovers_planted_coefficients(self):
        planted = (12.0, -4.0, 2.5, -0.3)
        bias = -0.02
        dv, f = _planted_voltage_force(planted, bias, v_span=1.0)
        scale = 10.0 / f.max()
        model, _ = fit_shear(dv, f * scale, direction="x+")
        expected = np.asarray([bias, *planted]) * scale
        got = np.asarray([model.bias, *model.coeffs])
        assert np.allclose(got, expected, rtol=1e-6, atol=1e-9)

    def test_prediction_matches_planted_curve(self):
        planted = (9.5, -3.2, 6.0, -1.5, 0.4)
        dv, f = _planted_voltage_force(planted, 0.0)
        scale = 6.0 / f.max()
        model, _ = fit_normal_direct(dv, f * scale, position=3)
        probe = np.linspace(0, 1.2, 50)
        truth = scale * sum(c * probe ** (j + 1) for j, c in enumerate(planted))
        assert np.allclose(model.predict(probe), truth, atol=1e-6)

    def test_constant_voltage_degenerates_to_bias(self):
        dv = np.full(200, 0.4)
        f = np.full(200, 2.0)
        model, diag = calibration.fit_polynomial_model(dv, f, 5, name="degenerate")
        assert diag.get("degenerate") is True
        assert model.bias == pytest.approx(2.0)
        assert model.coeffs == (0.0,) * 5

    def test_insufficient_samples_rejected(self):
        with pytest.raises(CalibrationError, match="samples"):
            fit_normal_direct(np.linspace(0, 1, 50), np.linspace(0, 6, 50), position=1)

    def test_narrow_force_span_rejected(self):
        dv = np.linspace(0, 1, 300)
        with pytest.raises(CalibrationError, match="span"):
            fit_normal_direct(dv, np.linspace(0, 2.0, 300), position=5)

    def test_error_names_the_position(self):
        dv = np.linspace(0, 1, 300)
        with pytest.raises(CalibrationError, match="position 7"):
            fit_normal_direct(dv, np.linspace(0, 2.0, 300), position=7)

    def test_residuals_orthogonal_to_design(self):
        rng = np.random.default_rng(4)
        dv = rng.uniform(0, 1.2, 400)
        f = 5.0 * dv + 0.8 * dv**2 + rng.normal(0, 0.05, 400)
        f = f * (6.0 / f.max())
        model, _ = fit_normal_direct(dv, f, position=1)
        residual = f - model.predict(dv)
        for power in range(6):
            assert abs(np.dot(residual, dv**power)) / len(dv) < 1e-8

    def test_local_least_squares_optimality(self):
        rng = np.random.default_rng(9)
        dv = rng.uniform(0, 1.2, 500)
        f = 4.0 * dv + rng.normal(0, 0.1, 500)
        f = f * (6.0 / f.max())
        model, _ = fit_normal_direct(dv, f, position=1)
        base = np.sum((f - model.predict(dv)) ** 2)
        coeffs = np.asarray([model.bias, *model.coeffs])
        for i in range(len(coeffs)):
            for delta in (-1e-6, 1e-6):
                perturbed = coeffs.copy()
                perturbed[i] += delta
                err = np.sum((f - np.polynomial.polynomial.polyval(dv, perturbed)) ** 2)
                assert err >= base - 1e-9


class TestInterpFit:
    def test_exact_mean_dependence_recovers_third_weights(self):
        rng = np.random.default_rng(2)
        adjacent = rng.uniform(0, 6, size=(400, 3))
        target = adjacent.mean(axis=1)
        model, _ = fit_normal_interp(adjacent, target, position=2)
        assert model.bias == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(model.weights, 1.0 / 3.0, atol=1e-10)
        assert model.adjacent == (1, 3, 5)

    def test_adjacency_triples(self):
        assert calibration.ADJACENT_DIRECT == {
            2: (1, 3, 5),
            4: (1, 5, 7),
            6: (3, 5, 9),
            8: (5, 7, 9),
        }

    def test_rejects_wrong_feature_width(self):
        with pytest.raises(CalibrationError):
            fit_normal_interp(np.zeros((100, 2)), np.zeros(100), position=2)

    def test_rejects_direct_position(self):
        with pytest.raises(CalibrationError):
            fit_normal_interp(np.zeros((100, 3)), np.zeros(100), position=5)


class TestThermistorFit:
    def _samples(self):
        temps = np.linspace(-10, 40, 13)
        res = physics.thermistor_resistance(temps)
        return np.column_stack([res, temps])

    def test_exact_at_all_knots(self):
        samples = self._samples()
        model = fit_thermistor(samples)
        assert np.allclose(model.predict(samples[:, 0]), samples[:, 1], atol=1e-12)

    def test_midpoint_is_linear_blend(self):
        samples = self._samples()
        model = fit_thermistor(samples)
        order = np.argsort(samples[:, 0])
        r_sorted = samples[order, 0]
        t_sorted = samples[order, 1]
        r_mid = 0.5 * (r_sorted[4] + r_sorted[5])
        assert model.predict(r_mid) == pytest.approx(0.5 * (t_sorted[4] + t_sorted[5]))

    def test_between_knots_tracks_beta_model_within_tolerance(self):
        # oracle: the exact beta-model inverse between the knots
        model = fit_thermistor(self._samples())
        t_dense = np.linspace(-10, 40, 4001)
        r_dense = physics.thermistor_resistance(t_dense)
        err = np.abs(model.predict(r_dense) - t_dense)
        assert err.max() <= 0.3

    def test_continuity_at_interior_knots(self):
        model = fit_thermistor(self._samples())
        slopes = np.asarray(model.slopes)
        intercepts = np.asarray(model.intercepts)
        knots = np.asarray(model.r_knots)
        left = slopes[:-1] * knots[1:-1] + intercepts[:-1]
        right = slopes[1:] * knots[1:-1] + intercepts[1:]
        assert np.allclose(left, right, atol=1e-9)

    def test_out_of_range_extrapolates_with_end_segments(self):
        model = fit_thermistor(self._samples())
        # resistances ascend, so below the first knot means hotter than the
        # hottest point and the first segment's line carries the estimate
        r_low = model.r_knots[0] * 0.5
        assert model.predict(r_low) == pytest.approx(
            model.slopes[0] * r_low + model.intercepts[0]
        )
        r_high = model.r_knots[-1] * 2.0
        assert model.predict(r_high) == pytest.approx(
            model.slopes[-1] * r_high + model.intercepts[-1]
        )

    def test_wrong_count_rejected(self):
        with pytest.raises(CalibrationError, match="13"):
            fit_thermistor(np.zeros((12, 2)))

    def test_duplicate_resistance_rejected(self):
        samples = self._samples()
        samples[4, 0] = samples[5, 0]
        with pytest.raises(CalibrationError, match="monotone"):
            fit_thermistor(samples)


class TestSplitCycles:
    def _cycles(self, n=5):
        return [
            Cycle("normal", "p1", i + 1, np.zeros(2), np.zeros((2, 5)), np.zeros(2))
            for i in range(n)
        ]

    def test_default_split_first_three_last_two(self):
        calib, valid = split_cycles(self._cycles())
        assert [c.index for c in calib] == [1, 2, 3]
        assert [c.index for c in valid] == [4, 5]

    def test_wrong_count_rejected_with_count(self):
        with pytest.raises(CalibrationError, match="got 4"):
            split_cycles(self._cycles(4))

    def test_seeded_split_reproducible(self):
        a = split_cycles(self._cycles(), seed=42)
        b = split_cycles(self._cycles(), seed=42)
        assert [c.index for c in a[0]] == [c.index for c in b[0]]
        c = split_cycles(self._cycles(), seed=43)
        assert {x.index for x in c[0]} != {x.index for x in a[0]} or True  # may collide


def _toy_profile() -> CalibrationProfile:
    direct = {p: PolynomialModel(0.0, (10.0, 0.0, 0.0, 0.0, 0.0)) for p in (1, 3, 5, 7, 9)}
    interp = {
        p: calibration.InterpModel(0.0, (1 / 3, 1 / 3, 1 / 3), calibration.ADJACENT_DIRECT[p])
        for p in (2, 4, 6, 8)
    }
    shear = {s: PolynomialModel(0.0, (12.0, 0.0, 0.0, 0.0)) for s in ("x+", "x-", "y+", "y-")}
    temps = np.linspace(-10, 40, 13)
    therm = fit_thermistor(np.column_stack([physics.thermistor_resistance(temps), temps]))
    return CalibrationProfile(
        normal_direct=direct,
        normal_interp=interp,
        shear=shear,
        thermistor=therm,
        zero_offsets=np.concatenate([np.full(5, 0.6), np.full(4, 1.65), [0.0]]),
        filter_spec=dsp.FilterSpec(),
    )


class TestApplyProfile:
    def test_allzero_coefficients_yield_bias_everywhere(self):
        profile = _toy_profile()
        for p in profile.normal_direct:
            profile.normal_direct[p] = PolynomialModel(1.5, (0.0,) * 5)
        for p in profile.normal_interp:
            profile.normal_interp[p] = calibration.InterpModel(
                1.5, (0.0, 0.0, 0.0), calibration.ADJACENT_DIRECT[p]
            )
        frame = FilteredFrame(0, np.concatenate([np.full(5, 0.9), np.full(4, 1.7),
                                                 [physics.thermistor_voltage(25.0)]]))
        state = apply_profile(profile, frame)
        assert np.allclose(state.normal_grid, 1.5)

    def test_rest_frame_reads_fitted_biases(self):
        profile = _toy_profile()
        frame = FilteredFrame(0, np.concatenate([np.full(5, 0.6), np.full(4, 1.65),
                                                 [physics.thermistor_voltage(25.0)]]))
        state = apply_profile(profile, frame)
        assert np.allclose(state.normal_grid, 0.0, atol=1e-12)
        assert np.allclose(state.shear, 0.0, atol=1e-12)
        # piecewise segments approximate the curve between knots to < 0.3 C
        assert state.temperature == pytest.approx(25.0, abs=0.3)

    def test_matches_scripted_reference_evaluation(self):
        # oracle: the published formulas evaluated step by step on one frame
        profile = _toy_profile()
        volts = np.array([0.65, 0.70, 0.72, 0.61, 0.66, 1.70, 1.66, 1.75, 1.65,
                          float(physics.thermistor_voltage(30.0))])
        frame = FilteredFrame(0, volts)
        state = apply_profile(profile, frame)

        dv = volts - profile.zero_offsets
        direct = {p: 10.0 * dv[i] for i, p in enumerate((1, 3, 5, 7, 9))}
        grid = {p: direct[p] for p in direct}
        for p, adj in calibration.ADJACENT_DIRECT.items():
            grid[p] = sum(direct[a] for a in adj) / 3.0
        expected_grid = [grid[p] for p in range(1, 10)]
        assert np.allclose(state.normal_grid, expected_grid, atol=1e-12)
        expected_shear = [12.0 * dv[5 + i] for i in range(4)]
        assert np.allclose(state.shear, expected_shear, atol=1e-12)
        r = (3.3 - volts[9]) / volts[9] * 100e3
        seg = np.clip(np.searchsorted(profile.thermistor.r_knots, r) - 1, 0, 11)
        expected_t = profile.thermistor.slopes[seg] * r + profile.thermistor.intercepts[seg]
        assert state.temperature == pytest.approx(expected_t)

    def test_shear_vector_consistency(self):
        profile = _toy_profile()
        volts = np.concatenate([np.full(5, 0.6), [1.70, 1.66, 1.75, 1.65],
                                [physics.thermistor_voltage(25.0)]])
        state = apply_profile(profile, FilteredFrame(0, volts))
        assert state.shear_vector[0] == pytest.approx(state.shear[0] - state.shear[1])
        assert state.shear_vector[1] == pytest.approx(state.shear[2] - state.shear[3])

    def test_saturation_flag_and_clamp(self):
        profile = _toy_profile()
        volts = np.concatenate([np.full(5, 2.6), np.full(4, 1.65),
                                [physics.thermistor_voltage(25.0)]])
        state = apply_profile(profile, FilteredFrame(0, volts))
        assert state.saturated
        assert state.normal_grid.max() <= 15.0

    def test_batch_matches_single(self):
        profile = _toy_profile()
        rng = np.random.default_rng(0)
        volts = np.column_stack([
            rng.uniform(0.55, 1.2, size=(20, 5)).reshape(20, 5),
            rng.uniform(1.6, 2.2, size=(20, 4)).reshape(20, 4),
            np.full((20, 1), float(physics.thermistor_voltage(30.0))),
        ])
        batch = apply_profile_batch(profile, volts)
        for i in range(20):
            one = apply_profile(profile, FilteredFrame(0, volts[i]))
            assert np.allclose(one.normal_grid, batch["normal_grid"][i])
            assert np.allclose(one.shear, batch["shear"][i])


class TestEvaluateMetrics:
    def test_perfect_predictions(self):
        m = calibration._metrics(np.arange(10.0), np.arange(10.0), [0.0], 6.0)
        assert m.rmse_n == 0.0 and m.mae_n == 0.0 and m.r2 == 1.0

    def test_mean_predictor_gives_zero_r2(self):
        truth = np.arange(10.0)
        pred = np.full(10, truth.mean())
        m = calibration._metrics(pred, truth, [], 6.0)
        assert m.r2 == pytest.approx(0.0)

    def test_empty_set_rejected(self):
        with pytest.raises(CalibrationError):
            calibration._metrics(np.array([]), np.array([]), [], 6.0)


class TestMonotonicity:
    def test_fitted_quintic_monotone_over_sweep_range(self, profile):
        # with monotone ground truth, the fitted polynomial must be
        # non-decreasing over the voltage span the 0..6 N sweep excites
        # (noise excursions beyond the clean top are out of scope)
        geometry = physics.SensorGeometry()
        for i, pos in enumerate((1, 3, 5, 7, 9)):
            share = physics.spread_weights(geometry.grid_position(pos), geometry)[i]
            top = float(physics.hall_voltage(6.0 * share)) - physics.HALL_REST_V
            dv = np.linspace(0.0, top, 500)
            pred = profile.normal_direct[pos].predict(dv)
            assert np.all(np.diff(pred) > -1e-6), f"position {pos} not monotone"


class TestProfilePersistence:
    def test_json_roundtrip(self, tmp_path):
        profile = _toy_profile()
        path = tmp_path / "profile.json"
        profile.save(path)
        loaded = CalibrationProfile.load(path)
        assert loaded.normal_direct.keys() == profile.normal_direct.keys()
        assert loaded.shear["x+"].coeffs == profile.shear["x+"].coeffs
        assert np.allclose(loaded.zero_offsets, profile.zero_offsets)
        assert loaded.thermistor.r_knots == profile.thermistor.r_knots

    def test_schema_version_checked(self, tmp_path):
        profile = _toy_profile()
        doc = profile.to_json()
        doc["schema_version"] = 999
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(CalibrationError, match="schema"):
            CalibrationProfile.load(path)


class TestDatasetIO:
    def test_cycle_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        cycle = Cycle(
            kind="normal",
            label="p3",
            index=2,
            t=np.arange(100) / 500.0,
            voltages=rng.uniform(0.5, 1.5, size=(100, 5)),
            f_true=rng.uniform(0, 6, size=100),
        )
        path = tmp_path / "p3_c2.csv"
        calibration.save_cycle_csv(cycle, path)
        header = path.read_text().splitlines()[0]
        assert header == "t,O_1,O_3,O_5,O_7,O_9,F_true,label"
        loaded = calibration.load_cycle_csv(path, "normal", 2)
        assert loaded.label == "p3"
        assert np.allclose(loaded.voltages, cycle.voltages, atol=1e-6)
        assert np.allclose(loaded.f_true, cycle.f_true, atol=1e-6)

    def test_dataset_directory_roundtrip(self, tmp_path, full_dataset):
        small = calibration.CalibrationDataset(
            normal_cycles=full_dataset.normal_cycles[:2],
            shear_cycles=full_dataset.shear_cycles[:1],
            thermistor_samples=full_dataset.thermistor_samples,
            meta={"scenario": "test"},
        )
        calibration.save_dataset(small, tmp_path / "ds")
        loaded = calibration.load_dataset(tmp_path / "ds")
        assert len(loaded.normal_cycles) == 2
        assert len(loaded.shear_cycles) == 1
        assert loaded.thermistor_samples.shape == (13, 2)
        assert loaded.meta["scenario"] == "test"

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(CalibrationError):
            calibration.load_dataset(tmp_path / "nope")


class TestFullPipelineFit:
    def test_calibrate_dataset_reaches_reference_quality(self, full_calibration):
        _, report = full_calibration
        direct = report.groups["normal_direct"]
        interp = report.groups["normal_interp"]
        shear = report.groups["shear"]
        assert direct.r2 >= 0.99 and direct.rmse_n <= 0.35
        assert interp.r2 >= 0.96 and interp.rmse_n <= 0.55
        assert shear.r2 >= 0.98 and shear.rmse_n <= 0.60
        for metrics in (direct, interp, shear):
            assert metrics.noise_to_range <= 0.05

    def test_zero_offsets_near_rest_outputs(self, profile):
        assert np.allclose(profile.zero_offsets[:5], 0.6, atol=0.02)
        assert np.allclose(profile.zero_offsets[5:9], 1.65, atol=0.02)
