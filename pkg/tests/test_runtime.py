import numpy as np
import pytest

from skinstack import calibration, dsp, runtime, sim
from skinstack.frames import FilteredFrame, ForceState
from skinstack.runtime import (
    GammaWindow,
    MaterialTracker,
    RuntimeError_,
    ThermostatConfig,
    classify_material,
    gamma,
    thermostat_duty,
    zero_calibrate,
)
from skinstack.sim import physics


def _state(normal_total=0.0, shear_x=0.0, shear_y=0.0, temp=33.0, ts=0):
    grid = np.zeros(9)
    grid[4] = normal_total
    shear = np.array([max(shear_x, 0.0), max(-shear_x, 0.0), max(shear_y, 0.0), max(-shear_y, 0.0)])
    return ForceState(timestamp_us=ts, normal_grid=grid, shear=shear, temperature=temp)


class TestThermostatDuty:
    CFG = ThermostatConfig()

    def test_off_at_stop_temperature(self):
        assert thermostat_duty(36.0, self.CFG) == 0.0

    def test_full_at_heat_temperature(self):
        assert thermostat_duty(32.0, self.CFG) == 1.0

    def test_half_at_midpoint(self):
        assert thermostat_duty(34.0, self.CFG) == 0.5

    def test_continuous_and_non_increasing(self):
        temps = np.linspace(20, 45, 500)
        duties = [thermostat_duty(t, self.CFG) for t in temps]
        assert all(a >= b for a, b in zip(duties, duties[1:]))
        assert all(0.0 <= d <= 1.0 for d in duties)
        steps = np.abs(np.diff(duties))
        assert steps.max() < 0.05  # no jumps on a fine grid

    def test_config_validation(self):
        with pytest.raises(RuntimeError_):
            ThermostatConfig(stop_c=32.0, heat_c=36.0)

    def test_closed_loop_enters_and_holds_band(self):
        # thermostat_duty composed with the thermal model at 26 C ambient
        cfg = ThermostatConfig()
        state = physics.SensorPhysicalState(body_temperature=26.0, ambient_temperature=26.0)
        controller = runtime.ThermostatController(cfg)
        temps, powers = [], []
        for k in range(3000):
            power = controller.power(k * cfg.pwm_period_s, state.body_temperature)
            state = sim.thermal_step(state, power, cfg.pwm_period_s)
            temps.append(state.body_temperature)
            powers.append(power)
        temps = np.asarray(temps)
        in_band = (temps >= 32.0) & (temps <= 36.0)
        first = int(np.argmax(in_band))
        assert in_band[first:].all()
        assert np.mean(powers) <= 2.0


class TestRuntimeParams:
    def test_json_roundtrip(self, tmp_path):
        import json

        params = runtime.RuntimeParams(
            thermostat=ThermostatConfig(stop_c=33.4, heat_c=31.4),
            gamma_threshold_cv=0.3,
        )
        path = tmp_path / "runtime.json"
        path.write_text(json.dumps(params.to_json()))
        assert runtime.RuntimeParams.load(path) == params

    def test_builders_carry_parameters(self):
        params = runtime.RuntimeParams(gamma_gate_n=5.0, material_episode_s=20.0)
        assert params.build_gamma_window().gate_n == 5.0
        assert params.build_material_tracker().episode_s == 20.0


class TestGamma:
    def test_ratio(self):
        assert gamma(_state(normal_total=2.0, shear_x=1.0)) == pytest.approx(2.0)

    def test_guard_below_threshold(self):
        assert gamma(_state(normal_total=2.0, shear_x=0.1)) is None

    def test_scale_invariance(self):
        a = gamma(_state(normal_total=3.0, shear_x=2.0))
        b = gamma(_state(normal_total=9.0, shear_x=6.0))
        assert a == pytest.approx(b)

    def test_ground_truth_oblique_press_gives_unity(self):
        # 45 degree press with friction-free transfer: the ground-truth
        # decomposition carries equal normal and shear magnitudes
        state = _state(normal_total=6.0, shear_x=6.0)
        assert gamma(state) == pytest.approx(1.0)


class TestInterferenceDetector:
    def test_constant_ratio_window_is_clean(self):
        window = GammaWindow()
        for i in range(100):
            window.push(_state(normal_total=6.0, shear_x=5.0, ts=i * 10000))
        result = window.detect()
        assert result.status == "ok"
        assert not result.flag
        assert result.cv == pytest.approx(0.0, abs=1e-12)

    def test_alternating_ratio_flags(self):
        # gamma alternating 0.5 / 2.0: mean 1.25, std 0.75, CV = 0.6
        window = GammaWindow()
        for i in range(100):
            fn = 2.5 if i % 2 == 0 else 10.0
            window.push(_state(normal_total=fn, shear_x=5.0, ts=i * 10000))
        result = window.detect()
        assert result.cv == pytest.approx(0.6, abs=1e-12)
        assert result.flag
        assert result.confidence == 1.0

    def test_indeterminate_until_enough_gated_frames(self):
        window = GammaWindow()
        for i in range(29):
            window.push(_state(normal_total=6.0, shear_x=5.0, ts=i))
        assert window.detect().status == "indeterminate"
        window.push(_state(normal_total=6.0, shear_x=5.0, ts=30))
        assert window.detect().status == "ok"

    def test_low_shear_frames_do_not_contribute(self):
        window = GammaWindow()
        for i in range(200):
            window.push(_state(normal_total=6.0, shear_x=2.0, ts=i))
        assert window.detect().status == "indeterminate"


class TestZeroCalibration:
    def _frames(self, profile, n=60, load=0.0, seed=0):
        rng = np.random.default_rng(seed)
        rest = profile.zero_offsets.copy()
        rest[9] = float(physics.thermistor_voltage(26.0))
        frames = []
        for i in range(n):
            v = rest + rng.normal(0, 0.002, size=10)
            v[:5] += load * 0.02
            frames.append(FilteredFrame(i * 10000, v))
        return frames

    def test_offsets_equal_window_mean(self, profile):
        frames = self._frames(profile)
        offsets = zero_calibrate(frames, "normal", profile)
        stacked = np.stack([f.channels[:5] for f in frames])
        assert np.allclose(offsets, stacked.mean(axis=0), atol=1e-15)

    def test_groups_update_independently(self, profile):
        before_piezo = profile.zero_offsets[5:9].copy()
        zero_calibrate(self._frames(profile), "normal", profile)
        assert np.array_equal(profile.zero_offsets[5:9], before_piezo)
        before_hall = profile.zero_offsets[:5].copy()
        zero_calibrate(self._frames(profile), "shear", profile)
        assert np.array_equal(profile.zero_offsets[:5], before_hall)

    def test_zeroing_recenters_rest_output(self, profile):
        frames = self._frames(profile, seed=3)
        zero_calibrate(frames, "normal", profile)
        zero_calibrate(frames, "shear", profile)
        state = calibration.apply_profile(profile, frames[-1])
        # each cell reads its fit intercept plus noise, well under half a newton
        assert np.abs(state.normal_grid).max() < 0.5
        assert np.abs(state.shear).max() < 0.5

    def test_too_few_frames_rejected(self, profile):
        with pytest.raises(RuntimeError_, match="50"):
            zero_calibrate(self._frames(profile, n=20), "normal", profile)

    def test_rejected_under_varying_load(self, profile):
        frames = []
        rest = profile.zero_offsets.copy()
        rest[9] = float(physics.thermistor_voltage(26.0))
        for i in range(60):
            v = rest.copy()
            v[:5] += 0.4 * (i % 2)  # alternating heavy load
            frames.append(FilteredFrame(i * 10000, v))
        with pytest.raises(RuntimeError_, match="not at rest"):
            zero_calibrate(frames, "normal", profile)

    def test_unknown_group_rejected(self, profile):
        with pytest.raises(RuntimeError_):
            zero_calibrate(self._frames(profile), "temperature", profile)


class TestMaterialClassification:
    def _trace(self, drop, recovery_onset_s, rate_hz=100.0, duration_s=25.0):
        t = np.arange(-5.0, duration_s, 1.0 / rate_hz)
        temp = np.full_like(t, 33.0)
        post = t >= 0
        tp = t[post]
        if recovery_onset_s is None:
            temp[post] = 33.0 - drop * (1 - np.exp(-tp / 4.0))
        else:
            falling = 33.0 - drop * np.minimum(tp / recovery_onset_s, 1.0)
            rising = 33.0 - drop + 0.08 * (tp - recovery_onset_s)
            temp[post] = np.where(tp < recovery_onset_s, falling, np.minimum(rising, 33.0))
        return t, temp

    def test_metal_profile(self):
        t, temp = self._trace(drop=4.0, recovery_onset_s=None)
        call = classify_material(t, temp)
        assert call.label == "metal"
        assert call.features.max_drop_c == pytest.approx(4.0, abs=0.1)
        assert call.features.recovery_onset_s is None

    def test_plastic_profile(self):
        t, temp = self._trace(drop=1.4, recovery_onset_s=6.0)
        call = classify_material(t, temp)
        assert call.label == "plastic"
        assert call.features.recovery_onset_s == pytest.approx(6.0, abs=0.2)

    def test_cardboard_profile(self):
        t, temp = self._trace(drop=0.4, recovery_onset_s=1.8)
        call = classify_material(t, temp)
        assert call.label == "cardboard_or_fiber"
        assert call.features.recovery_onset_s <= 2.0

    def test_sampling_rate_invariance(self):
        # identical trace shape sampled between 10 and 100 Hz must yield
        # the same label and near-identical features
        calls = {}
        for rate in (10.0, 25.0, 50.0, 100.0):
            t, temp = self._trace(drop=1.4, recovery_onset_s=6.0, rate_hz=rate)
            calls[rate] = classify_material(t, temp)
        labels = {c.label for c in calls.values()}
        assert labels == {"plastic"}
        drops = [c.features.max_drop_c for c in calls.values()]
        assert max(drops) - min(drops) < 0.05
        onsets = [c.features.recovery_onset_s for c in calls.values()]
        assert max(onsets) - min(onsets) < 0.2

    def test_unstable_baseline_rejected(self):
        t = np.arange(-5.0, 10.0, 0.01)
        temp = 33.0 + np.where(t < 0, np.linspace(-1.0, 1.0, len(t)), 0.0)
        with pytest.raises(RuntimeError_, match="baseline"):
            classify_material(t, temp)

    def test_missing_baseline_rejected(self):
        t = np.arange(0.0, 10.0, 0.01)
        with pytest.raises(RuntimeError_):
            classify_material(t, np.full_like(t, 33.0))


class TestMaterialTracker:
    def test_tracker_labels_simulated_metal_touch(self, profile):
        run = sim.simulate_scenario(sim.material_episode("metal", contact_at_s=8.0, episode_s=38.0))
        volts = dsp.filter_batch(run.channels, profile.filter_spec)
        t100 = dsp.decimate_batch(run.t, profile.filter_spec.decimate_by)
        out = calibration.apply_profile_batch(profile, volts)
        tracker = MaterialTracker(episode_s=25.0)
        calls = []
        for i in range(len(t100)):
            state = ForceState(
                timestamp_us=int(t100[i] * 1e6),
                normal_grid=out["normal_grid"][i],
                shear=out["shear"][i],
                temperature=float(out["temperature"][i]),
            )
            call = tracker.push(state)
            if call is not None:
                calls.append(call)
        assert [c.label for c in calls] == ["metal"]
