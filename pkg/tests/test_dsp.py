import math

import numpy as np
import pytest

from skinstack import dsp
from skinstack.dsp import (
    BiquadCascade,
    Decimator,
    FilterChain,
    FilterSpec,
    MovingAverage,
    butterworth_design,
    cascade_batch,
    cascade_response,
    decimate_batch,
    filter_batch,
    fluctuation_reduction,
    moving_average_batch,
)

SPEC = FilterSpec()


def warped_butterworth_magnitude(freq_hz, spec: FilterSpec) -> float:
    """Closed-form magnitude of a bilinear-transformed Butterworth low-pass.

    |H(f)| = 1 / sqrt(1 + (tan(pi f / fs) / tan(pi fc / fs))^(2n)) exactly,
    independent of the pole-placement route the implementation takes.
    """
    ratio = math.tan(math.pi * freq_hz / spec.sample_rate_hz) / math.tan(
        math.pi * spec.cutoff_hz / spec.sample_rate_hz
    )
    return 1.0 / math.sqrt(1.0 + ratio ** (2 * spec.butter_order))


class TestFilterSpec:
    def test_defaults(self):
        assert SPEC.ma_window == 15
        assert SPEC.butter_order == 4
        assert SPEC.sample_rate_hz == 100.0
        assert SPEC.cutoff_hz == 5.0

    def test_rejects_cutoff_at_nyquist(self):
        with pytest.raises(ValueError):
            FilterSpec(cutoff_hz=50.0)

    def test_rejects_odd_order(self):
        with pytest.raises(ValueError):
            FilterSpec(butter_order=3)

    def test_rejects_empty_window(self):
        with pytest.raises(ValueError):
            FilterSpec(ma_window=0)


class TestButterworthDesign:
    def test_two_sections_for_fourth_order(self):
        assert len(butterworth_design(SPEC)) == 2

    def test_dc_gain_exactly_one(self):
        h0 = abs(cascade_response(butterworth_design(SPEC), 0.0, SPEC.sample_rate_hz))
        assert abs(h0 - 1.0) < 1e-12

    def test_minus_3db_at_cutoff(self):
        h = abs(cascade_response(butterworth_design(SPEC), SPEC.cutoff_hz, SPEC.sample_rate_hz))
        db = 20 * math.log10(h)
        assert db == pytest.approx(-3.0103, abs=0.01)

    def test_magnitude_matches_closed_form_oracle(self):
        sections = butterworth_design(SPEC)
        for freq in (1.0, 2.5, 5.0, 7.5, 10.0, 20.0, 40.0):
            measured = abs(cascade_response(sections, freq, SPEC.sample_rate_hz))
            assert measured == pytest.approx(warped_butterworth_magnitude(freq, SPEC), rel=1e-9)

    def test_rolloff_one_decade_above(self):
        # at 10 Hz the warped ratio is tan(.1pi)/tan(.05pi) = 2.0515, giving
        # -24.98 dB for the 4th-order curve (the exactly-one-octave figure
        # would be -24.1 dB)
        h = abs(cascade_response(butterworth_design(SPEC), 10.0, SPEC.sample_rate_hz))
        assert 20 * math.log10(h) == pytest.approx(-24.98, abs=0.02)

    def test_all_poles_strictly_inside_unit_circle(self):
        for section in butterworth_design(SPEC):
            assert np.all(np.abs(section.poles()) < 1.0)

    def test_matches_scipy_reference(self):
        from scipy import signal

        sections = butterworth_design(SPEC)
        b_ref, a_ref = signal.butter(4, 5.0, fs=100.0)
        freqs = np.linspace(0, 49, 200)
        _, h_ref = signal.freqz(b_ref, a_ref, worN=freqs, fs=100.0)
        h_mine = cascade_response(sections, freqs, 100.0)
        assert np.allclose(np.abs(h_mine), np.abs(h_ref), atol=1e-9)


class TestMovingAverage:
    def test_constant_reproduced_from_first_sample(self):
        ma = MovingAverage(15, 1)
        for _ in range(40):
            assert ma.push(np.array([2.5]))[0] == pytest.approx(2.5)

    def test_impulse_response_after_warmup(self):
        ma = MovingAverage(15, 1)
        for _ in range(20):
            ma.push(np.array([0.0]))
        outs = [ma.push(np.array([1.0]))[0]]
        for _ in range(20):
            outs.append(ma.push(np.array([0.0]))[0])
        assert outs[:15] == pytest.approx([1.0 / 15] * 15)
        assert outs[15] == pytest.approx(0.0)

    def test_ramp_delay_is_half_window(self):
        # steady-state mean of an arithmetic ramp lags (window-1)/2 samples
        slope = 0.3
        x = slope * np.arange(200.0)
        y = moving_average_batch(x, 15)
        delay = (15 - 1) / 2
        assert y[100] == pytest.approx(slope * (100 - delay), rel=1e-12)

    def test_batch_matches_streaming(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(300, 4))
        ma = MovingAverage(15, 4)
        streamed = np.stack([ma.push(row) for row in x])
        assert np.allclose(moving_average_batch(x, 15), streamed, atol=1e-12)


class TestDecimation:
    def test_counts(self):
        assert len(decimate_batch(np.zeros((500, 2)), 5)) == 100

    def test_constant_preserved(self):
        out = decimate_batch(np.full((50, 3), 1.23), 5)
        assert np.allclose(out, 1.23)

    def test_group_mean(self):
        out = decimate_batch(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 5)
        assert out[0] == pytest.approx(3.0)

    def test_streaming_matches_batch(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(100, 2))
        dec = Decimator(5, 2)
        streamed = [out for row in x if (out := dec.push(row)) is not None]
        assert np.allclose(np.stack(streamed), decimate_batch(x, 5), atol=1e-15)


class TestFilterApply:
    def test_zero_stream_stays_zero(self):
        cascade = BiquadCascade(butterworth_design(SPEC), 2)
        for _ in range(50):
            assert np.all(cascade.push(np.zeros(2)) == 0.0)

    def test_step_settles_within_one_second(self):
        # simulated step response: settles to within 1% of the step in < 1 s
        cascade = BiquadCascade(butterworth_design(SPEC), 1)
        ma = MovingAverage(15, 1)
        outs = [cascade.push(ma.push(np.array([1.0])))[0] for _ in range(100)]
        settled = [abs(v - 1.0) < 0.01 for v in outs]
        assert all(settled[60:])

    def test_dc_preserved_exactly_after_settling(self):
        cascade = BiquadCascade(butterworth_design(SPEC), 1)
        value = 0.0
        for _ in range(2000):
            value = cascade.push(np.array([0.7]))[0]
        assert value == pytest.approx(0.7, abs=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=400)
        y = rng.normal(size=400)
        sections = butterworth_design(SPEC)
        fx = cascade_batch(sections, x)
        fy = cascade_batch(sections, y)
        fxy = cascade_batch(sections, 2.0 * x + 3.0 * y)
        assert np.allclose(fxy, 2.0 * fx + 3.0 * fy, atol=1e-10)

    def test_white_noise_variance_matches_integrated_response(self):
        # oracle: output/input variance ratio equals the mean of |H|^2 over
        # the band, computed by quadrature on a dense grid
        spec = SPEC
        sections = butterworth_design(spec)
        freqs = np.linspace(0, spec.sample_rate_hz / 2, 20001)
        h2 = np.abs(cascade_response(sections, freqs, spec.sample_rate_hz)) ** 2
        expected_ratio = np.trapezoid(h2, freqs) / (spec.sample_rate_hz / 2)
        rng = np.random.default_rng(2)
        x = rng.normal(size=400_000)
        y = cascade_batch(sections, x)[2000:]
        measured = y.var() / x.var()
        assert measured == pytest.approx(expected_ratio, rel=0.05)

    def test_nonfinite_input_resets_and_counts(self):
        cascade = BiquadCascade(butterworth_design(SPEC), 1)
        for _ in range(20):
            cascade.push(np.array([1.0]))
        cascade.push(np.array([np.nan]))
        assert cascade.error_count == 1
        out = cascade.push(np.array([0.0]))
        assert np.isfinite(out).all()

    def test_streaming_matches_batch(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(500, 3))
        sections = butterworth_design(SPEC)
        cascade = BiquadCascade(sections, 3)
        streamed = np.stack([cascade.push(row) for row in x])
        assert np.allclose(cascade_batch(sections, x), streamed, atol=1e-12)

    def test_chain_counts_and_rate(self):
        chain = FilterChain(SPEC, 10)
        outs = [chain.push(np.zeros(10), i * 2000) for i in range(500)]
        emitted = [o for o in outs if o is not None]
        assert len(emitted) == 100


class TestFluctuationMetric:
    def test_identical_streams_give_zero(self):
        x = np.random.default_rng(0).normal(size=500)
        assert fluctuation_reduction(x, x) == pytest.approx(0.0)

    def test_constant_filtered_gives_hundred(self):
        x = np.random.default_rng(0).normal(size=500)
        assert fluctuation_reduction(x, np.zeros(500)) == pytest.approx(100.0)

    def test_zero_raw_std_reported_undefined(self):
        assert fluctuation_reduction(np.ones(100), np.ones(100)) is None

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fluctuation_reduction(np.ones(10), np.ones(11))
