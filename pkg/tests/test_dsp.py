import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import interpolate, signal

from bwex import dsp
from bwex.audio_io import AudioBuffer
from bwex.errors import DomainError, LengthError

finite = st.floats(-10, 10, allow_nan=False)


def gain_db(f, w):
    return 20 * np.log10(np.abs(f.response(np.atleast_1d(w))))


def test_cheby_matches_reference_design():
    for order, ripple, cutoff in [(8, 0.05, 0.2), (8, 0.05, 0.4), (5, 0.5, 0.3), (2, 1.0, 0.7)]:
        f = dsp.design_cheby1_lowpass(order, ripple, cutoff)
        b, a = signal.cheby1(order, ripple, cutoff)
        np.testing.assert_allclose(f.b, b, rtol=1e-8, atol=1e-14)
        np.testing.assert_allclose(f.a, a, rtol=1e-8, atol=1e-12)


def test_cheby_dc_gain_even_order():
    f = dsp.design_cheby1_lowpass(8, 0.05, 0.4)
    assert f.dc_gain() == pytest.approx(10 ** (-0.05 / 20), abs=1e-9)
    assert f.normalized_dc().dc_gain() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("cutoff", [0.1, 0.2, 0.4])
def test_cheby_cutoff_and_stopband(cutoff):
    f = dsp.design_cheby1_lowpass(8, 0.05, cutoff)
    assert abs(gain_db(f, cutoff)[0] + 0.05) <= 1e-3
    assert gain_db(f, 2 * cutoff)[0] < -40


def test_cheby_rejects_bad_arguments():
    for kw in ({"cutoff": 0.0}, {"cutoff": 1.0}, {"order": 0}, {"ripple_db": 0}):
        with pytest.raises(DomainError):
            dsp.design_cheby1_lowpass(**kw)


def test_filter_is_stable_and_normalized():
    f = dsp.decimation_filter(4)
    assert f.a[0] == 1.0 and f.is_stable()
    with pytest.raises(DomainError):
        dsp.IIRFilter([1.0], [1.0, -1.5], 1)


def test_filtfilt_dc_and_stopband():
    f = dsp.design_cheby1_lowpass(8, 0.05, 0.5, normalize_dc=True)
    np.testing.assert_allclose(dsp.filtfilt(f, np.full(500, 0.5)), 0.5, atol=1e-6)
    n = np.arange(4000)
    x = np.sin(np.pi * 0.95 * n)
    y = dsp.filtfilt(f, x)
    assert y.shape == x.shape
    assert np.sqrt(np.mean(y[200:-200] ** 2)) < 0.01 * np.sqrt(np.mean(x**2))


def test_filtfilt_zero_phase(rng):
    f = dsp.design_cheby1_lowpass(8, 0.05, 0.3, normalize_dc=True)
    x = dsp.filtfilt(f, rng.standard_normal(4096))
    y = dsp.filtfilt(f, x)
    xc = signal.correlate(y, x, mode="full")
    assert np.argmax(xc) - (len(x) - 1) == 0


def test_filtfilt_twice_squares_response(rng):
    f = dsp.design_cheby1_lowpass(8, 0.05, 0.5, normalize_dc=True)
    x = rng.standard_normal(2**16)
    once, twice = dsp.filtfilt(f, x), dsp.filtfilt(f, dsp.filtfilt(f, x))
    freqs, p_in = signal.welch(x, nperseg=1024)
    _, p1 = signal.welch(once, nperseg=1024)
    _, p2 = signal.welch(twice, nperseg=1024)
    band = freqs < 0.2  # well inside the passband of cutoff 0.5 (freqs in cycles/sample)
    h2 = np.abs(f.response(2 * freqs[band])) ** 4
    np.testing.assert_allclose(p1[band] / p_in[band], h2, rtol=0.05)
    np.testing.assert_allclose(p2[band] / p_in[band], h2**2, rtol=0.05)


def test_filtfilt_too_short():
    with pytest.raises(LengthError):
        dsp.filtfilt(dsp.decimation_filter(2), np.zeros(24))


def test_decimate_rates_and_lengths():
    buf = AudioBuffer(np.zeros(6000), 16000)
    out = dsp.decimate(buf, 4)
    assert out.sample_rate == 4000 and len(out) == 1500
    const = dsp.decimate(AudioBuffer(np.full(1000, 0.3), 16000), 4)
    np.testing.assert_allclose(const.samples, 0.3, atol=1e-9)
    with pytest.raises(DomainError):
        dsp.decimate(buf, 1)
    with pytest.raises(DomainError):
        dsp.decimate(AudioBuffer(np.zeros(100), 16001), 2)


def test_decimate_without_lpf_aliases():
    n = np.arange(8000)
    x = np.sin(2 * np.pi * 3500 / 8000 * n)
    plain = dsp.decimate_samples(x, 4, use_lpf=False)
    filtered = dsp.decimate_samples(x, 4, use_lpf=True)
    np.testing.assert_array_equal(plain, x[::4])
    assert np.std(plain) > 0.5 and np.std(filtered[100:-100]) < 1e-3


def test_spline_ramp_and_constant():
    ramp = dsp.spline_upscale(AudioBuffer(np.arange(4.0), 8000), 2)
    np.testing.assert_allclose(ramp.samples, [0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5], atol=1e-12)
    assert ramp.sample_rate == 16000
    np.testing.assert_allclose(dsp.spline_upscale_samples(np.full(10, 0.2), 3), 0.2, atol=1e-15)
    with pytest.raises(LengthError):
        dsp.spline_upscale_samples(np.zeros(3), 2)


def test_spline_matches_reference_interpolator(rng):
    y = rng.standard_normal(64)
    ours = dsp.spline_upscale_samples(y, 4)
    ref = interpolate.CubicSpline(np.arange(64), y, bc_type="natural", extrapolate=True)(np.arange(256) / 4)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


@given(arrays(np.float64, st.integers(4, 64), elements=finite), st.integers(2, 6))
def test_spline_node_identity(y, r):
    up = dsp.spline_upscale_samples(y, r)
    assert up.shape == (r * len(y),)
    np.testing.assert_array_equal(up[::r], y)
    np.testing.assert_array_equal(dsp.decimate_samples(up, r, use_lpf=False), y)


def test_band_limited_round_trip_snr():
    t = np.arange(16000) / 16000
    for r in (2, 4):
        x = np.sin(2 * np.pi * 110 * t) + 0.5 * np.sin(2 * np.pi * 230 * t + 1) + 0.3 * np.sin(2 * np.pi * 370 * t)
        y = dsp.degrade(x, r)
        snr = 10 * np.log10(np.sum(x**2) / np.sum((x - y) ** 2))
        assert snr >= 30


def test_degrade_handles_non_divisible_rate():
    assert dsp.degrade(np.zeros(16000), 6).shape == (16000,)


def test_stft_frames_and_bins(rng):
    x = rng.standard_normal(5000)
    s = dsp.stft(x, 1024, 256)
    assert s.num_frames == 1 + (5000 - 1024) // 256 and s.num_bins == 513
    np.testing.assert_allclose(s.frames[3], np.fft.rfft(x[768:1792] * signal.get_window("hann", 1024)), atol=1e-9)
    with pytest.raises(DomainError):
        dsp.stft(x, 1000)
    with pytest.raises(LengthError):
        dsp.stft(x[:100], 256)


def test_stft_pure_cosine_rect():
    n, k0 = 256, 17
    x = np.cos(2 * np.pi * k0 * np.arange(n) / n)
    mag = np.abs(dsp.stft(x, n, n, window="rect").frames[0])
    others = np.delete(mag, k0)
    assert np.argmax(mag) == k0 and others.max() < 1e-9 * mag[k0]
    assert not np.any(dsp.stft(np.zeros(512), 256).frames)


@given(arrays(np.float64, st.integers(64, 300), elements=finite), st.sampled_from([16, 32, 64]))
def test_stft_parseval(x, n):
    s = dsp.stft(x, n, n // 4)
    win = dsp.make_window("hann", n)
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: n // 4] * win
    full = np.abs(s.frames) ** 2
    # one-sided spectrum: interior bins count twice
    energy = (full[:, 0] + full[:, -1] + 2 * full[:, 1:-1].sum(axis=1)) / n
    np.testing.assert_allclose(energy, (frames**2).sum(axis=1), rtol=1e-9, atol=1e-9)


def test_istft_inverts_half_overlap_hann(rng):
    x = rng.standard_normal(4096)
    y = dsp.istft(dsp.stft(x, 512), 4096)
    np.testing.assert_allclose(y[256:-256], x[256:-256], atol=1e-12)


def test_log_power_values():
    spec = dsp.Spectrogram(np.array([[1.0, 10.0, 0.0, 1j]]), 6, 6, "rect")
    np.testing.assert_allclose(dsp.log_power(spec), [[0.0, 2.0, -10.0, 0.0]])
    with pytest.raises(DomainError):
        dsp.log_power(spec, floor=0)
