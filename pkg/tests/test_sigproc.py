import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwhi import sigproc


def direct_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


class TestFFT:
    def test_impulse_is_flat(self):
        np.testing.assert_allclose(sigproc.fft([1.0, 0, 0, 0]).values, [1, 1, 1, 1])

    def test_constant_is_dc(self):
        np.testing.assert_allclose(sigproc.fft([1.0, 1, 1, 1]).values, [4, 0, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("n", [4, 250, 1999, 2000])
    def test_matches_direct_dft(self, rng, n):
        x = rng.standard_normal(n)
        got = sigproc.fft(x).values
        ref = direct_dft(x)
        assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(np.abs(ref))

    @given(st.integers(2, 300), st.integers(0, 2**32 - 1))
    def test_parseval(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        energy = np.sum(np.abs(sigproc.fft(x).values) ** 2) / n
        assert energy == pytest.approx(np.sum(x * x), rel=1e-9)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32 - 1))
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal(64), r.standard_normal(64)
        lhs = sigproc.fft(a * x + b * y).values
        rhs = a * sigproc.fft(x).values + b * sigproc.fft(y).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + abs(a) + abs(b)) * 64)

    def test_onesided_bins(self):
        mag, f = sigproc.onesided_magnitude(np.ones(8), sample_rate=8.0)
        assert mag.shape == (5,) and f[-1] == 4.0


class TestSTFT:
    def test_window_counts(self):
        assert sigproc.stft(np.zeros(2000)).n_windows == 15
        assert sigproc.stft(np.zeros(250)).n_windows == 1

    def test_tone_peak_bin(self):
        n = np.arange(2000)
        x = np.cos(2 * np.pi * 10 * n / 250)  # bin 10 of a 250-sample window
        mag = sigproc.stft(x).magnitude
        assert np.all(np.argmax(mag, axis=1) == 10)
        ref = np.abs(direct_dft(x[125:375]))[: mag.shape[1]]
        np.testing.assert_allclose(mag[1], ref, atol=1e-9)

    def test_rejects_bad_overlap(self):
        with pytest.raises(ValueError):
            sigproc.stft(np.zeros(500), 250, 250)


class TestHilbert:
    def test_cosine_envelope(self):
        n = 2000
        t = np.arange(n)
        x = np.cos(2 * np.pi * 25 * t / n)
        a = sigproc.hilbert_analytic(x)
        np.testing.assert_allclose(a, np.exp(2j * np.pi * 25 * t / n), atol=1e-9)
        env = sigproc.envelope(x)
        lo, hi = int(0.05 * n), int(0.95 * n)
        np.testing.assert_allclose(env[lo:hi], 1.0, atol=1e-6)

    def test_constant_has_no_quadrature(self):
        np.testing.assert_allclose(sigproc.hilbert_analytic(np.full(100, 3.0)).imag, 0.0, atol=1e-12)

    def test_chirp_envelope(self):
        n = 4000
        t = np.arange(n) / n
        amp = 1.0 + 0.5 * np.sin(2 * np.pi * 2 * t)
        phase = 2 * np.pi * (150 * t + 100 * t * t)
        env = sigproc.envelope(amp * np.cos(phase))
        inner = slice(int(0.05 * n), int(0.95 * n))
        assert np.max(np.abs(env[inner] - amp[inner]) / amp[inner]) < 0.02

    @given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**32 - 1))
    def test_envelope_scales(self, c, seed):
        x = np.random.default_rng(seed).standard_normal(128)
        np.testing.assert_allclose(sigproc.envelope(c * x), abs(c) * sigproc.envelope(x), rtol=1e-9, atol=1e-9)


class TestEMD:
    def test_pure_tone_single_imf(self):
        t = np.arange(2000) / 2000
        x = np.sin(2 * np.pi * 5 * t)
        dec = sigproc.emd(x)
        assert len(dec.imfs) == 1
        assert np.corrcoef(dec.imfs[0], x)[0, 1] > 0.99

    def test_two_tone_separation(self):
        t = np.arange(2000) / 2000
        fast = np.sin(2 * np.pi * 50 * t)
        dec = sigproc.emd(np.sin(2 * np.pi * 5 * t) + fast)
        assert np.corrcoef(dec.imfs[0], fast)[0, 1] > 0.9

    @given(st.integers(20, 600), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        dec = sigproc.emd(x)
        np.testing.assert_allclose(dec.reconstruct(), x, atol=1e-6)

    def test_monotone_input_has_no_imf(self):
        dec = sigproc.emd(np.linspace(0, 1, 50))
        assert len(dec.imfs) == 0
        np.testing.assert_allclose(dec.residual, np.linspace(0, 1, 50))

    def test_extrema_with_plateau(self):
        mx, mn = sigproc.find_extrema(np.array([0.0, 1.0, 1.0, 0.0, -1.0, -1.0, 0.0]))
        assert len(mx) == 1 and len(mn) == 1

    def test_imf_count_bound_is_respected_on_noise(self, rng):
        x = rng.standard_normal(512)
        assert len(sigproc.emd(x).imfs) <= np.log2(512) + 1
