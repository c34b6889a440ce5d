"""Spectral, time-frequency, analytic-signal and EMD transforms.

All transforms except :func:`emd` work along the last axis, so a
``(n_paths, n_samples)`` measurement matrix is processed in one call.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


def _as_signal(x, min_len=1):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] < min_len:
        raise ValueError(f"signal must have at least {min_len} sample(s) along the last axis")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    return x


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    sample_rate: float = 1.0

    @property
    def resolution(self) -> float:
        return self.sample_rate / self.values.shape[-1]

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.values.shape[-1], d=1.0 / self.sample_rate)

    def onesided(self) -> tuple[np.ndarray, np.ndarray]:
        """Magnitudes and frequencies of bins 0..L//2."""
        n = self.values.shape[-1]
        k = n // 2 + 1
        return np.abs(self.values[..., :k]), np.arange(k) * self.resolution


def fft(signal, sample_rate: float = 1.0) -> Spectrum:
    """Discrete Fourier transform of a real signal (any length)."""
    x = _as_signal(signal)
    return Spectrum(np.fft.fft(x, axis=-1), float(sample_rate))


def onesided_magnitude(signal, sample_rate: float = 1.0):
    """One-sided magnitude spectrum ``|X[k]|, k = 0..L//2`` and bin frequencies."""
    x = _as_signal(signal)
    n = x.shape[-1]
    return np.abs(np.fft.rfft(x, axis=-1)), np.fft.rfftfreq(n, d=1.0 / sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    magnitude: np.ndarray  # (..., windows, bins)
    win_len: int
    hop: int

    @property
    def n_windows(self) -> int:
        return self.magnitude.shape[-2]


def stft(signal, win_len: int = 250, overlap: int = 125) -> Spectrogram:
    """Rectangular-window short-time magnitude spectrum, no padding.

    Window ``w`` covers samples ``[w*hop, w*hop + win_len)`` with
    ``hop = win_len - overlap``; each row is the one-sided magnitude FFT.
    """
    x = _as_signal(signal)
    if win_len < 1 or win_len > x.shape[-1]:
        raise ValueError(f"window length {win_len} exceeds signal length {x.shape[-1]}")
    if not 0 <= overlap < win_len:
        raise ValueError("overlap must satisfy 0 <= overlap < win_len")
    hop = win_len - overlap
    frames = np.lib.stride_tricks.sliding_window_view(x, win_len, axis=-1)[..., ::hop, :]
    return Spectrogram(np.abs(np.fft.rfft(frames, axis=-1)), win_len, hop)


def hilbert_analytic(signal) -> np.ndarray:
    """Analytic signal via the spectrum method.

    Negative frequencies are zeroed, positive ones doubled, DC (and Nyquist
    for even lengths) kept once.
    """
    x = _as_signal(signal, min_len=2)
    n = x.shape[-1]
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    z = np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)
    # exact real part by construction
    return x + 1j * z.imag


def envelope(signal) -> np.ndarray:
    """Instantaneous amplitude ``|analytic(x)|``."""
    return np.abs(hilbert_analytic(signal))


# ---------------------------------------------------------------------------
# empirical mode decomposition
# ---------------------------------------------------------------------------

@dataclass
class ImfDecomposition:
    imfs: list = field(default_factory=list)
    residual: np.ndarray = None
    sift_counts: list = field(default_factory=list)

    def reconstruct(self) -> np.ndarray:
        out = self.residual.copy()
        for imf in self.imfs:
            out = out + imf
        return out

    def __len__(self):
        return len(self.imfs)


def find_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of interior local maxima and minima; plateaus map to their centre."""
    d = np.diff(x)
    nz = np.flatnonzero(d)
    if nz.size < 2:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    s = np.sign(d[nz])
    k = np.flatnonzero(s[:-1] != s[1:])
    loc = (nz[k] + 1 + nz[k + 1]) // 2
    is_max = s[k] > 0
    return loc[is_max], loc[~is_max]


def _mirrored_envelope(x, idx, n_mirror=2):
    n = x.size
    left = idx[:n_mirror][::-1]
    right = idx[-n_mirror:][::-1]
    locs = np.concatenate([-left, idx, 2 * (n - 1) - right])
    vals = np.concatenate([x[left], x[idx], x[right]])
    return CubicSpline(locs, vals)(np.arange(n))


def _envelope_mean(x, maxima, minima):
    return 0.5 * (_mirrored_envelope(x, maxima) + _mirrored_envelope(x, minima))


def _is_monotonic(x):
    d = np.diff(x)
    return bool(np.all(d >= 0) or np.all(d <= 0))


def emd(
    signal,
    sd_stop: float = 0.1,
    max_sift_iters: int = 10,
    max_imfs: int | None = None,
    energy_stop: float = 1e-10,
) -> ImfDecomposition:
    """Decompose a 1-d signal into intrinsic mode functions by sifting.

    Each candidate IMF is sifted until the Cauchy-type deviation
    ``sum((h_prev - h)**2) / sum(h_prev**2)`` drops below ``sd_stop`` or
    ``max_sift_iters`` passes have run.  Extraction stops when the residual
    is monotonic, has fewer than 4 extrema, carries less than
    ``energy_stop`` of the input energy, or ``max_imfs`` is reached.
    """
    x = _as_signal(signal)
    if x.ndim != 1:
        raise ValueError("emd expects a 1-d signal")
    residual = x.copy()
    out = ImfDecomposition(residual=residual)
    total_energy = float(np.dot(x, x))
    while max_imfs is None or len(out.imfs) < max_imfs:
        if _is_monotonic(residual):
            break
        if float(np.dot(residual, residual)) <= energy_stop * total_energy:
            break
        maxima, minima = find_extrema(residual)
        if maxima.size + minima.size < 4 or maxima.size == 0 or minima.size == 0:
            break
        h = residual
        n_sift = 0
        for n_sift in range(1, max_sift_iters + 1):
            mx, mn = find_extrema(h)
            if mx.size == 0 or mn.size == 0:
                n_sift -= 1
                break
            m = _envelope_mean(h, mx, mn)
            denom = float(np.dot(h, h))
            h = h - m
            sd = float(np.dot(m, m)) / denom if denom > 0 else 0.0
            if sd < sd_stop:
                break
        out.imfs.append(h)
        out.sift_counts.append(n_sift)
        residual = residual - h
    out.residual = residual
    bound = math.log2(x.size) + 1
    if len(out.imfs) > bound:
        warnings.warn(f"EMD produced {len(out.imfs)} IMFs, above log2(L)+1 = {bound:.1f}", RuntimeWarning)
    return out
