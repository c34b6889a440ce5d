"""Synthetic run-to-failure guided-wave datasets with known degradation.

Each waveform is a Hann-windowed tone burst at the excitation frequency.
With degradation ``d`` in [0, 1] its amplitude is scaled by ``1 - a*d`` and
its arrival is delayed by ``b*d`` samples; ``a`` and ``b`` are jittered per
specimen, every measurement gets a common random gain (environmental
drift) and Gaussian noise is added.  Measurements are generated lazily
and deterministically from ``(seed, specimen, frequency, timestep)``, so the
full 56-path dataset never has to sit in memory.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datamodel import FREQUENCIES_KHZ, HICurve, all_paths

LAWS = ("linear", "exponential", "stepped")


@dataclass
class SynthSpec:
    n_specimens: int = 5
    lifetime_range: tuple = (25, 40)  # inclusive, timesteps per specimen
    lifetimes: tuple | None = None    # explicit per-specimen lifetimes override the range
    n_paths: int = 56
    freqs_khz: tuple = FREQUENCIES_KHZ
    n_samples: int = 2000
    sample_rate_hz: float = 2.0e6
    cycle_interval: int = 5000
    law: str = "linear"
    amplitude_drop: float = 0.5     # a
    delay_shift: float = 20.0       # b, samples
    variability: float = 0.35       # relative jitter of a and b per specimen
    noise_level: float = 0.05       # noise std relative to a unit burst
    gain_jitter: float = 0.01       # per-measurement gain std shared by all paths
    n_cycles: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.law not in LAWS:
            raise ValueError(f"degradation law must be one of {LAWS}")
        if self.n_specimens < 1 or not 1 <= self.n_paths <= 56:
            raise ValueError("need >= 1 specimen and 1..56 paths")
        if not 0 <= self.amplitude_drop * (1 + self.variability) < 1:
            raise ValueError("amplitude_drop*(1+variability) must stay below 1")
        bad = set(self.freqs_khz) - set(FREQUENCIES_KHZ)
        if bad:
            raise ValueError(f"unsupported excitation frequencies {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("lifetime_range", "lifetimes", "freqs_khz"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        spec = cls(**d)
        spec.validate()
        return spec

    def as_dict(self) -> dict:
        out = asdict(self)
        out["lifetime_range"] = list(self.lifetime_range)
        out["lifetimes"] = None if self.lifetimes is None else list(self.lifetimes)
        out["freqs_khz"] = list(self.freqs_khz)
        return out


def degradation(frac, law: str = "linear", k: float = 3.0, n_steps: int = 4) -> np.ndarray:
    """Monotone degradation ``d(frac)`` with ``d(0) = 0`` and ``d(1) = 1``."""
    frac = np.clip(np.asarray(frac, dtype=np.float64), 0.0, 1.0)
    if law == "linear":
        return frac
    if law == "exponential":
        return np.expm1(k * frac) / np.expm1(k)
    if law == "stepped":
        return np.floor(frac * n_steps) / n_steps
    raise ValueError(f"unknown degradation law {law!r}")


def tone_burst(n_samples, sample_rate, freq_hz, onset, n_cycles=5) -> np.ndarray:
    """Hann-windowed sine burst(s) starting at ``onset`` (scalar or per-row array)."""
    onset = np.atleast_1d(np.asarray(onset, dtype=np.float64))[:, None]
    t = (np.arange(n_samples)[None, :] - onset) / sample_rate
    dur = n_cycles / freq_hz
    inside = (t >= 0) & (t <= dur)
    win = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / dur))
    return np.where(inside, win * np.sin(2.0 * np.pi * freq_hz * t), 0.0)


@dataclass
class _Specimen:
    lifetime: int
    a: float
    b: float
    path_onset: np.ndarray
    path_gain: np.ndarray


class SyntheticDataset:
    """Dataset-like view over a :class:`SynthSpec` (same interface as a stored dataset)."""

    def __init__(self, spec: SynthSpec | None = None):
        self.spec = spec or SynthSpec()
        self.spec.validate()
        s = self.spec
        self.paths = all_paths()[: s.n_paths]
        self._specimens = {}
        lo, hi = s.lifetime_range
        lifetimes = None if s.lifetimes is None else list(s.lifetimes)
        if lifetimes is not None and len(lifetimes) != s.n_specimens:
            raise ValueError("explicit lifetimes must list one value per specimen")
        burst_len = s.n_cycles / min(s.freqs_khz) / 1e3 * s.sample_rate_hz
        max_onset = s.n_samples - burst_len - s.delay_shift * (1 + s.variability) - 2
        if max_onset <= 0:
            raise ValueError("signal too short for the tone burst and delay shift")
        for sid in range(1, s.n_specimens + 1):
            rng = np.random.default_rng([s.seed, sid])
            n = int(rng.integers(lo, hi + 1)) if lifetimes is None else int(lifetimes[sid - 1])
            jit = lambda: 1.0 + s.variability * rng.uniform(-1.0, 1.0)
            a = s.amplitude_drop * jit()
            b = s.delay_shift * jit()
            onset = rng.uniform(0.05 * max_onset, max_onset, size=len(self.paths))
            gain = rng.uniform(0.5, 1.5, size=len(self.paths))
            self._specimens[sid] = _Specimen(n, a, b, onset, gain)

    @property
    def sample_rate_hz(self) -> float:
        return self.spec.sample_rate_hz

    def specimens(self) -> list[int]:
        return sorted(self._specimens)

    def frequencies(self) -> list[int]:
        return list(self.spec.freqs_khz)

    def timeline(self, specimen_id: int):
        n = self._specimens[specimen_id].lifetime
        steps = np.arange(1, n + 1)
        return steps, (steps - 1) * self.spec.cycle_interval

    def degradation(self, specimen_id: int) -> np.ndarray:
        steps, _ = self.timeline(specimen_id)
        return degradation((steps - 1) / (steps[-1] - 1), self.spec.law)

    def ground_truth(self) -> list[HICurve]:
        return [HICurve(s, "truth", self.timeline(s)[1].astype(float), self.degradation(s)) for s in self.specimens()]

    def measurement(self, specimen_id: int, freq_khz: int, timestep: int) -> np.ndarray:
        s = self.spec
        sp = self._specimens[specimen_id]
        d = float(self.degradation(specimen_id)[timestep - 1])
        burst = tone_burst(s.n_samples, s.sample_rate_hz, freq_khz * 1e3, sp.path_onset + sp.b * d, s.n_cycles)
        rng = np.random.default_rng([s.seed, specimen_id, int(freq_khz), int(timestep)])
        gain = 1.0 + s.gain_jitter * rng.standard_normal()
        clean = (gain * sp.path_gain * (1.0 - sp.a * d))[:, None] * burst
        return clean + s.noise_level * rng.standard_normal(clean.shape)

    def iter_measurements(self, freqs=None):
        freqs = self.frequencies() if freqs is None else list(freqs)
        for sid in self.specimens():
            steps, _ = self.timeline(sid)
            for f in freqs:
                for ts in steps:
                    yield sid, f, int(ts), self.measurement(sid, f, int(ts))


def generate(spec: SynthSpec | None = None):
    """Synthetic dataset plus its ground-truth HI curves."""
    ds = SyntheticDataset(spec)
    return ds, ds.ground_truth()
