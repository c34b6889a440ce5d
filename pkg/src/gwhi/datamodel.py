"""Dataset schema, leave-one-out folds, normalizers and on-disk layout.

A dataset on disk is one directory holding a ``manifest.txt`` and one
sub-directory per specimen.  Every payload file stores the waveforms of all
actuator-sensor paths for a single (frequency, timestep) as a
``n_paths x n_samples`` matrix, either as delimited text or as packed
little-endian float64.
"""

from __future__ import annotations

import io
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FREQUENCIES_KHZ = (50, 100, 125, 150, 200, 250)
N_TRANSDUCERS = 8
MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = 1


class ConfigurationError(ValueError):
    """Raised for invalid user-supplied configuration or dataset layout."""


def all_paths(n_transducers: int = N_TRANSDUCERS) -> list[tuple[int, int]]:
    """Every ordered (actuator, sensor) pair with actuator != sensor."""
    ids = range(1, n_transducers + 1)
    return [(a, s) for a in ids for s in ids if a != s]


@dataclass(frozen=True)
class WaveformRecord:
    specimen_id: int
    excitation_freq_khz: int
    path: tuple[int, int]
    timestep_index: int
    cycle_count: int
    samples: np.ndarray

    def __post_init__(self):
        a, s = self.path
        if a == s or not (1 <= a <= N_TRANSDUCERS and 1 <= s <= N_TRANSDUCERS):
            raise ValueError(f"invalid actuator-sensor path {self.path}")
        if self.excitation_freq_khz not in FREQUENCIES_KHZ:
            raise ValueError(f"unsupported excitation frequency {self.excitation_freq_khz} kHz")
        if self.timestep_index < 1 or self.cycle_count < 0:
            raise ValueError("timestep_index must be >= 1 and cycle_count >= 0")
        samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[int, tuple[int, ...]], ...]

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def test_ids(self) -> list[int]:
        return [t for t, _ in self.folds]


def build_folds(specimen_ids: Sequence[int]) -> FoldPlan:
    """Leave-one-specimen-out plan, ordered by specimen id.

    Fold ``k`` tests the ``k``-th smallest specimen and trains on the rest.
    """
    ids = sorted(set(int(s) for s in specimen_ids))
    if len(ids) < 2:
        raise ConfigurationError("at least 2 distinct specimens are required to build folds")
    return FoldPlan(tuple((t, tuple(s for s in ids if s != t)) for t in ids))


# ---------------------------------------------------------------------------
# normalizers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZScoreNormalizer:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_zscore(rows, train_mask=None) -> ZScoreNormalizer:
    """Fit per-column mean and sample standard deviation on training rows only.

    Columns with zero variance get ``std = 1`` and are flagged in
    ``degenerate`` so the transform never divides by zero.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    train = rows if train_mask is None else rows[np.asarray(train_mask, dtype=bool)]
    if train.shape[0] < 2:
        raise ConfigurationError("z-score fitting needs at least 2 training rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=1)
    degenerate = ~(std > 0)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} zero-variance feature column(s); std replaced by 1",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(degenerate, 1.0, std)
    return ZScoreNormalizer(mean, std, degenerate)


@dataclass(frozen=True)
class MinMaxOutputNormalizer:
    """Maps the training HI range onto [0, 1]; values outside are kept as-is."""

    lo: float
    hi: float

    @classmethod
    def fit(cls, values) -> "MinMaxOutputNormalizer":
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.min()), float(values.max()))

    def transform(self, values):
        span = self.hi - self.lo
        if span <= 0:
            return np.zeros_like(np.asarray(values, dtype=np.float64))
        return (np.asarray(values, dtype=np.float64) - self.lo) / span


# ---------------------------------------------------------------------------
# health-indicator curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HICurve:
    specimen_id: int
    source: object  # excitation frequency in kHz, or "fused"
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t.size < 2:
            raise ValueError("an HI curve needs at least 2 points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("HI curve times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def lifetime_fraction(self) -> np.ndarray:
        t = self.times
        return (t - t[0]) / (t[-1] - t[0])

    def with_values(self, values, source=None) -> "HICurve":
        return HICurve(self.specimen_id, self.source if source is None else source, self.times, values)


def write_curves(curves: Iterable[HICurve], path, model: str = "") -> None:
    """Write HI curves as delimited text (specimen, source, time, lifetime_fraction, hi)."""
    buf = io.StringIO()
    buf.write(f"# model={model}\n" if model else "")
    buf.write("specimen,source,time,lifetime_fraction,hi\n")
    for c in curves:
        for t, lf, v in zip(c.times.tolist(), c.lifetime_fraction.tolist(), c.values.tolist()):
            buf.write(f"{c.specimen_id},{c.source},{t!r},{lf!r},{v!r}\n")
    atomic_write_text(path, buf.getvalue())


def read_curves(path) -> list[HICurve]:
    rows: dict[tuple[int, str], list[tuple[float, float]]] = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("specimen"):
                continue
            sid, src, t, _, v = line.rstrip("\n").split(",")
            rows.setdefault((int(sid), src), []).append((float(t), float(v)))
    curves = []
    for (sid, src), pts in rows.items():
        source = int(src) if src.isdigit() else src
        t, v = zip(*pts)
        curves.append(HICurve(sid, source, np.array(t), np.array(v)))
    return curves


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# on-disk dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    specimen_id: int
    freq_khz: int
    timestep: int
    cycle_count: int
    file: str


@dataclass
class Manifest:
    """Key-value header plus a record table describing a stored dataset."""

    encoding: str
    n_samples: int
    sample_rate_hz: float
    paths: list[tuple[int, int]]
    entries: list[ManifestEntry]
    extra: dict = field(default_factory=dict)

    def specimens(self) -> list[int]:
        return sorted({e.specimen_id for e in self.entries})

    def frequencies(self) -> list[int]:
        return sorted({e.freq_khz for e in self.entries})

    def timeline(self, specimen_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted (timestep, cycle_count) arrays for one specimen."""
        seen = {}
        for e in self.entries:
            if e.specimen_id == specimen_id:
                seen[e.timestep] = e.cycle_count
        steps = np.array(sorted(seen))
        cycles = np.array([seen[s] for s in steps], dtype=np.int64)
        return steps, cycles

    def validate(self) -> None:
        if self.encoding not in ("binary", "text"):
            raise ConfigurationError(f"unknown payload encoding {self.encoding!r}")
        if len(self.paths) > N_TRANSDUCERS * (N_TRANSDUCERS - 1):
            raise ConfigurationError("more than 56 paths per measurement")
        for sid in self.specimens():
            _, cycles = self.timeline(sid)
            if np.any(np.diff(cycles) <= 0):
                raise ConfigurationError(f"cycle counts of specimen {sid} are not strictly increasing")

    def dumps(self) -> str:
        lines = [
            "# gwhi dataset manifest",
            f"format_version: {MANIFEST_VERSION}",
            f"encoding: {self.encoding}",
            f"n_samples: {self.n_samples}",
            f"sample_rate_hz: {float(self.sample_rate_hz)!r}",
            "paths: " + " ".join(f"{a}-{s}" for a, s in self.paths),
        ]
        lines += [f"{k}: {v}" for k, v in sorted(self.extra.items())]
        lines.append("[records]")
        lines.append("specimen_id,freq_khz,timestep,cycle_count,file")
        lines += [f"{e.specimen_id},{e.freq_khz},{e.timestep},{e.cycle_count},{e.file}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        header: dict[str, str] = {}
        entries = []
        in_table = False
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "[records]":
                in_table = True
                continue
            if in_table:
                if line.startswith("specimen_id"):
                    continue
                sid, f, ts, cyc, fname = line.split(",")
                entries.append(ManifestEntry(int(sid), int(f), int(ts), int(cyc), fname))
            else:
                key, _, value = line.partition(":")
                header[key.strip()] = value.strip()
        try:
            version = int(header.pop("format_version"))
            if version != MANIFEST_VERSION:
                raise ConfigurationError(f"unsupported manifest version {version}")
            paths = [tuple(int(i) for i in p.split("-")) for p in header.pop("paths").split()]
            m = cls(
                encoding=header.pop("encoding"),
                n_samples=int(header.pop("n_samples")),
                sample_rate_hz=float(header.pop("sample_rate_hz")),
                paths=paths,
                entries=entries,
                extra=header,
            )
        except KeyError as exc:
            raise ConfigurationError(f"manifest is missing field {exc}") from None
        m.validate()
        return m


def payload_name(specimen_id: int, freq_khz: int, timestep: int, encoding: str) -> str:
    ext = "bin" if encoding == "binary" else "csv"
    return f"specimen_{specimen_id}/f{freq_khz:03d}_t{timestep:03d}.{ext}"


def write_payload(path, matrix: np.ndarray, encoding: str) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if encoding == "binary":
        atomic_write_bytes(path, matrix.tobytes())
    else:
        buf = io.StringIO()
        np.savetxt(buf, matrix, delimiter=",", fmt="%.17g")
        atomic_write_text(path, buf.getvalue())


def read_payload(path, n_paths: int, n_samples: int, encoding: str) -> np.ndarray:
    if encoding == "binary":
        data = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
        return data.reshape(n_paths, n_samples).astype(np.float64)
    return np.loadtxt(path, delimiter=",", ndmin=2)


class StoredDataset:
    """Read access to a dataset directory written by :func:`write_dataset`."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / MANIFEST_NAME
        if not mpath.exists():
            raise ConfigurationError(f"no dataset manifest at {mpath}")
        self.manifest = Manifest.loads(mpath.read_text())

    @property
    def sample_rate_hz(self) -> float:
        return self.manifest.sample_rate_hz

    @property
    def paths(self):
        return self.manifest.paths

    def specimens(self):
        return self.manifest.specimens()

    def frequencies(self):
        return self.manifest.frequencies()

    def timeline(self, specimen_id):
        return self.manifest.timeline(specimen_id)

    def measurement(self, specimen_id: int, freq_khz: int, timestep: int) -> np.ndarray:
        m = self.manifest
        for e in m.entries:
            if (e.specimen_id, e.freq_khz, e.timestep) == (specimen_id, freq_khz, timestep):
                return read_payload(self.root / e.file, len(m.paths), m.n_samples, m.encoding)
        raise KeyError((specimen_id, freq_khz, timestep))

    def iter_measurements(self, freqs=None) -> Iterator[tuple[int, int, int, np.ndarray]]:
        m = self.manifest
        for e in m.entries:
            if freqs is None or e.freq_khz in freqs:
                yield e.specimen_id, e.freq_khz, e.timestep, read_payload(
                    self.root / e.file, len(m.paths), m.n_samples, m.encoding
                )


def write_dataset(root, source, encoding: str = "binary", extra: dict | None = None) -> Manifest:
    """Persist any dataset-like ``source`` (stored or synthetic) under ``root``."""
    root = Path(root)
    entries = []
    for sid, f, ts, matrix in source.iter_measurements():
        fname = payload_name(sid, f, ts, encoding)
        write_payload(root / fname, matrix, encoding)
        steps, cycles = source.timeline(sid)
        cyc = int(cycles[np.searchsorted(steps, ts)])
        entries.append(ManifestEntry(sid, f, ts, cyc, fname))
        n_paths, n_samples = matrix.shape
    manifest = Manifest(
        encoding=encoding,
        n_samples=n_samples,
        sample_rate_hz=float(source.sample_rate_hz),
        paths=list(source.paths),
        entries=entries,
        extra=dict(extra or {}),
    )
    manifest.validate()
    atomic_write_text(root / MANIFEST_NAME, manifest.dumps())
    return manifest
