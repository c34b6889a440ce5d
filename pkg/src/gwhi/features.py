"""Statistical feature extraction over the raw, FFT, HT, EMD and STFT domains.

Feature ids follow a fixed layout: raw 1-19, FFT 20-33, HT 34-52,
EMD 53-71 and STFT from 72 on (four statistics per STFT window, so the
last id depends on the window count).
"""

from __future__ import annotations

import io
import logging
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import criteria, sigproc
from .datamodel import HICurve, atomic_write_text

logger = logging.getLogger(__name__)

TIME_FEATURE_NAMES = (
    "mean", "std", "root_amplitude", "rms", "rss", "peak", "skewness", "kurtosis",
    "crest_factor", "clearance_factor", "shape_factor", "impulse_factor", "max_min_diff",
    "central_moment_3", "central_moment_4", "central_moment_5", "central_moment_6",
    "fm4", "median",
)
FREQ_FEATURE_NAMES = tuple(f"S{i}" for i in range(1, 15))
TF_STAT_NAMES = ("mean", "std", "skewness", "kurtosis")

METHODS = ("raw", "fft", "ht", "emd", "stft")
METHOD_OFFSET = {"raw": 1, "fft": 20, "ht": 34, "emd": 53, "stft": 72}


def _safe_div(num, den, flags=None, col=None):
    num, den = np.broadcast_arrays(np.asarray(num, float), np.asarray(den, float))
    ok = den != 0
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=ok)
    if flags is not None and not ok.all():
        flags[..., col] |= ~ok
    return out


def time_features(x, return_flags: bool = False):
    """The 19 time-domain statistics, along the last axis.

    Statistics that would divide by zero (a constant or all-zero input)
    are set to 0 and reported in the optional boolean flag array.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("time features need at least 2 samples")
    flags = np.zeros(x.shape[:-1] + (19,), dtype=bool)
    mean = x.mean(axis=-1)
    dev = x - mean[..., None]
    dev2 = dev * dev
    sum2 = dev2.sum(axis=-1)
    sd = np.sqrt(sum2 / (n - 1))
    ax = np.abs(x)
    abs_mean = ax.mean(axis=-1)
    root = np.sqrt(ax).mean(axis=-1) ** 2
    rms = np.sqrt((x * x).mean(axis=-1))
    rss = np.sqrt((x * x).sum(axis=-1))
    peak = ax.max(axis=-1)
    dev3 = dev2 * dev
    dev4 = dev2 * dev2
    cm3 = dev3.mean(axis=-1)
    cm4 = dev4.mean(axis=-1)
    cm5 = (dev4 * dev).mean(axis=-1)
    cm6 = (dev4 * dev2).mean(axis=-1)
    sd3, sd4 = sd**3, sd**4
    out = np.stack(
        [
            mean,
            sd,
            root,
            rms,
            rss,
            peak,
            _safe_div(dev3.sum(axis=-1), (n - 1) * sd3, flags, 6),
            _safe_div(dev4.sum(axis=-1), (n - 1) * sd4, flags, 7),
            _safe_div(peak, rms, flags, 8),
            _safe_div(peak, root, flags, 9),
            _safe_div(rms, abs_mean, flags, 10),
            _safe_div(peak, abs_mean, flags, 11),
            x.max(axis=-1) - x.min(axis=-1),
            cm3,
            cm4,
            cm5,
            cm6,
            _safe_div(cm4, sd4, flags, 17),
            np.median(x, axis=-1),
        ],
        axis=-1,
    )
    return (out, flags) if return_flags else out


def freq_features(magnitudes, bin_freqs, return_flags: bool = False):
    """The 14 spectral statistics S1..S14 of a one-sided magnitude spectrum."""
    s = np.asarray(magnitudes, dtype=np.float64)
    f = np.asarray(bin_freqs, dtype=np.float64)
    k = s.shape[-1]
    if k < 2 or f.shape[-1] != k:
        raise ValueError("need at least 2 bins and one frequency per bin")
    if np.any(s < 0):
        raise ValueError("magnitudes must be non-negative")
    flags = np.zeros(s.shape[:-1] + (14,), dtype=bool)
    f2, f4 = f * f, f**4
    s_sum = s.sum(axis=-1)
    s1 = s.mean(axis=-1)
    d = s - s1[..., None]
    s2 = (d * d).sum(axis=-1) / (k - 1)
    s3 = _safe_div((d**3).sum(axis=-1), k * np.sqrt(s2) ** 3, flags, 2)
    s4 = _safe_div((d**4).sum(axis=-1), k * s2**2, flags, 3)
    s5 = _safe_div((f * s).sum(axis=-1), s_sum, flags, 4)
    fd = f - s5[..., None]
    fd2 = fd * fd
    s6 = np.sqrt((fd2 * s).sum(axis=-1) / k)
    s7 = np.sqrt(_safe_div((f2 * s).sum(axis=-1), s_sum, flags, 6))
    sf2 = (f2 * s).sum(axis=-1)
    s8 = np.sqrt(_safe_div((f4 * s).sum(axis=-1), sf2, flags, 7))
    s9 = _safe_div(sf2, np.sqrt(s_sum * f4.sum(axis=-1)), flags, 8)
    s10 = _safe_div(s6, s5, flags, 9)
    s11 = _safe_div((fd2 * fd * s).sum(axis=-1), k * s6**3, flags, 10)
    s12 = _safe_div((fd2 * fd2 * s).sum(axis=-1), k * s6**4, flags, 11)
    # |f - S5| keeps the square root real below the centroid
    s13 = _safe_div((np.sqrt(np.abs(fd)) * s).sum(axis=-1), k * np.sqrt(s6), flags, 12)
    s14 = np.sqrt(_safe_div((fd2 * s).sum(axis=-1), s_sum, flags, 13))
    out = np.stack([s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12, s13, s14], axis=-1)
    return (out, flags) if return_flags else out


def ht_features(x, return_flags: bool = False):
    """Time-domain statistics of the Hilbert envelope."""
    return time_features(sigproc.envelope(x), return_flags=return_flags)


def emd_features(x, imf_index: int = 0, return_flags: bool = False, **emd_kw):
    """Time-domain statistics of one IMF (the first by default).

    If EMD yields fewer IMFs than requested the residual is used instead
    and every feature of that row is flagged.
    """
    x = np.asarray(x, dtype=np.float64)
    rows = x.reshape(-1, x.shape[-1])
    picked = np.empty_like(rows)
    fallback = np.zeros(rows.shape[0], dtype=bool)
    for i, row in enumerate(rows):
        dec = sigproc.emd(row, max_imfs=imf_index + 1, **emd_kw)
        if len(dec.imfs) > imf_index:
            picked[i] = dec.imfs[imf_index]
        else:
            picked[i] = dec.residual
            fallback[i] = True
    out, flags = time_features(picked.reshape(x.shape), return_flags=True)
    flags |= fallback.reshape(x.shape[:-1])[..., None]
    return (out, flags) if return_flags else out


def tf_features(spectrogram, return_flags: bool = False):
    """Mean, std, skewness and kurtosis across frequency, per STFT window.

    Output is window-major: ``[w0_mean, w0_std, w0_skew, w0_kurt, w1_mean, ...]``.
    """
    mag = spectrogram.magnitude if isinstance(spectrogram, sigproc.Spectrogram) else spectrogram
    mag = np.asarray(mag, dtype=np.float64)
    n = mag.shape[-1]
    if n < 2:
        raise ValueError("need at least 2 frequency bins per window")
    mean = mag.mean(axis=-1)
    dev = mag - mean[..., None]
    dev2 = dev * dev
    sd = np.sqrt(dev2.sum(axis=-1) / (n - 1))
    bad = sd == 0
    skew = _safe_div((dev2 * dev).sum(axis=-1), (n - 1) * sd**3)
    kurt = _safe_div((dev2 * dev2).sum(axis=-1), (n - 1) * sd**4)
    out = np.stack([mean, sd, skew, kurt], axis=-1)
    flags = np.zeros(out.shape, dtype=bool)
    flags[..., 2] = bad
    flags[..., 3] = bad
    shape = out.shape[:-2] + (out.shape[-2] * 4,)
    out, flags = out.reshape(shape), flags.reshape(shape)
    return (out, flags) if return_flags else out


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRegistry:
    n_windows: int

    def entries(self) -> list[tuple[int, str, str]]:
        out = []
        for method, names in (("raw", TIME_FEATURE_NAMES), ("fft", FREQ_FEATURE_NAMES),
                              ("ht", TIME_FEATURE_NAMES), ("emd", TIME_FEATURE_NAMES)):
            out += [(METHOD_OFFSET[method] + i, method, name) for i, name in enumerate(names)]
        for w in range(self.n_windows):
            for j, stat in enumerate(TF_STAT_NAMES):
                out.append((METHOD_OFFSET["stft"] + 4 * w + j, "stft", f"w{w + 1}_{stat}"))
        return out

    def ids(self, method: str | None = None) -> np.ndarray:
        return np.array([i for i, m, _ in self.entries() if method is None or m == method])

    def method_of(self, feature_id: int) -> str:
        for i, m, _ in self.entries():
            if i == feature_id:
                return m
        raise KeyError(feature_id)

    def name_of(self, feature_id: int) -> str:
        for i, m, name in self.entries():
            if i == feature_id:
                return f"{m}:{name}"
        raise KeyError(feature_id)


def stft_window_count(n_samples: int, win_len: int = 250, overlap: int = 125) -> int:
    return (n_samples - win_len) // (win_len - overlap) + 1


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtractionOptions:
    methods: tuple = METHODS
    win_len: int = 250
    overlap: int = 125
    sd_stop: float = 0.1
    max_sift_iters: int = 10
    imf_index: int = 0


def extract_measurement(matrix, sample_rate: float, opts: ExtractionOptions | None = None):
    """Per-path features of one ``(n_paths, n_samples)`` measurement.

    Returns ``(ids, values, flagged)`` where ``values`` has shape
    ``(n_paths, len(ids))`` and ``flagged`` counts degenerate statistics
    per method.  Rows with non-finite samples are treated as missing paths
    and dropped.
    """
    opts = opts or ExtractionOptions()
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    flagged: Counter = Counter()
    keep = np.all(np.isfinite(matrix), axis=-1)
    if not keep.all():
        flagged["missing_path"] += int((~keep).sum())
        matrix = matrix[keep]
    if matrix.shape[0] == 0:
        raise ValueError("measurement has no usable paths")
    n = matrix.shape[-1]
    ids, blocks = [], []
    for method in METHODS:
        if method not in opts.methods:
            continue
        if method == "raw":
            vals, fl = time_features(matrix, return_flags=True)
        elif method == "fft":
            mags, freqs = sigproc.onesided_magnitude(matrix, sample_rate)
            vals, fl = freq_features(mags, freqs, return_flags=True)
        elif method == "ht":
            vals, fl = ht_features(matrix, return_flags=True)
        elif method == "emd":
            vals, fl = emd_features(matrix, opts.imf_index, return_flags=True,
                                    sd_stop=opts.sd_stop, max_sift_iters=opts.max_sift_iters)
        else:
            spec = sigproc.stft(matrix, opts.win_len, opts.overlap)
            vals, fl = tf_features(spec, return_flags=True)
        flagged[method] += int(fl.sum())
        ids.append(METHOD_OFFSET[method] + np.arange(vals.shape[-1]))
        blocks.append(vals)
    return np.concatenate(ids), np.concatenate(blocks, axis=-1), flagged


@dataclass
class FeatureTensor:
    """Path-averaged features per specimen, frequency, timestep and feature id.

    ``values[sid]`` has shape ``(n_freqs, n_timesteps(sid), n_features)``;
    ``times[sid]`` holds the cycle counts and ``steps[sid]`` the timestep
    indices.  A frequency-averaged tensor uses the single source ``"avg"``.
    """

    specimens: list
    freqs: list
    feature_ids: np.ndarray
    steps: dict
    times: dict
    values: dict
    n_windows: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def shape(self):
        t_max = max(v.shape[1] for v in self.values.values())
        return (len(self.specimens), len(self.freqs), t_max, len(self.feature_ids))

    @property
    def registry(self) -> FeatureRegistry:
        return FeatureRegistry(self.n_windows)

    def columns(self, ids) -> np.ndarray:
        pos = {int(f): i for i, f in enumerate(self.feature_ids)}
        return np.array([pos[int(i)] for i in ids], dtype=int)

    def matrix(self, specimen_id, freq, ids=None) -> np.ndarray:
        """``(n_timesteps, k)`` feature rows of one specimen at one frequency."""
        fi = self.freqs.index(freq)
        block = self.values[specimen_id][fi]
        return block if ids is None else block[:, self.columns(ids)]

    def average_frequencies(self) -> "FeatureTensor":
        return FeatureTensor(
            self.specimens, ["avg"], self.feature_ids, self.steps, self.times,
            {s: v.mean(axis=0, keepdims=True) for s, v in self.values.items()},
            self.n_windows, dict(self.flags),
        )

    def select(self, ids) -> "FeatureTensor":
        cols = self.columns(ids)
        return FeatureTensor(
            self.specimens, self.freqs, np.asarray(ids), self.steps, self.times,
            {s: v[..., cols] for s, v in self.values.items()}, self.n_windows, dict(self.flags),
        )

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# n_windows={self.n_windows}\n")
        for s in self.specimens:
            buf.write(f"# timeline specimen={s} steps={','.join(map(str, self.steps[s]))} "
                      f"cycles={','.join(map(repr, self.times[s].tolist()))}\n")
        for k, v in sorted(self.flags.items()):
            buf.write(f"# flag {k}={v}\n")
        buf.write("specimen,freq_khz,timestep,feature_id,value\n")
        for s in self.specimens:
            arr = self.values[s]
            for fi, f in enumerate(self.freqs):
                for ti, step in enumerate(self.steps[s]):
                    for ci, fid in enumerate(self.feature_ids):
                        buf.write(f"{s},{f},{step},{fid},{float(arr[fi, ti, ci])!r}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def load(cls, path) -> "FeatureTensor":
        steps, times, flags = {}, {}, {}
        n_windows = 0
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("# n_windows="):
                    n_windows = int(line.split("=")[1])
                elif line.startswith("# timeline"):
                    parts = dict(p.split("=") for p in line[2:].split()[1:])
                    sid = int(parts["specimen"])
                    steps[sid] = np.array([int(v) for v in parts["steps"].split(",")])
                    times[sid] = np.array([float(v) for v in parts["cycles"].split(",")])
                elif line.startswith("# flag"):
                    k, v = line[7:].strip().split("=")
                    flags[k] = int(v)
                elif line.startswith("#") or line.startswith("specimen"):
                    continue
                else:
                    rows.append(line.rstrip("\n").split(","))
        specimens = sorted(steps)
        freqs = list(dict.fromkeys(r[1] for r in rows))
        freqs = [int(f) if f.isdigit() else f for f in freqs]
        fids = np.array(list(dict.fromkeys(int(r[3]) for r in rows)))
        fpos = {str(f): i for i, f in enumerate(freqs)}
        cpos = {int(f): i for i, f in enumerate(fids)}
        values = {s: np.empty((len(freqs), len(steps[s]), len(fids))) for s in specimens}
        tpos = {s: {int(st): i for i, st in enumerate(steps[s])} for s in specimens}
        for s, f, st, fid, v in rows:
            s = int(s)
            values[s][fpos[f], tpos[s][int(st)], cpos[int(fid)]] = float(v)
        return cls(specimens, freqs, fids, steps, times, values, n_windows, flags)


def _extract_job(args):
    key, matrix, fs, opts = args
    ids, vals, flagged = extract_measurement(matrix, fs, opts)
    return key, ids, vals.mean(axis=0), flagged


def extract_all(dataset, opts: ExtractionOptions | None = None, freqs=None, jobs: int = 1) -> FeatureTensor:
    """Extract features for every measurement and average them over paths.

    ``dataset`` is anything exposing ``specimens()``, ``frequencies()``,
    ``timeline(sid)``, ``iter_measurements(freqs)`` and ``sample_rate_hz``
    (a :class:`~gwhi.datamodel.StoredDataset` or a synthetic dataset).
    """
    opts = opts or ExtractionOptions()
    freqs = list(freqs) if freqs is not None else list(dataset.frequencies())
    specimens = list(dataset.specimens())
    timelines = {s: dataset.timeline(s) for s in specimens}
    fs = dataset.sample_rate_hz
    jobs_iter = (((sid, f, ts), m, fs, opts) for sid, f, ts, m in dataset.iter_measurements(freqs))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_job, jobs_iter, chunksize=4))
    else:
        results = [_extract_job(a) for a in jobs_iter]
    if not results:
        raise ValueError("dataset holds no measurements for the requested frequencies")
    ids = results[0][1]
    values = {s: np.full((len(freqs), len(timelines[s][0]), ids.size), np.nan) for s in specimens}
    flags: Counter = Counter()
    n_samples = None
    for (sid, f, ts), _, vec, flagged in results:
        steps = timelines[sid][0]
        values[sid][freqs.index(f), int(np.searchsorted(steps, ts))] = vec
        flags.update(flagged)
    for sid, v in values.items():
        if np.isnan(v).any():
            raise ValueError(f"specimen {sid} is missing measurements for some frequency/timestep")
    n_windows = int(np.sum(ids >= METHOD_OFFSET["stft"]) // 4)
    if flags:
        logger.info("degenerate feature statistics: %s", dict(flags))
    return FeatureTensor(
        specimens, freqs, ids,
        {s: timelines[s][0] for s in specimens},
        {s: np.asarray(timelines[s][1], dtype=np.float64) for s in specimens},
        values, n_windows, dict(flags),
    )


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------

@dataclass
class FeatureScoreTable:
    feature_ids: np.ndarray
    methods: list
    names: list
    mo: np.ndarray
    pr: np.ndarray
    tr: np.ndarray
    f_all: np.ndarray
    benchmark: float
    selected: np.ndarray

    def selected_ids(self, method: str | None = None) -> np.ndarray:
        mask = self.selected.copy()
        if method is not None:
            mask &= np.array([m == method for m in self.methods])
        return self.feature_ids[mask]

    def method_summary(self) -> dict:
        """Per method: mean and std of F_all before and after reduction."""
        out = {}
        methods = np.array(self.methods)
        for m in METHODS:
            mask = methods == m
            if not mask.any():
                continue
            before = self.f_all[mask]
            after = self.f_all[mask & self.selected]
            out[m] = {
                "n_features": int(mask.sum()),
                "n_selected": int(after.size),
                "mean_before": float(before.mean()),
                "std_before": float(before.std()),
                "mean_after": float(after.mean()) if after.size else float("nan"),
                "std_after": float(after.std()) if after.size else float("nan"),
            }
        return out

    def dumps(self) -> str:
        lines = [f"benchmark_f_all: {float(self.benchmark)!r}", "[methods]",
                 "method,n_features,n_selected,mean_before,std_before,mean_after,std_after"]
        for m, s in self.method_summary().items():
            lines.append(f"{m},{s['n_features']},{s['n_selected']},{s['mean_before']:.6f},"
                         f"{s['std_before']:.6f},{s['mean_after']:.6f},{s['std_after']:.6f}")
        lines += ["[features]", "feature_id,method,name,mo,pr,tr,f_all,selected"]
        for i in range(self.feature_ids.size):
            lines.append(f"{self.feature_ids[i]},{self.methods[i]},{self.names[i]},{float(self.mo[i])!r},"
                         f"{float(self.pr[i])!r},{float(self.tr[i])!r},{float(self.f_all[i])!r},{int(self.selected[i])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FeatureScoreTable":
        lines = text.splitlines()
        benchmark = float(lines[0].split(":")[1])
        start = lines.index("[features]") + 2
        cols = [l.split(",") for l in lines[start:] if l]
        return cls(
            np.array([int(c[0]) for c in cols]), [c[1] for c in cols], [c[2] for c in cols],
            np.array([float(c[3]) for c in cols]), np.array([float(c[4]) for c in cols]),
            np.array([float(c[5]) for c in cols]), np.array([float(c[6]) for c in cols]),
            benchmark, np.array([c[7] == "1" for c in cols]),
        )


def select_above_mean(scores):
    """Benchmark (mean score) and the mask of scores strictly above it."""
    scores = np.asarray(scores, dtype=np.float64)
    benchmark = float(scores.mean())
    selected = scores > benchmark
    if not selected.any():
        warnings.warn("no feature exceeds the mean fitness benchmark", RuntimeWarning, stacklevel=3)
    return benchmark, selected


def rank_and_select(tensor: FeatureTensor, time_axis: str = "cycles") -> FeatureScoreTable:
    """Score every feature trajectory as an HI and keep those above the mean score.

    The tensor is averaged over frequencies first if it holds more than one.
    Each feature's per-specimen trajectory is evaluated with Mo, Pr and Tr
    (all specimens pooled); features whose F_all strictly exceeds the mean
    F_all of all features are selected.
    """
    if len(tensor.specimens) < 2:
        raise ValueError("ranking needs at least 2 specimens")
    avg = tensor.average_frequencies() if len(tensor.freqs) > 1 else tensor
    src = avg.freqs[0]
    reg = tensor.registry
    n = tensor.feature_ids.size
    mo, pr, tr = np.empty(n), np.empty(n), np.empty(n)
    for j, fid in enumerate(tensor.feature_ids):
        curves = []
        for s in avg.specimens:
            t = avg.times[s] if time_axis == "cycles" else avg.steps[s].astype(float)
            curves.append(HICurve(s, src, t, avg.values[s][0, :, j]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mo[j] = criteria.monotonicity(curves)
            pr[j] = criteria.prognosability(curves)
            tr[j] = criteria.trendability(curves)
    f_all = mo + pr + tr
    benchmark, selected = select_above_mean(f_all)
    return FeatureScoreTable(
        tensor.feature_ids.copy(),
        [reg.method_of(int(i)) for i in tensor.feature_ids],
        [reg.name_of(int(i)) for i in tensor.feature_ids],
        mo, pr, tr, f_all, benchmark, selected,
    )
