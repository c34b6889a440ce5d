"""Bayesian optimisation with a Gaussian-process surrogate and expected improvement.

Maximises a scalar objective over a box of continuous and integer
hyperparameters.  The box is mapped to the unit cube; the GP uses a
squared-exponential kernel with one length scale per dimension, fitted by
maximising the log marginal likelihood from several starting points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .datamodel import atomic_write_text

logger = logging.getLogger(__name__)


@dataclass
class SearchSpace:
    bounds: dict  # name -> (lo, hi, is_integer)

    @property
    def names(self) -> list[str]:
        return list(self.bounds)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def from_unit(self, u) -> dict:
        out = {}
        for x, (name, (lo, hi, is_int)) in zip(np.clip(u, 0.0, 1.0), self.bounds.items()):
            v = lo + float(x) * (hi - lo)
            out[name] = int(min(max(round(v), lo), hi)) if is_int else v
        return out

    def to_unit(self, params: dict) -> np.ndarray:
        return np.array([(params[n] - lo) / (hi - lo) for n, (lo, hi, _) in self.bounds.items()])

    def contains(self, params: dict) -> bool:
        for n, (lo, hi, is_int) in self.bounds.items():
            v = params[n]
            if not lo <= v <= hi or (is_int and v != int(v)):
                return False
        return True


def ei(mean, std, incumbent):
    """Expected improvement over ``incumbent`` for maximisation."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    imp = mean - incumbent
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(std > 0, imp / np.where(std > 0, std, 1.0), 0.0)
        val = np.where(std > 0, imp * norm.cdf(z) + std * norm.pdf(z), np.maximum(imp, 0.0))
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


class GpSurrogate:
    """Zero-mean GP on standardised targets with an ARD squared-exponential kernel."""

    JITTER = 1e-8

    def __init__(self, noise: float | None = None, n_restarts: int = 5, seed: int = 0):
        self.fixed_noise = noise
        self.n_restarts = n_restarts
        self.seed = seed

    def _kernel(self, a, b, ls, amp):
        d = (a[:, None, :] - b[None, :, :]) / ls
        return amp * np.exp(-0.5 * np.sum(d * d, axis=-1))

    def _nll(self, theta, x, y):
        dim = x.shape[1]
        ls = np.exp(theta[:dim])
        amp = np.exp(theta[dim])
        noise = self.fixed_noise if self.fixed_noise is not None else np.exp(theta[dim + 1])
        k = self._kernel(x, x, ls, amp) + (noise + self.JITTER) * np.eye(len(x))
        try:
            c = np.linalg.cholesky(k)
        except np.linalg.LinAlgError:
            return 1e10
        alpha = np.linalg.solve(c.T, np.linalg.solve(c, y))
        return 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(c)))) + 0.5 * len(x) * math.log(2 * math.pi)

    def fit(self, x, y) -> "GpSurrogate":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        ys = (y - self.y_mean) / self.y_std
        dim = x.shape[1]
        bounds = [(math.log(1e-2), math.log(10.0))] * dim + [(math.log(1e-2), math.log(1e2))]
        if self.fixed_noise is None:
            bounds.append((math.log(1e-8), math.log(1.0)))
        rng = np.random.default_rng(self.seed)
        starts = [np.array([math.log(0.3)] * dim + [0.0] + ([math.log(1e-3)] if self.fixed_noise is None else []))]
        starts += [np.array([rng.uniform(lo, hi) for lo, hi in bounds]) for _ in range(self.n_restarts - 1)]
        best = None
        for s in starts:
            res = minimize(self._nll, s, args=(x, ys), method="L-BFGS-B", bounds=bounds)
            if best is None or res.fun < best.fun:
                best = res
        theta = best.x
        self.ls = np.exp(theta[:dim])
        self.amp = float(np.exp(theta[dim]))
        self.noise = self.fixed_noise if self.fixed_noise is not None else float(np.exp(theta[dim + 1]))
        k = self._kernel(x, x, self.ls, self.amp) + (self.noise + self.JITTER) * np.eye(len(x))
        self._chol = np.linalg.cholesky(k)
        self._alpha = np.linalg.solve(self._chol.T, np.linalg.solve(self._chol, ys))
        self._x = x
        return self

    def predict(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ks = self._kernel(xs, self._x, self.ls, self.amp)
        mean = ks @ self._alpha
        v = np.linalg.solve(self._chol, ks.T)
        var = np.maximum(self.amp - np.sum(v * v, axis=0), 0.0)
        return mean * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


@dataclass
class OptimizeResult:
    best_params: dict
    best_score: float
    trace: list = field(default_factory=list)  # (params, score)


def _write_trace(path, space: SearchSpace, trace) -> None:
    lines = ["iteration," + ",".join(space.names) + ",f_all"]
    for i, (p, s) in enumerate(trace):
        lines.append(f"{i}," + ",".join(repr(p[n] if isinstance(p[n], int) else float(p[n])) for n in space.names) + f",{float(s)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trace(path, space: SearchSpace) -> list:
    trace = []
    rows = Path(path).read_text().splitlines()[1:]
    for row in rows:
        cells = row.split(",")[1:]
        params = {}
        for (n, (_, _, is_int)), v in zip(space.bounds.items(), cells[:-1]):
            params[n] = int(v) if is_int else float(v)
        trace.append((params, float(cells[-1])))
    return trace


def _maximize_ei(gp, incumbent, dim, rng, observed, n_starts=10):
    starts = list(rng.uniform(size=(n_starts, dim)))
    starts += list(observed[-3:])
    best_u, best_v = None, -np.inf
    for s in starts:
        f = lambda u: -ei(*(a[0] for a in gp.predict(u[None, :])), incumbent)
        res = minimize(f, s, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
        if -res.fun > best_v:
            best_u, best_v = np.clip(res.x, 0.0, 1.0), -res.fun
    return best_u


def optimize(space: SearchSpace, objective, n_init: int = 10, n_iter: int = 20, seed: int = 0,
             trace_path=None) -> OptimizeResult:
    """Latin-hypercube start followed by EI-driven proposals.

    ``objective`` maps a parameter dict to a score to maximise; a raised
    exception records ``-inf`` and the search continues.  With
    ``trace_path`` every evaluation is persisted and an existing trace is
    replayed instead of re-evaluated.
    """
    if n_init < 2:
        raise ValueError("n_init must be >= 2")
    trace = read_trace(trace_path, space) if trace_path and Path(trace_path).exists() else []
    replay = len(trace)

    def evaluate(params):
        try:
            score = float(objective(params))
        except Exception as exc:  # noqa: BLE001 - failed trials are part of the search
            logger.warning("objective failed at %s: %s", params, exc)
            score = -np.inf
        return score if np.isfinite(score) else -np.inf

    design = qmc.LatinHypercube(d=space.dim, seed=np.random.default_rng([seed, 0])).random(n_init)
    for i in range(n_init + n_iter):
        if i < replay:
            continue
        if i < n_init:
            params = space.from_unit(design[i])
        else:
            rng = np.random.default_rng([seed, i + 1])
            xs = np.array([space.to_unit(p) for p, _ in trace])
            ys = np.array([s for _, s in trace])
            finite = np.isfinite(ys)
            if finite.sum() < 2:
                params = space.from_unit(rng.uniform(size=space.dim))
            else:
                ys = np.where(finite, ys, ys[finite].min())
                gp = GpSurrogate(seed=seed + i).fit(xs, ys)
                u = _maximize_ei(gp, ys.max(), space.dim, rng, xs)
                params = space.from_unit(u)
                if any(p == params for p, _ in trace):
                    params = space.from_unit(rng.uniform(size=space.dim))
        trace.append((params, evaluate(params)))
        if trace_path:
            _write_trace(trace_path, space, trace)
    scores = np.array([s for _, s in trace])
    k = int(np.argmax(scores))
    return OptimizeResult(trace[k][0], float(scores[k]), trace)
