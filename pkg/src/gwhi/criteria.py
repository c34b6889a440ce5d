"""Prognostic criteria (monotonicity, prognosability, trendability) and fitness."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datamodel import HICurve

FIELDS = ("mo", "pr", "tr", "mo_test", "pr_test", "f_all", "f_test")


class DegenerateCriterionWarning(RuntimeWarning):
    pass


def _curve_mo(times, values) -> float:
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.size < 2:
        raise ValueError("monotonicity needs at least 2 points per curve")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing (duplicate or unordered time)")
    dt = t[None, :] - t[:, None]
    sg = np.sign(y[None, :] - y[:, None])
    upper = np.triu(np.ones(dt.shape, dtype=bool), k=1)
    dt = np.where(upper, dt, 0.0)
    num = (dt * sg).sum(axis=1)[:-1]
    den = dt.sum(axis=1)[:-1]
    return abs(float(np.mean(num / den)))


def monotonicity(curves) -> float:
    """Time-weighted (modified Mann-Kendall) monotonicity averaged over specimens.

    Per curve the time-weighted sign ratios of all later points are
    averaged over the reference point ``i`` before the absolute value is
    taken, so a curve that rises and then falls symmetrically scores near 0.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no curves given")
    return float(np.mean([_curve_mo(c.times, c.values) for c in curves]))


def prognosability(curves, ddof: int = 0) -> float:
    """``exp(-std(EoL values) / mean |first - last|)`` across specimens.

    A zero mean range makes the ratio undefined; 0 is returned with a
    :class:`DegenerateCriterionWarning`.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ValueError("prognosability needs at least 2 curves")
    eol = np.array([c.values[-1] for c in curves])
    spread = np.mean([abs(c.values[0] - c.values[-1]) for c in curves])
    if spread == 0:
        warnings.warn("prognosability undefined: all curves have zero range", DegenerateCriterionWarning, stacklevel=2)
        return 0.0
    return float(math.exp(-eol.std(ddof=ddof) / spread))


def _aligned(curves) -> list[np.ndarray]:
    lengths = {len(c) for c in curves}
    if len(lengths) == 1:
        return [c.values for c in curves]
    n = min(lengths)
    grid = np.linspace(0.0, 1.0, n)
    return [np.interp(grid, c.lifetime_fraction, c.values) for c in curves]


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0:
        warnings.warn("zero-variance curve; correlation set to 0", DegenerateCriterionWarning, stacklevel=3)
        return 0.0
    return float(np.dot(a, b) / den)


def trendability(curves) -> float:
    """Minimum pairwise Pearson correlation between specimen curves.

    Curves of unequal length are linearly resampled onto the shortest
    length over their normalised lifetime.  Not clamped: anti-trending
    curves give negative values.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ValueError("trendability needs at least 2 curves")
    ys = _aligned(curves)
    return float(min(pearson(a, b) for a, b in itertools.combinations(ys, 2)))


def mo_test(test_curve: HICurve) -> float:
    return monotonicity([test_curve])


def pr_test(test_curve: HICurve, train_curves) -> float:
    """Deviation of the test EoL value from the mean training EoL value.

    The normalising range is averaged over all specimens, test included.
    """
    train_curves = list(train_curves)
    if not train_curves:
        raise ValueError("pr_test needs at least one training curve")
    everyone = train_curves + [test_curve]
    spread = np.mean([abs(c.values[0] - c.values[-1]) for c in everyone])
    if spread == 0:
        warnings.warn("pr_test undefined: all curves have zero range", DegenerateCriterionWarning, stacklevel=2)
        return 0.0
    dev = abs(test_curve.values[-1] - np.mean([c.values[-1] for c in train_curves]))
    return float(math.exp(-dev / spread))


def fitness_score(mo: float, pr: float, tr: float, k_mo=1.0, k_pr=1.0, k_tr=1.0) -> float:
    return k_mo * mo + k_pr * pr + k_tr * tr


def fitness(curves, test_id=None, k_mo=1.0, k_pr=1.0, k_tr=1.0, ddof: int = 0):
    """``(F_all, F_test)``; ``F_test`` is ``None`` when no test specimen is named."""
    rep = evaluate(curves, test_id, ddof=ddof, k=(k_mo, k_pr, k_tr))
    return rep.f_all, (rep.f_test if test_id is not None else None)


@dataclass
class CriteriaReport:
    mo: float
    pr: float
    tr: float
    mo_test: float = float("nan")
    pr_test: float = float("nan")
    f_all: float = float("nan")
    f_test: float = float("nan")
    seed_mean: dict = field(default_factory=dict)
    seed_std: dict = field(default_factory=dict)
    n_seeds: int = 1

    @property
    def percent_of_3(self) -> float:
        return 100.0 * self.f_all / 3.0

    @property
    def percent_test_of_3(self) -> float:
        return 100.0 * self.f_test / 3.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in FIELDS}

    def dumps(self, header: dict | None = None) -> str:
        lines = [f"{k}: {v}" for k, v in (header or {}).items()]
        for k in FIELDS:
            lines.append(f"{k}: {getattr(self, k):.6f}")
        lines.append(f"percent_of_3: {self.percent_of_3:.4f}")
        if self.n_seeds > 1:
            lines.append(f"n_seeds: {self.n_seeds}")
            for k in FIELDS:
                lines.append(f"{k}_seed_mean: {self.seed_mean.get(k, float('nan')):.6f}")
                lines.append(f"{k}_seed_std: {self.seed_std.get(k, float('nan')):.6f}")
        return "\n".join(lines) + "\n"


def evaluate(curves, test_id=None, ddof: int = 0, k=(1.0, 1.0, 1.0)) -> CriteriaReport:
    """All criteria for one curve set; test-focused ones need ``test_id``."""
    curves = list(curves)
    mo = monotonicity(curves)
    pr = prognosability(curves, ddof=ddof)
    tr = trendability(curves)
    rep = CriteriaReport(mo, pr, tr, f_all=fitness_score(mo, pr, tr, *k))
    if test_id is not None:
        test = [c for c in curves if c.specimen_id == test_id]
        if len(test) != 1:
            raise ValueError(f"test specimen {test_id} not found exactly once")
        train = [c for c in curves if c.specimen_id != test_id]
        rep.mo_test = mo_test(test[0])
        rep.pr_test = pr_test(test[0], train)
        rep.f_test = fitness_score(rep.mo_test, rep.pr_test, tr, *k)
    for key in FIELDS:
        rep.seed_mean[key] = getattr(rep, key)
        rep.seed_std[key] = 0.0
    return rep


def aggregate(reports, center: CriteriaReport | None = None) -> CriteriaReport:
    """Attach across-seed mean and (population) std of every field.

    The point values come from ``center`` when given (e.g. criteria of the
    seed-averaged curves), otherwise from the seed means.
    """
    reports = list(reports)
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in FIELDS}
    std = {k: float(np.std([getattr(r, k) for r in reports])) for k in FIELDS}
    base = center if center is not None else CriteriaReport(**{k: mean[k] for k in FIELDS})
    out = CriteriaReport(**{k: getattr(base, k) for k in FIELDS})
    out.seed_mean, out.seed_std, out.n_seeds = mean, std, len(reports)
    return out
