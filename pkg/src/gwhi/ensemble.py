"""Seed averaging and fitness-weighted fusion of per-frequency HIs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import criteria
from .datamodel import HICurve

WEIGHT_FLOOR = 1e-6


def seed_average(curves) -> HICurve:
    """Pointwise mean of the same specimen's curve over several seeds."""
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to average")
    ref = curves[0]
    for c in curves[1:]:
        if c.specimen_id != ref.specimen_id or c.times.shape != ref.times.shape or np.any(c.times != ref.times):
            raise ValueError("seed curves must share specimen and time grid")
    return ref.with_values(np.mean([c.values for c in curves], axis=0))


def seed_average_sets(curve_sets) -> list[HICurve]:
    """Average a list (one per seed) of curve sets specimen by specimen."""
    curve_sets = [list(cs) for cs in curve_sets]
    by_spec: dict = {}
    for cs in curve_sets:
        for c in cs:
            by_spec.setdefault(c.specimen_id, []).append(c)
    return [seed_average(by_spec[s]) for s in sorted(by_spec)]


@dataclass
class FrequencyBundle:
    source: object
    curves: list
    weight: float | None = None

    def resolved_weight(self, test_id=None, leak_free: bool = False, ddof: int = 0) -> float:
        if self.weight is not None:
            return float(self.weight)
        curves = self.curves
        if leak_free and test_id is not None:
            curves = [c for c in curves if c.specimen_id != test_id]
        return criteria.evaluate(curves, ddof=ddof).f_all


@dataclass
class FusionResult:
    curves: list
    sources: list
    raw_weights: np.ndarray
    weights: np.ndarray

    def dumps(self) -> str:
        lines = ["source,omega,omega_normalized"]
        for s, w, wn in zip(self.sources, self.raw_weights.tolist(), self.weights.tolist()):
            lines.append(f"{s},{w!r},{wn!r}")
        return "\n".join(lines) + "\n"


def normalize_weights(weights) -> np.ndarray:
    w = np.maximum(np.asarray(weights, dtype=np.float64), WEIGHT_FLOOR)
    if not np.all(np.isfinite(w)):
        raise ValueError("fusion weights must be finite")
    return w / w.sum()


def _on_grid(curve: HICurve, ref: HICurve) -> np.ndarray:
    if curve.times.shape == ref.times.shape and np.all(curve.times == ref.times):
        return curve.values
    return np.interp(ref.lifetime_fraction, curve.lifetime_fraction, curve.values)


def wae_fuse(bundles, test_id=None, leak_free: bool = False, ddof: int = 0) -> FusionResult:
    """Weighted average of per-frequency curves with F_all-proportional weights.

    Weights below ``1e-6`` are raised to it before normalisation so the
    result is always a convex combination.  Curves of other frequencies
    are aligned to the first bundle's grid by lifetime fraction.
    """
    bundles = list(bundles)
    if not bundles:
        raise ValueError("need at least one frequency bundle")
    raw = np.array([b.resolved_weight(test_id, leak_free, ddof) for b in bundles])
    w = normalize_weights(raw)
    ref = {c.specimen_id: c for c in bundles[0].curves}
    fused = []
    for sid in sorted(ref):
        acc = np.zeros(len(ref[sid]))
        for wi, b in zip(w, bundles):
            match = [c for c in b.curves if c.specimen_id == sid]
            if len(match) != 1:
                raise ValueError(f"bundle {b.source} lacks specimen {sid}")
            acc += wi * _on_grid(match[0], ref[sid])
        fused.append(HICurve(sid, "fused", ref[sid].times, acc))
    return FusionResult(fused, [b.source for b in bundles], raw, w)
