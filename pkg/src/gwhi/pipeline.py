"""Library-level orchestration of fold x frequency x seed training and fusion.

The command-line front end and the end-to-end tests both go through these
functions, so reported numbers can always be recomputed from persisted
curves with :mod:`gwhi.criteria`.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import criteria, deepsad, dtcvae, ensemble
from .datamodel import HICurve
from .features import FeatureScoreTable, FeatureTensor

logger = logging.getLogger(__name__)

MODELS = ("deepsad", "dtcvae")


def default_hyperparams(model: str):
    if model == "deepsad":
        return deepsad.DeepSadHyperparams()
    if model == "dtcvae":
        return dtcvae.DtcVaeHyperparams()
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def hyperparams_from_dict(model: str, d: dict | None):
    if not d:
        return default_hyperparams(model)
    cls = deepsad.DeepSadHyperparams if model == "deepsad" else dtcvae.DtcVaeHyperparams
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown {model} hyperparameters: {sorted(unknown)}")
    return cls.from_dict(d)


def feature_ids_for(table: FeatureScoreTable, sp_method: str) -> np.ndarray:
    """Selected ids of one method, or all of its ids when none passed the benchmark."""
    ids = table.selected_ids(sp_method)
    if ids.size == 0:
        ids = table.feature_ids[np.array([m == sp_method for m in table.methods])]
        if ids.size == 0:
            raise ValueError(f"no features of method {sp_method!r} in the score table")
        logger.warning("no %s feature passed the benchmark; using all %d", sp_method, ids.size)
    return ids


def training_rows(tensor: FeatureTensor, freq, ids, specimens):
    """Stacked feature rows of ``specimens`` (time order within each) with row times and owners."""
    xs, ts, owners = [], [], []
    for s in specimens:
        m = tensor.matrix(s, freq, ids)
        xs.append(m)
        ts.append(tensor.times[s])
        owners.append(np.full(len(m), s))
    return np.vstack(xs), np.concatenate(ts), np.concatenate(owners)


@dataclass
class TrainJob:
    model: str
    test_id: int
    freq: object
    seed: int
    hp: object
    epoch_scale: float


def fit_model(job: TrainJob, x, times, owners):
    if job.model == "deepsad":
        return deepsad.fit(x, times, owners, job.hp, job.seed, job.epoch_scale)
    return dtcvae.fit(x, owners, job.hp, job.seed, job.epoch_scale)


def infer(model, x) -> np.ndarray:
    return (deepsad.infer_hi if model.kind == "deepsad" else dtcvae.infer_hi)(model, x)


def run_job(job: TrainJob, tensor: FeatureTensor, ids):
    """Train on every specimen except ``job.test_id`` and infer HIs for all of them."""
    train_ids = [s for s in tensor.specimens if s != job.test_id]
    x, t, owners = training_rows(tensor, job.freq, ids, train_ids)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = fit_model(job, x, t, owners)
    curves = [HICurve(s, job.freq, tensor.times[s], infer(model, tensor.matrix(s, job.freq, ids)))
              for s in tensor.specimens]
    return model, curves


def _run_job_packed(args):
    job, tensor, ids = args
    return run_job(job, tensor, ids)


def run_jobs(jobs, tensor: FeatureTensor, ids, workers: int = 1) -> list:
    """Execute independent training jobs, in a process pool when ``workers > 1``."""
    jobs = list(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job_packed, [(j, tensor, ids) for j in jobs]))
    return [run_job(j, tensor, ids) for j in jobs]


@dataclass
class FoldResult:
    """Everything produced for one held-out specimen."""

    test_id: int
    freqs: list
    seeds: list
    per_seed: dict                  # (freq, seed) -> curves
    averaged: dict                  # freq -> seed-averaged curves
    freq_reports: dict              # freq -> CriteriaReport with seed statistics
    fusion: ensemble.FusionResult | None = None
    fused_report: criteria.CriteriaReport | None = None
    models: dict = field(default_factory=dict)


def summarize_fold(test_id, freqs, seeds, per_seed: dict, leak_free: bool = False, ddof: int = 0) -> FoldResult:
    """Seed-average, evaluate and fuse already inferred curves of one fold.

    The fused point values come from fusing the seed-averaged curves; the
    across-seed statistics come from fusing each seed's own per-frequency
    curves with that seed's fitness weights.
    """
    averaged, freq_reports = {}, {}
    for f in freqs:
        runs = [per_seed[(f, s)] for s in seeds]
        averaged[f] = ensemble.seed_average_sets(runs)
        seed_reps = [criteria.evaluate(r, test_id, ddof) for r in runs]
        freq_reports[f] = criteria.aggregate(seed_reps, criteria.evaluate(averaged[f], test_id, ddof))
    result = FoldResult(test_id, list(freqs), list(seeds), per_seed, averaged, freq_reports)
    if len(freqs) > 1:
        fusion = ensemble.wae_fuse([ensemble.FrequencyBundle(f, averaged[f]) for f in freqs],
                                   test_id, leak_free, ddof)
        seed_reps = []
        for s in seeds:
            fs = ensemble.wae_fuse([ensemble.FrequencyBundle(f, per_seed[(f, s)]) for f in freqs],
                                   test_id, leak_free, ddof)
            seed_reps.append(criteria.evaluate(fs.curves, test_id, ddof))
        result.fusion = fusion
        result.fused_report = criteria.aggregate(seed_reps, criteria.evaluate(fusion.curves, test_id, ddof))
    return result


def run_fold(tensor: FeatureTensor, ids, model: str, test_id: int, freqs=None, seeds=(0, 1, 2, 3, 4),
             hp=None, epoch_scale: float = 1.0, workers: int = 1, leak_free: bool = False,
             keep_models: bool = False) -> FoldResult:
    freqs = list(tensor.freqs) if freqs is None else list(freqs)
    hp = hp or default_hyperparams(model)
    jobs = [TrainJob(model, test_id, f, int(s), hp, epoch_scale) for f in freqs for s in seeds]
    outputs = run_jobs(jobs, tensor, ids, workers)
    per_seed = {(j.freq, j.seed): curves for j, (_, curves) in zip(jobs, outputs)}
    result = summarize_fold(test_id, freqs, list(seeds), per_seed, leak_free)
    if keep_models:
        result.models = {(j.freq, j.seed): m for j, (m, _) in zip(jobs, outputs)}
    return result


def objective_for(tensor: FeatureTensor, ids, model: str, test_id: int, freq, seed: int = 0,
                  epoch_scale: float = 1.0):
    """Hyperparameter objective: F_all of one single-seed training run."""
    def objective(params: dict) -> float:
        hp = hyperparams_from_dict(model, params)
        _, curves = run_job(TrainJob(model, test_id, freq, seed, hp, epoch_scale), tensor, ids)
        return criteria.evaluate(curves).f_all
    return objective
