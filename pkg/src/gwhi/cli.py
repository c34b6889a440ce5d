"""Command-line pipeline: generate -> extract -> rank -> train -> fuse -> evaluate -> report.

Every stage writes into ``<out>/<stage>/<key>/`` where ``key`` hashes the
stage's own settings together with the key of the stage it consumes, so a
changed setting never silently reuses stale outputs and unchanged stages
are skipped on re-runs.  A ``DONE`` marker is written last.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
failure (including a missing upstream stage).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import criteria, hyperopt, pipeline
from .datamodel import (
    FREQUENCIES_KHZ,
    ConfigurationError,
    StoredDataset,
    atomic_write_text,
    build_folds,
    read_curves,
    write_curves,
    write_dataset,
)
from .features import METHODS, ExtractionOptions, FeatureScoreTable, FeatureTensor, extract_all, rank_and_select
from .nn import TrainedModel
from .synth import SynthSpec, SyntheticDataset

logger = logging.getLogger("gwhi")

SCHEMA_VERSION = 1
STAGES = ("generate", "extract", "rank", "train", "fuse", "evaluate", "report")


class MissingStageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    out: str = "runs"
    dataset: str | None = None          # stored dataset root; otherwise ``synth`` is generated
    synth: dict = field(default_factory=dict)
    encoding: str = "binary"
    model: str = "dtcvae"
    sp_method: str = "fft"
    frequencies: list | None = None
    folds: list | None = None           # held-out specimen ids
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    epoch_scale: float = 1.0
    hyperparams: dict = field(default_factory=dict)
    hyperopt: dict = field(default_factory=lambda: {"enabled": False, "n_init": 10, "n_iter": 20,
                                                    "mode": "per-fold", "seed": 0})
    extraction: dict = field(default_factory=lambda: {"methods": list(METHODS), "win_len": 250, "overlap": 125})
    leak_free_weights: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for k, v in d.items():
            if k in ("hyperopt", "extraction"):
                merged = dict(getattr(cfg, k))
                merged.update(v or {})
                v = merged
            setattr(cfg, k, v)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"config schema_version {self.schema_version} is not {SCHEMA_VERSION}")
        if self.model not in pipeline.MODELS:
            raise ConfigurationError(f"model must be one of {pipeline.MODELS}")
        methods = tuple(self.extraction.get("methods", METHODS))
        if self.sp_method not in METHODS:
            raise ConfigurationError(f"sp_method must be one of {METHODS}")
        if self.sp_method not in methods:
            raise ConfigurationError(f"sp_method {self.sp_method!r} is not among the extracted methods {methods}")
        if self.dataset is not None and not (Path(self.dataset) / "manifest.txt").exists():
            raise ConfigurationError(f"dataset {self.dataset} has no manifest.txt")
        if self.frequencies is not None and set(self.frequencies) - set(FREQUENCIES_KHZ):
            raise ConfigurationError(f"frequencies must be drawn from {FREQUENCIES_KHZ}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be a non-empty list of distinct integers")
        if self.epoch_scale <= 0:
            raise ConfigurationError("epoch_scale must be positive")
        if self.hyperopt.get("mode") not in ("per-fold", "global"):
            raise ConfigurationError("hyperopt.mode must be 'per-fold' or 'global'")
        try:
            pipeline.hyperparams_from_dict(self.model, self.hyperparams).validate()
            if self.dataset is None:
                SynthSpec.from_dict(self.synth)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def synth_spec(self) -> SynthSpec:
        return SynthSpec.from_dict(self.synth)


def _key(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Run:
    """Resolved stage keys and directories for one configuration."""

    def __init__(self, cfg: RunConfig, jobs: int = 1):
        self.cfg = cfg
        self.jobs = jobs
        self.out = Path(cfg.out)
        c = cfg
        if c.dataset is not None:
            manifest = (Path(c.dataset) / "manifest.txt").read_bytes()
            gen = ("external", str(Path(c.dataset).resolve()), hashlib.sha256(manifest).hexdigest())
        else:
            gen = ("synth", c.synth_spec().as_dict(), c.encoding)
        self.keys = {"generate": _key(gen)}
        self.keys["extract"] = _key(self.keys["generate"], c.extraction, c.frequencies)
        self.keys["rank"] = _key(self.keys["extract"])
        self.keys["train"] = _key(self.keys["rank"], c.model, c.sp_method, c.hyperparams, c.hyperopt, c.epoch_scale)
        self.keys["fuse"] = _key(self.keys["train"], c.seeds, c.folds, c.leak_free_weights)
        self.keys["evaluate"] = _key(self.keys["fuse"])
        self.keys["report"] = _key(self.keys["evaluate"])

    def dir(self, stage: str) -> Path:
        if stage == "generate" and self.cfg.dataset is not None:
            return Path(self.cfg.dataset)
        return self.out / stage / self.keys[stage]

    def done(self, stage: str) -> bool:
        if stage == "generate" and self.cfg.dataset is not None:
            return True
        return (self.dir(stage) / "DONE").exists()

    def require(self, stage: str) -> Path:
        if not self.done(stage):
            raise MissingStageError(
                f"stage '{stage}' has no completed output for this configuration "
                f"(expected {self.dir(stage)}); run with --stage {stage} first"
            )
        return self.dir(stage)

    def finish(self, stage: str, info: dict) -> None:
        d = self.dir(stage)
        atomic_write_text(d / "stage.json", json.dumps(info, sort_keys=True, indent=1, default=str) + "\n")
        atomic_write_text(d / "DONE", self.keys[stage] + "\n")

    # -- shared loaders ---------------------------------------------------
    def dataset(self):
        return StoredDataset(self.require("generate"))

    def tensor(self) -> FeatureTensor:
        return FeatureTensor.load(self.require("extract") / "features.csv")

    def scores(self) -> FeatureScoreTable:
        return FeatureScoreTable.loads((self.require("rank") / "scores.txt").read_text())

    def freqs(self, tensor: FeatureTensor) -> list:
        return list(tensor.freqs) if self.cfg.frequencies is None else list(self.cfg.frequencies)

    def folds(self, tensor: FeatureTensor) -> list:
        plan = build_folds(tensor.specimens)
        ids = plan.test_ids()
        if self.cfg.folds is None:
            return ids
        missing = set(self.cfg.folds) - set(ids)
        if missing:
            raise ConfigurationError(f"folds {sorted(missing)} are not specimens of the dataset")
        return sorted(self.cfg.folds)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_generate(run: Run) -> Path:
    if run.done("generate"):
        logger.info("generate: up to date (%s)", run.dir("generate"))
        return run.dir("generate")
    spec = run.cfg.synth_spec()
    ds = SyntheticDataset(spec)
    d = run.dir("generate")
    write_dataset(d, ds, run.cfg.encoding, extra={"generator": "synthetic", "seed": spec.seed, "law": spec.law})
    write_curves(ds.ground_truth(), d / "truth.csv", model="truth")
    run.finish("generate", {"synth": spec.as_dict()})
    logger.info("generate: wrote %s", d)
    return d


def cmd_extract(run: Run) -> Path:
    if run.done("extract"):
        logger.info("extract: up to date")
        return run.dir("extract")
    ds = run.dataset()
    ex = run.cfg.extraction
    opts = ExtractionOptions(methods=tuple(ex["methods"]), win_len=int(ex["win_len"]), overlap=int(ex["overlap"]))
    tensor = extract_all(ds, opts, run.cfg.frequencies, jobs=run.jobs)
    tensor.save(run.dir("extract") / "features.csv")
    run.finish("extract", {"extraction": ex, "frequencies": tensor.freqs, "flags": tensor.flags})
    logger.info("extract: %d features x %d frequencies", tensor.feature_ids.size, len(tensor.freqs))
    return run.dir("extract")


def cmd_rank(run: Run) -> Path:
    if run.done("rank"):
        logger.info("rank: up to date")
        return run.dir("rank")
    table = rank_and_select(run.tensor())
    atomic_write_text(run.dir("rank") / "scores.txt", table.dumps())
    run.finish("rank", {"benchmark_f_all": table.benchmark})
    return run.dir("rank")


def _job_dir(run: Run, fold, freq, seed=None) -> Path:
    d = run.dir("train") / f"fold{fold}" / f"f{freq}"
    return d if seed is None else d / f"seed{seed}"


def _resolve_hp(run: Run, tensor, ids, fold, freq):
    cfg = run.cfg
    ho = cfg.hyperopt
    if not ho.get("enabled"):
        return pipeline.hyperparams_from_dict(cfg.model, cfg.hyperparams)
    glob = ho["mode"] == "global"
    d = run.dir("train") / ("global" if glob else f"fold{fold}") / f"f{freq}"
    hp_file = d / "hyperparams.json"
    if hp_file.exists():
        return pipeline.hyperparams_from_dict(cfg.model, json.loads(hp_file.read_text()))
    space_def = pipeline.deepsad.SEARCH_SPACE if cfg.model == "deepsad" else pipeline.dtcvae.SEARCH_SPACE
    objective = pipeline.objective_for(tensor, ids, cfg.model, None if glob else fold, freq,
                                       seed=int(cfg.seeds[0]), epoch_scale=cfg.epoch_scale)
    base = asdict(pipeline.hyperparams_from_dict(cfg.model, cfg.hyperparams))

    def wrapped(params):
        return objective({**base, **params})

    d.mkdir(parents=True, exist_ok=True)
    res = hyperopt.optimize(hyperopt.SearchSpace(space_def), wrapped, int(ho["n_init"]), int(ho["n_iter"]),
                            int(ho.get("seed", 0)), trace_path=d / "hyperopt.csv")
    best = {**base, **res.best_params}
    atomic_write_text(hp_file, json.dumps(best, sort_keys=True, indent=1) + "\n")
    logger.info("hyperopt fold=%s f=%s best F_all %.4f", fold, freq, res.best_score)
    return pipeline.hyperparams_from_dict(cfg.model, best)


def cmd_train(run: Run) -> Path:
    cfg = run.cfg
    tensor = run.tensor()
    ids = pipeline.feature_ids_for(run.scores(), cfg.sp_method)
    d = run.dir("train")
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / "feature_ids.txt", ",".join(map(str, ids.tolist())) + "\n")
    todo = []
    for fold in run.folds(tensor):
        for f in run.freqs(tensor):
            hp = _resolve_hp(run, tensor, ids, fold, f)
            for s in cfg.seeds:
                if not (_job_dir(run, fold, f, s) / "curves.csv").exists():
                    todo.append(pipeline.TrainJob(cfg.model, fold, f, int(s), hp, cfg.epoch_scale))
    logger.info("train: %d job(s) to run", len(todo))
    for job, (model, curves) in zip(todo, pipeline.run_jobs(todo, tensor, ids, run.jobs)):
        jd = _job_dir(run, job.test_id, job.freq, job.seed)
        model.save(jd / "model.npz")
        write_curves(curves, jd / "curves.csv", model=cfg.model)
    run.finish("train", {"model": cfg.model, "sp_method": cfg.sp_method, "feature_ids": ids.tolist()})
    return d


def _fold_inputs(run: Run, tensor):
    train_dir = run.require("train")
    for fold in run.folds(tensor):
        freqs = run.freqs(tensor)
        per_seed = {}
        for f in freqs:
            for s in run.cfg.seeds:
                p = train_dir / f"fold{fold}" / f"f{f}" / f"seed{s}" / "curves.csv"
                if not p.exists():
                    raise MissingStageError(f"no trained curves at {p}; run with --stage train "
                                            "for these folds, frequencies and seeds")
                per_seed[(f, s)] = read_curves(p)
        yield fold, freqs, per_seed


def cmd_fuse(run: Run) -> Path:
    tensor = run.tensor()
    d = run.dir("fuse")
    for fold, freqs, per_seed in _fold_inputs(run, tensor):
        res = pipeline.summarize_fold(fold, freqs, run.cfg.seeds, per_seed, run.cfg.leak_free_weights)
        for f in freqs:
            write_curves(res.averaged[f], d / f"fold{fold}" / f"averaged_f{f}.csv", model=run.cfg.model)
        if res.fusion is not None:
            write_curves(res.fusion.curves, d / f"fold{fold}" / "fused.csv", model=run.cfg.model)
            atomic_write_text(d / f"fold{fold}" / "weights.csv", res.fusion.dumps())
    run.finish("fuse", {"leak_free_weights": run.cfg.leak_free_weights})
    return d


REPORT_COLUMNS = ("fold", "source", "mo", "pr", "tr", "mo_test", "pr_test", "f_all", "f_test",
                  "f_all_seed_std", "f_test_seed_std", "n_seeds")


def cmd_evaluate(run: Run) -> Path:
    """Criteria from persisted curves: seed-averaged per frequency and fused."""
    tensor = run.tensor()
    fuse_dir = run.require("fuse")
    d = run.dir("evaluate")
    rows = [",".join(REPORT_COLUMNS)]
    for fold, freqs, per_seed in _fold_inputs(run, tensor):
        res = pipeline.summarize_fold(fold, freqs, run.cfg.seeds, per_seed, run.cfg.leak_free_weights)
        reports = [(f, res.freq_reports[f]) for f in freqs]
        if res.fused_report is not None:
            fused_disk = read_curves(fuse_dir / f"fold{fold}" / "fused.csv")
            if not all(np.array_equal(a.values, b.values) for a, b in zip(fused_disk, res.fusion.curves)):
                raise RuntimeError(f"fused curves of fold {fold} differ from the fuse stage output; re-run fuse")
            reports.append(("fused", res.fused_report))
        for src, rep in reports:
            header = {"model": run.cfg.model, "sp_method": run.cfg.sp_method, "fold": fold, "source": src}
            atomic_write_text(d / f"fold{fold}" / f"{src}.txt", rep.dumps(header))
            vals = [rep.mo, rep.pr, rep.tr, rep.mo_test, rep.pr_test, rep.f_all, rep.f_test,
                    rep.seed_std["f_all"], rep.seed_std["f_test"]]
            rows.append(f"{fold},{src}," + ",".join(f"{v:.6f}" for v in vals) + f",{rep.n_seeds}")
    atomic_write_text(d / "reports.csv", "\n".join(rows) + "\n")
    run.finish("evaluate", {})
    return d


def _read_reports(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    return [dict(zip(cols, l.split(","))) for l in lines[1:] if l]


def _plot_curves(curves, title, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "gwhi"
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in curves:
        ax.plot(c.times, c.values, marker="o", ms=2, lw=1, label=f"specimen {c.specimen_id}")
    ax.set_xlabel("cycles")
    ax.set_ylabel("HI")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(run: Run) -> Path:
    cfg = run.cfg
    rows = _read_reports(run.require("evaluate") / "reports.csv")
    scores = run.scores()
    fuse_dir = run.require("fuse")
    d = run.dir("report")
    out = [f"# HI report: {cfg.model} / {cfg.sp_method}", "",
           f"seeds: {', '.join(map(str, cfg.seeds))}", f"epoch_scale: {cfg.epoch_scale}", ""]

    out += ["## Feature ranking (mean F_all before and after reduction)", "",
            f"benchmark F_all: {scores.benchmark:.4f}", "",
            "| method | features | selected | mean before | std before | mean after | std after |",
            "|---|---|---|---|---|---|---|"]
    for m, s in scores.method_summary().items():
        out.append(f"| {m} | {s['n_features']} | {s['n_selected']} | {s['mean_before']:.4f} | "
                   f"{s['std_before']:.4f} | {s['mean_after']:.4f} | {s['std_after']:.4f} |")

    out += ["", "## Criteria per fold and source (seed-averaged curves; std across seeds)", "",
            "| fold | source | Mo | Pr | Tr | Mo_test | Pr_test | F_all | F_test | F_all std | F_test std |",
            "|---|---|---|---|---|---|---|---|---|---|---|"]
    for r in rows:
        out.append("| " + " | ".join(r[c] for c in REPORT_COLUMNS[:-1]) + " |")

    top = [r for r in rows if r["source"] == "fused"] or rows
    label = "fused" if any(r["source"] == "fused" for r in rows) else "per frequency"
    out += ["", f"## Summary over folds ({label})", "",
            "| fold | source | F_all | F_all std | F_test | F_test std | F_all % of 3 |", "|---|---|---|---|---|---|---|"]
    for r in top:
        f_all = float(r["f_all"])
        out.append(f"| {r['fold']} | {r['source']} | {f_all:.4f} | {float(r['f_all_seed_std']):.4f} | "
                   f"{float(r['f_test']):.4f} | {float(r['f_test_seed_std']):.4f} | {100 * f_all / 3:.2f} |")
    f_all = np.array([float(r["f_all"]) for r in top])
    f_test = np.array([float(r["f_test"]) for r in top])
    out.append(f"| mean | | {f_all.mean():.4f} | {f_all.std():.4f} | {f_test.mean():.4f} | {f_test.std():.4f} | "
               f"{100 * f_all.mean() / 3:.2f} |")
    atomic_write_text(d / "report.md", "\n".join(out) + "\n")

    for fold_dir in sorted(p for p in fuse_dir.iterdir() if p.is_dir()):
        for csv in sorted(fold_dir.glob("*.csv")):
            if csv.name == "weights.csv":
                atomic_write_text(d / "weights" / f"{fold_dir.name}.csv", csv.read_text())
                continue
            curves = read_curves(csv)
            name = f"{fold_dir.name}_{csv.stem}"
            write_curves(curves, d / "curves" / f"{name}.csv", model=cfg.model)
            _plot_curves(curves, f"{cfg.model} {cfg.sp_method} {fold_dir.name} {csv.stem}", d / "plots" / f"{name}.svg")
    run.finish("report", {})
    logger.info("report: %s", d / "report.md")
    return d


COMMANDS = {
    "generate": cmd_generate,
    "extract": cmd_extract,
    "rank": cmd_rank,
    "train": cmd_train,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwhi", description="Guided-wave health-indicator pipeline.")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--stage", choices=STAGES + ("all",), default="all")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for extraction and training")
    p.add_argument("--seed-list", type=_int_list, help="comma-separated training seeds")
    p.add_argument("--model", choices=pipeline.MODELS)
    p.add_argument("--sp", choices=METHODS, help="signal-processing method whose features are used")
    p.add_argument("--freqs", type=_int_list, help="comma-separated excitation frequencies in kHz")
    p.add_argument("--fold", type=_int_list, help="comma-separated held-out specimen ids")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for attr, key in (("seed_list", "seeds"), ("model", "model"), ("sp", "sp_method"),
                      ("freqs", "frequencies"), ("fold", "folds"), ("out", "out")):
        v = getattr(args, attr)
        if v is not None:
            setattr(cfg, key, v)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        cfg = config_from_args(args)
        run = Run(cfg, jobs=args.jobs)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    stages = STAGES if args.stage == "all" else (args.stage,)
    try:
        for stage in stages:
            COMMANDS[stage](run)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported with a runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("stage failure", exc_info=True)
        return 2
    print(run.dir(stages[-1]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
