"""Filter -> features -> train -> score -> calibrate -> verify, plus the
multi-trial experiment harness.

Each stage is a plain function over in-memory arrays; ``run_pipeline`` and the
CLI both persist the same artifacts, so any stage can be rerun from disk.
"""

from __future__ import annotations

import configparser
import enum
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import calibration as cal
from .features import FeatureScaler, candidate_features, fit_scaler, read_features, transform, write_features
from .geom_filter import CsrCandidates, GridSpec, enumerate_candidates, mean_cell_extents, read_csr, write_csr
from .geometry import Geometry, InvalidGeometryError, read_geometries
from .oracle import (
    CostCounter,
    MatchMode,
    MatchOracle,
    MatchPredicateConfig,
    VerificationOutcome,
    read_ground_truth,
    verify_with_budget,
)
from .ranker import RankerModel, TrainConfig, load_model, predict, save_model, train
from .sampler import (
    assign_deciles,
    calibration_subsamples,
    equalize_inclusion,
    hashed_order,
    hashed_sample_ids,
    random_sample_ids,
    write_ids,
)
from .synth import SynthConfig

log = logging.getLogger(__name__)


class InputError(ValueError):
    """Unreadable or inconsistent inputs (CLI exit code 3)."""


class InsufficientLabelsError(InputError):
    pass


class CalibratorMode(str, enum.Enum):
    WILSON_RND = "wilson_rnd"
    WILSON_HASH = "wilson_hash"
    IVW_1 = "ivw_1"
    PROPOSED = "proposed"


@dataclass
class PipelineConfig:
    source: Path
    target: Path
    ground_truth: Path
    output_dir: Path
    recall_target: float = 0.80
    alpha: float = 0.10
    seed: int = 2025
    init_seed: int = 0
    train_sample: int = 50_000
    train_labels: int = 1_000
    calib_sample: int = 250_000
    subsamples: int = 9
    bootstrap: int = 200
    budget: int | None = None
    mode: CalibratorMode = CalibratorMode.PROPOSED
    ensemble: str = "min"
    ci_level: float = 0.90
    per_stratum: bool = True
    equalize_inclusion: bool = True
    inclusion_min_share: float = 0.01
    predicate: MatchPredicateConfig = field(default_factory=MatchPredicateConfig)
    ranker: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    workers: int = 1

    def __post_init__(self):
        self.mode = CalibratorMode(self.mode)
        for name in ("source", "target", "ground_truth", "output_dir"):
            setattr(self, name, Path(getattr(self, name)))
        counts = (self.train_sample, self.train_labels, self.calib_sample, self.subsamples, self.bootstrap, self.workers)
        if min(counts) < 1:
            raise InputError("sample sizes, subsample and bootstrap counts and workers must be positive")
        if self.train_labels < 2 or self.train_labels > self.train_sample:
            raise InputError("train_labels must lie in [2, train_sample]")
        if not 0 < self.alpha < 0.5:
            raise InputError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0 < self.recall_target < 1:
            raise InputError(f"recall_target must lie in (0, 1), got {self.recall_target}")
        if self.ensemble not in ("min", "median"):
            raise InputError(f"ensemble must be 'min' or 'median', got {self.ensemble!r}")
        if self.budget is not None and self.budget < 0:
            raise InputError("budget must be non-negative")

    @classmethod
    def from_ini(cls, path, seed: int | None = None, **overrides) -> PipelineConfig:
        """Load an INI file; relative paths resolve against the file's directory."""
        path = Path(path)
        ini = configparser.ConfigParser()
        if not ini.read(path):
            raise InputError(f"cannot read config {path}")
        base = path.parent
        try:
            data = ini["data"]
            kw: dict = {k: Path(os.path.normpath(base / data[k])) for k in ("source", "target", "ground_truth", "output_dir")}
            if ini.has_section("run"):
                r = ini["run"]
                for k in ("recall_target", "alpha", "ci_level"):
                    if k in r:
                        kw[k] = r.getfloat(k)
                for k in ("seed", "init_seed", "workers"):
                    if k in r:
                        kw[k] = r.getint(k)
                for k in ("mode", "ensemble"):
                    if k in r:
                        kw[k] = r[k].strip()
                if r.get("budget", "").strip():
                    kw["budget"] = r.getint("budget")
            if ini.has_section("sampling"):
                s = ini["sampling"]
                for k in ("train_sample", "train_labels", "calib_sample", "subsamples", "bootstrap"):
                    if k in s:
                        kw[k] = s.getint(k)
                if "inclusion_min_share" in s:
                    kw["inclusion_min_share"] = s.getfloat("inclusion_min_share")
                for k in ("per_stratum", "equalize_inclusion"):
                    if k in s:
                        kw[k] = s.getboolean(k)
            if ini.has_section("oracle"):
                o = ini["oracle"]
                kw["predicate"] = MatchPredicateConfig(
                    o.get("mode", MatchMode.POLYGON_OVERLAP_RATIO.value), o.getfloat("min_overlap", 0.5)
                )
            if ini.has_section("ranker"):
                kw["ranker"] = _section_dataclass(TrainConfig, ini["ranker"])
            if ini.has_section("synth"):
                kw["synth"] = _section_dataclass(SynthConfig, ini["synth"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: {exc}") from exc
        if seed is not None:
            kw["seed"] = seed
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def to_dict(self) -> dict:
        """Config echo for reports; ``workers`` is a runtime knob and is left out."""
        return {
            "source": str(self.source),
            "target": str(self.target),
            "ground_truth": str(self.ground_truth),
            "recall_target": self.recall_target,
            "alpha": self.alpha,
            "seed": self.seed,
            "init_seed": self.init_seed,
            "train_sample": self.train_sample,
            "train_labels": self.train_labels,
            "calib_sample": self.calib_sample,
            "subsamples": self.subsamples,
            "bootstrap": self.bootstrap,
            "budget": self.budget,
            "mode": self.mode.value,
            "ensemble": self.ensemble,
            "ci_level": self.ci_level,
            "per_stratum": self.per_stratum,
            "equalize_inclusion": self.equalize_inclusion,
            "inclusion_min_share": self.inclusion_min_share,
            "predicate": {"mode": self.predicate.mode.value, "min_overlap": self.predicate.min_overlap},
            "ranker": asdict(self.ranker_config()),
        }

    def ranker_config(self) -> TrainConfig:
        return replace(self.ranker, seed=self.init_seed)


def _section_dataclass(cls, section):
    kw = {}
    for name, f in cls.__dataclass_fields__.items():
        if name in section:
            kind = type(f.default)
            kw[name] = section.getint(name) if kind is int else section.getfloat(name) if kind is float else section[name]
    return cls(**kw)


# ---------------------------------------------------------------- artifacts


class Artifacts:
    """File layout of a pipeline output directory."""

    def __init__(self, root):
        self.root = Path(root)

    def ensure(self) -> Artifacts:
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    candidates = property(lambda self: self.root / "candidates.rfcs")
    features = property(lambda self: self.root / "features.rfft")
    scaler = property(lambda self: self.root / "scaler.json")
    train_ids = property(lambda self: self.root / "train_ids.txt")
    model = property(lambda self: self.root / "model.rfnn")
    scores = property(lambda self: self.root / "scores.npy")
    calibration = property(lambda self: self.root / "calibration.json")
    report = property(lambda self: self.root / "report.json")
    experiment = property(lambda self: self.root / "experiment.json")

    def calib_ids(self, k: int) -> Path:
        return self.root / f"calib_ids_{k}.txt"


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def write_scaler(path, scaler: FeatureScaler) -> None:
    dump_json(path, {"mins": scaler.mins.tolist(), "maxs": scaler.maxs.tolist()})


def read_scaler(path) -> FeatureScaler:
    d = json.loads(Path(path).read_text())
    return FeatureScaler(np.array(d["mins"]), np.array(d["maxs"]))


# ---------------------------------------------------------------- stages


@dataclass
class Inputs:
    S: list[Geometry]
    T: list[Geometry]
    gt_keys: np.ndarray  # sorted src_index * |T| + tgt_index


def load_inputs(cfg: PipelineConfig) -> Inputs:
    try:
        S = read_geometries(cfg.source)
        T = read_geometries(cfg.target)
        gt = read_ground_truth(cfg.ground_truth)
    except (OSError, InvalidGeometryError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if not S or not T:
        raise InputError("source and target sets must be non-empty")
    return Inputs(S, T, ground_truth_keys(S, T, gt))


def ground_truth_keys(S: Sequence[Geometry], T: Sequence[Geometry], pairs: np.ndarray) -> np.ndarray:
    """Map (src_id, tgt_id) rows to sorted index keys."""
    src_pos = {g.id: i for i, g in enumerate(S)}
    tgt_pos = {g.id: j for j, g in enumerate(T)}
    try:
        keys = [src_pos[int(a)] * len(T) + tgt_pos[int(b)] for a, b in pairs]
    except KeyError as exc:
        raise InputError(f"ground truth names unknown geometry id {exc}") from exc
    return np.unique(np.array(keys, dtype=np.int64))


def stage_filter(inputs: Inputs, workers: int = 1) -> tuple[GridSpec, CsrCandidates]:
    grid = mean_cell_extents(inputs.S)
    return grid, enumerate_candidates(inputs.S, inputs.T, grid, workers)


def stage_features(inputs: Inputs, csr: CsrCandidates, grid: GridSpec) -> tuple[FeatureScaler, np.ndarray]:
    raw = candidate_features(inputs.S, inputs.T, csr, grid)
    scaler = fit_scaler(raw)
    return scaler, transform(scaler, raw)


class Labeler:
    """Ground-truth lookup for candidate indices, charging one geometric check per pair."""

    def __init__(self, csr: CsrCandidates, gt_keys: np.ndarray):
        self.truth = np.isin(csr.pair_keys(), gt_keys)

    def __call__(self, ids, counter: CostCounter | None = None) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if counter is not None:
            counter.geom += int(ids.size)
        return self.truth[ids]


def bootstrap_training_set(
    n_candidates: int, labeler: Labeler, cfg: PipelineConfig, counter: CostCounter | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Label the hashed training sample in key order until both class quotas fill."""
    order = hashed_order(n_candidates, cfg.seed)[: cfg.train_sample]
    truth = labeler(order)
    n_pos = cfg.train_labels // 2
    n_neg = cfg.train_labels - n_pos
    pos_at = np.flatnonzero(truth)
    neg_at = np.flatnonzero(~truth)
    if pos_at.size < n_pos or neg_at.size < n_neg:
        raise InsufficientLabelsError(
            f"training sample of {order.size} pairs holds {pos_at.size} positives and {neg_at.size} negatives; "
            f"{n_pos}/{n_neg} are needed. Increase train_sample."
        )
    picked = np.sort(np.concatenate([pos_at[:n_pos], neg_at[:n_neg]]))
    if counter is not None:
        counter.geom += int(picked[-1]) + 1
    return order[picked], truth[picked]


def stage_train(features: np.ndarray, ids: np.ndarray, labels: np.ndarray, cfg: PipelineConfig) -> RankerModel:
    return train(features[ids], labels.astype(np.float64), cfg.ranker_config())


def stage_score(model: RankerModel, features: np.ndarray, cfg: PipelineConfig, counter: CostCounter | None = None):
    if counter is not None:
        counter.feat += int(features.shape[0])
    return predict(model, features, cfg.ranker.inference_batch, cfg.workers)


def calibration_ids(scores: np.ndarray, cfg: PipelineConfig, mode: CalibratorMode) -> list[np.ndarray]:
    """Candidate indices to label for calibration under ``mode``.

    Single-sample modes draw one subsample of the same size as each of the
    ensemble's subsamples so every mode works from equally sized evidence.
    """
    n = scores.size
    size = max(cfg.calib_sample // cfg.subsamples, 1)
    if mode is CalibratorMode.PROPOSED:
        return calibration_subsamples(n, scores, cfg.calib_sample, cfg.seed, cfg.subsamples, cfg.per_stratum)
    if mode is CalibratorMode.WILSON_RND:
        rng = np.random.default_rng(cal.derive_seed(cfg.seed, cfg.init_seed))
        return [random_sample_ids(n, size, rng)]
    return [hashed_sample_ids(n, size, cfg.seed + 1, assign_deciles(scores), cfg.per_stratum)]


@dataclass
class CalibrationOutcome:
    mode: CalibratorMode
    target: float
    tau: float
    attainable: bool
    sample_sizes: list[int]
    positives: list[int]
    details: dict

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "target": self.target,
            "tau": self.tau,
            "attainable": self.attainable,
            "sample_sizes": self.sample_sizes,
            "positives": self.positives,
            "details": self.details,
        }


def stage_calibrate(
    scores: np.ndarray,
    labeler: Labeler,
    cfg: PipelineConfig,
    mode: CalibratorMode | None = None,
    target: float | None = None,
    counter: CostCounter | None = None,
) -> CalibrationOutcome:
    mode = CalibratorMode(mode or cfg.mode)
    target = cfg.recall_target if target is None else float(target)
    id_sets = calibration_ids(scores, cfg, mode)
    if counter is not None:
        counter.geom += int(np.unique(np.concatenate(id_sets)).size)
    labels = [labeler(ids) for ids in id_sets]
    if cfg.equalize_inclusion and cfg.per_stratum and mode is not CalibratorMode.WILSON_RND:
        strata = assign_deciles(scores)
        seeds = [cfg.seed + 1 + k for k in range(len(id_sets))]
        kept = [
            equalize_inclusion(ids, strata, sd, lab, cfg.inclusion_min_share)
            for ids, lab, sd in zip(id_sets, labels, seeds)
        ]
        labels = [lab[np.isin(ids, k)] for ids, lab, k in zip(id_sets, labels, kept)]
        id_sets = kept
    samples = [cal.CalibrationSample.from_labeled(scores[ids], lab) for ids, lab in zip(id_sets, labels)]
    sizes = [int(ids.size) for ids in id_sets]
    positives = [s.n for s in samples]
    if min(positives) < 2:
        raise InputError(f"calibration sample holds too few positives ({min(positives)}); increase calib_sample")
    if mode is CalibratorMode.PROPOSED:
        res = cal.calibrate_ensemble(samples, target, cfg.alpha, cfg.bootstrap, cfg.seed, cfg.ensemble, cfg.ci_level)
        return CalibrationOutcome(mode, target, res.final_tau, res.attainable, sizes, positives, res.to_dict())
    if mode is CalibratorMode.IVW_1:
        fused = cal.fuse_subsample(samples[0], target, cfg.alpha, cfg.bootstrap, cfg.seed)
        return CalibrationOutcome(mode, target, fused.tau_ens, fused.attainable, sizes, positives, fused.to_dict())
    th = cal.threshold_for_target(cal.RuleKind.WILSON, samples[0], target, cfg.alpha)
    details = {"rule": cal.RuleKind.WILSON.value, "rank": th.rank, "n_positives": samples[0].n}
    return CalibrationOutcome(mode, target, th.tau, th.attainable, sizes, positives, details)


def stage_verify(
    csr: CsrCandidates,
    scores: np.ndarray,
    tau: float,
    oracle: MatchOracle,
    gt_keys: np.ndarray,
    budget: int | None,
    counter: CostCounter | None = None,
) -> VerificationOutcome:
    keep = np.flatnonzero(scores >= tau)
    pairs = np.column_stack([csr.sources()[keep], csr.values[keep]])
    return verify_with_budget(pairs, oracle, len(scores) if budget is None else budget, gt_keys, counter)


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    config: dict
    candidate_count: int
    pair_space: int
    training: dict
    calibration: dict
    verification: dict
    costs: dict
    timings: dict
    workers: int = 1

    @property
    def achieved_recall(self) -> float:
        return self.verification["achieved_recall"]

    @property
    def attainable(self) -> bool:
        return self.calibration["attainable"]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": {
                "sampling": self.config["seed"],
                "init": self.config["init_seed"],
                "calibration_subsamples": [self.config["seed"] + 1 + k for k in range(self.config["subsamples"])],
            },
            "candidate_count": self.candidate_count,
            "pair_space": self.pair_space,
            "candidate_fraction": self.candidate_count / self.pair_space,
            "training": self.training,
            "calibration": self.calibration,
            "tau": self.calibration["tau"],
            "attainable": self.calibration["attainable"],
            "achieved_recall": self.verification["achieved_recall"],
            "recall_error": abs(self.verification["achieved_recall"] - self.config["recall_target"]),
            "reviewed_count": self.verification["reviewed_count"],
            "review_cost_fraction": self.verification["reviewed_count"] / self.candidate_count,
            "budget_overrun": self.verification["overrun"],
            "verification": self.verification,
            "costs": self.costs,
            "runtime": {"workers": self.workers, "stage_seconds": self.timings},
        }


def strip_runtime(report: dict) -> dict:
    """Report content that must be reproducible (everything but wall times and worker count)."""
    out = dict(report)
    out.pop("runtime", None)
    if "runs" in out:
        out["runs"] = [strip_runtime(r) for r in out["runs"]]
    out.pop("stage_seconds_mean", None)
    return out


class _Timer:
    def __init__(self):
        self.times: dict[str, float] = {}

    def __call__(self, name: str):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + time.perf_counter() - self.t0

        return _Span()


@dataclass
class Prepared:
    """Upstream state shared by every trial: inputs, candidates, features, training labels."""

    inputs: Inputs
    grid: GridSpec
    csr: CsrCandidates
    scaler: FeatureScaler
    features: np.ndarray
    labeler: Labeler
    oracle: MatchOracle
    train_ids: np.ndarray
    train_labels: np.ndarray
    train_cost: CostCounter
    timings: dict


def prepare(cfg: PipelineConfig, artifacts: Artifacts | None = None) -> Prepared:
    tm = _Timer()
    with tm("load"):
        inputs = load_inputs(cfg)
    with tm("filter"):
        grid, csr = stage_filter(inputs, cfg.workers)
    if len(csr) == 0:
        raise InputError("the filter produced no candidate pairs")
    with tm("features"):
        scaler, feats = stage_features(inputs, csr, grid)
    labeler = Labeler(csr, inputs.gt_keys)
    counter = CostCounter()
    with tm("bootstrap_labels"):
        ids, labels = bootstrap_training_set(len(csr), labeler, cfg, counter)
    if artifacts is not None:
        artifacts.ensure()
        write_csr(artifacts.candidates, csr)
        write_features(artifacts.features, feats)
        write_scaler(artifacts.scaler, scaler)
        write_ids(artifacts.train_ids, ids)
    oracle = MatchOracle(inputs.S, inputs.T, cfg.predicate)
    return Prepared(inputs, grid, csr, scaler, feats, labeler, oracle, ids, labels, counter, tm.times)


def _training_summary(model: RankerModel, labels: np.ndarray) -> dict:
    hist = model.history
    return {
        "labels": int(labels.size),
        "positives": int(labels.sum()),
        "epochs": len(hist),
        "best_val_loss": min(h["val_loss"] for h in hist) if hist else None,
    }


def _finish(
    cfg: PipelineConfig,
    prep: Prepared,
    model: RankerModel,
    scores: np.ndarray,
    score_cost: CostCounter,
    timings: dict,
    mode: CalibratorMode,
    target: float,
    artifacts: Artifacts | None,
) -> RunReport:
    tm = _Timer()
    counter = CostCounter(score_cost.geom, score_cost.feat)
    with tm("calibrate"):
        outcome = stage_calibrate(scores, prep.labeler, cfg, mode, target, counter)
    with tm("verify"):
        ver = stage_verify(prep.csr, scores, outcome.tau, prep.oracle, prep.inputs.gt_keys, cfg.budget, counter)
    if artifacts is not None:
        dump_json(artifacts.calibration, outcome.to_dict())
    run_cfg = replace(cfg, mode=mode, recall_target=target).to_dict()
    return RunReport(
        run_cfg,
        len(prep.csr),
        len(prep.inputs.S) * len(prep.inputs.T),
        _training_summary(model, prep.train_labels),
        outcome.to_dict(),
        ver.to_dict(),
        counter.to_dict(),
        {**timings, **tm.times},
        cfg.workers,
    )


def _train_and_score(cfg: PipelineConfig, prep: Prepared, artifacts: Artifacts | None):
    tm = _Timer()
    counter = CostCounter(prep.train_cost.geom, 0)
    with tm("train"):
        model = stage_train(prep.features, prep.train_ids, prep.train_labels, cfg)
    with tm("score"):
        scores = stage_score(model, prep.features, cfg, counter)
    if artifacts is not None:
        save_model(artifacts.model, model)
        np.save(artifacts.scores, scores)
    return model, scores, counter, tm.times


def run_pipeline(cfg: PipelineConfig, write: bool = True) -> RunReport:
    """One end-to-end run; with ``write`` every stage artifact lands in ``cfg.output_dir``."""
    artifacts = Artifacts(cfg.output_dir) if write else None
    prep = prepare(cfg, artifacts)
    model, scores, counter, t_model = _train_and_score(cfg, prep, artifacts)
    report = _finish(cfg, prep, model, scores, counter, {**prep.timings, **t_model}, cfg.mode, cfg.recall_target, artifacts)
    if artifacts is not None:
        dump_json(artifacts.report, report.to_dict())
    return report


def _summarise(reports: Sequence[RunReport]) -> dict:
    rec = np.array([r.achieved_recall for r in reports])
    target = reports[0].config["recall_target"]
    return {
        "runs": len(reports),
        "mean_recall": float(rec.mean()),
        "sd_recall": float(rec.std(ddof=1)) if rec.size > 1 else 0.0,
        "mean_abs_error": float(np.abs(rec.mean() - target)),
        "mean_run_abs_error": float(np.mean(np.abs(rec - target))),
        "mean_review_cost_fraction": float(np.mean([r.to_dict()["review_cost_fraction"] for r in reports])),
        "mean_tau": float(np.mean([r.calibration["tau"] for r in reports])),
        "unattainable_runs": int(sum(not r.attainable for r in reports)),
    }


def run_experiment(
    cfg: PipelineConfig,
    trials: int = 10,
    modes: Iterable[CalibratorMode | str] | None = None,
    targets: Iterable[float] | None = None,
    init_seeds: Sequence[int] | None = None,
) -> dict:
    """Repeat the pipeline over ``trials`` neural-init seeds.

    Everything upstream of training (candidates, features, the labelled
    training set) is shared; each trial retrains and rescores once, then
    calibrates and verifies for every (mode, target).
    """
    if trials < 2:
        raise InputError("an experiment needs at least two trials")
    modes = [CalibratorMode(m) for m in (modes or [cfg.mode])]
    targets = [float(t) for t in (targets or [cfg.recall_target])]
    seeds = list(init_seeds) if init_seeds is not None else [cfg.init_seed + t for t in range(trials)]
    if len(seeds) != trials:
        raise InputError("init_seeds must have one entry per trial")
    prep = prepare(cfg)
    runs: dict[tuple[str, float], list[RunReport]] = {(m.value, t): [] for m in modes for t in targets}
    for s in seeds:
        trial_cfg = replace(cfg, init_seed=s)
        model, scores, counter, t_model = _train_and_score(trial_cfg, prep, None)
        for m in modes:
            for t in targets:
                runs[(m.value, t)].append(
                    _finish(trial_cfg, prep, model, scores, counter, {**prep.timings, **t_model}, m, t, None)
                )
    all_reports = [r for rs in runs.values() for r in rs]
    stages = sorted({k for r in all_reports for k in r.timings})
    summary = {
        "config": cfg.to_dict(),
        "trials": trials,
        "init_seeds": seeds,
        "modes": {m.value: {f"{t:g}": _summarise(runs[(m.value, t)]) for t in targets} for m in modes},
        "stage_seconds_mean": {k: float(np.mean([r.timings.get(k, 0.0) for r in all_reports])) for k in stages},
        "runs": [r.to_dict() for r in all_reports],
    }
    return summary


# ---------------------------------------------------------------- stage reruns from disk


def load_candidates(artifacts: Artifacts) -> tuple[CsrCandidates, np.ndarray]:
    try:
        return read_csr(artifacts.candidates), read_features(artifacts.features)
    except OSError as exc:
        raise InputError(f"missing filter artifacts in {artifacts.root}; run 'filter' first ({exc})") from exc


def load_model_artifact(artifacts: Artifacts) -> RankerModel:
    try:
        return load_model(artifacts.model)
    except OSError as exc:
        raise InputError(f"missing model in {artifacts.root}; run 'train' first ({exc})") from exc


def load_scores(artifacts: Artifacts) -> np.ndarray:
    try:
        return np.load(artifacts.scores)
    except OSError as exc:
        raise InputError(f"missing scores in {artifacts.root}; run 'score' first ({exc})") from exc


def filter_to_disk(cfg: PipelineConfig) -> CsrCandidates:
    inputs = load_inputs(cfg)
    grid, csr = stage_filter(inputs, cfg.workers)
    scaler, feats = stage_features(inputs, csr, grid)
    art = Artifacts(cfg.output_dir).ensure()
    write_csr(art.candidates, csr)
    write_features(art.features, feats)
    write_scaler(art.scaler, scaler)
    return csr


def train_from_disk(cfg: PipelineConfig) -> RankerModel:
    art = Artifacts(cfg.output_dir)
    csr, feats = load_candidates(art)
    labeler = Labeler(csr, load_inputs(cfg).gt_keys)
    ids, labels = bootstrap_training_set(len(csr), labeler, cfg)
    model = stage_train(feats, ids, labels, cfg)
    write_ids(art.train_ids, ids)
    save_model(art.model, model)
    return model


def score_from_disk(cfg: PipelineConfig) -> np.ndarray:
    art = Artifacts(cfg.output_dir)
    _, feats = load_candidates(art)
    scores = stage_score(load_model_artifact(art), feats, cfg)
    np.save(art.scores, scores)
    return scores


def calibrate_from_disk(cfg: PipelineConfig) -> CalibrationOutcome:
    art = Artifacts(cfg.output_dir)
    csr, _ = load_candidates(art)
    scores = load_scores(art)
    if scores.shape != (len(csr),):
        raise InputError("scores do not match the candidate set; rerun 'score'")
    outcome = stage_calibrate(scores, Labeler(csr, load_inputs(cfg).gt_keys), cfg)
    dump_json(art.calibration, outcome.to_dict())
    return outcome
