import dataclasses
import json

import numpy as np
import pytest

from recall_forge import cli
from recall_forge import pipeline as pl
from recall_forge.calibration import derive_seed
from recall_forge.oracle import CostCounter
from recall_forge.sampler import assign_deciles, calibration_subsamples, equalize_inclusion


def write_ini(path, cfg: pl.PipelineConfig, **run):
    run_lines = "\n".join(f"{k} = {v}" for k, v in run.items())
    path.write_text(
        f"""[data]
source = {cfg.source}
target = {cfg.target}
ground_truth = {cfg.ground_truth}
output_dir = {cfg.output_dir}

[run]
recall_target = {cfg.recall_target}
seed = {cfg.seed}
init_seed = {cfg.init_seed}
{run_lines}

[sampling]
train_sample = {cfg.train_sample}
train_labels = {cfg.train_labels}
calib_sample = {cfg.calib_sample}
bootstrap = {cfg.bootstrap}

[ranker]
max_epochs = 30
"""
    )
    return path


@pytest.fixture(scope="module")
def base_run(small_config, tmp_path_factory):
    cfg = dataclasses.replace(small_config, output_dir=tmp_path_factory.mktemp("base") / "out")
    return cfg, pl.run_pipeline(cfg)


def test_report_contents(base_run):
    cfg, rep = base_run
    d = rep.to_dict()
    assert d["candidate_count"] > 10_000 and d["candidate_fraction"] < 0.05
    assert d["seeds"] == {"sampling": 2025, "init": 0, "calibration_subsamples": list(range(2026, 2035))}
    assert d["config"]["mode"] == "proposed" and "workers" not in d["config"]
    assert d["reviewed_count"] == int(np.count_nonzero(np.load(cfg.output_dir / "scores.npy") >= d["tau"]))
    assert 0 <= d["achieved_recall"] <= 1 and d["attainable"]
    assert d["training"]["labels"] == 200 and d["training"]["positives"] == 100
    assert d["costs"]["c_feat"] == d["candidate_count"]
    assert all(v >= 0 for v in d["runtime"]["stage_seconds"].values())
    assert d["verification"]["budget"] == d["candidate_count"] and not d["budget_overrun"]
    on_disk = json.loads((cfg.output_dir / "report.json").read_text())
    assert on_disk == json.loads(json.dumps(d))
    cal = d["calibration"]["details"]
    assert cal["ci"][0] <= cal["final_tau"] <= cal["ci"][1] and len(cal["per_subsample_tau"]) == 9


def test_rerun_identical_modulo_runtime(base_run, tmp_path):
    cfg, rep = base_run
    again = pl.run_pipeline(dataclasses.replace(cfg, output_dir=tmp_path / "again"))
    a = json.dumps(pl.strip_runtime(rep.to_dict()), sort_keys=False)
    b = json.dumps(pl.strip_runtime(again.to_dict()), sort_keys=False)
    assert a == b
    for name in ("candidates.rfcs", "features.rfft", "model.rfnn", "scores.npy", "calibration.json"):
        assert (cfg.output_dir / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_worker_count_invariant(base_run, tmp_path):
    cfg, rep = base_run
    multi = pl.run_pipeline(dataclasses.replace(cfg, output_dir=tmp_path / "w4", workers=4))
    assert pl.strip_runtime(multi.to_dict()) == pl.strip_runtime(rep.to_dict())
    assert multi.to_dict()["runtime"]["workers"] == 4


def test_modes_share_upstream_bytes(base_run, tmp_path):
    cfg, rep = base_run
    other = pl.run_pipeline(dataclasses.replace(cfg, output_dir=tmp_path / "wh", mode="wilson_hash"))
    for name in ("candidates.rfcs", "features.rfft", "model.rfnn", "scores.npy"):
        assert (cfg.output_dir / name).read_bytes() == (tmp_path / "wh" / name).read_bytes()
    assert other.calibration["tau"] != rep.calibration["tau"]
    assert other.to_dict()["training"] == rep.to_dict()["training"]


def test_all_modes_run(small_cfg):
    prep = pl.prepare(small_cfg)
    model, scores, counter, _ = pl._train_and_score(small_cfg, prep, None)
    taus = {}
    for mode in pl.CalibratorMode:
        out = pl.stage_calibrate(scores, prep.labeler, small_cfg, mode, 0.8, CostCounter())
        assert out.attainable and 0 < out.tau < 1
        taus[mode.value] = out.tau
        if mode is pl.CalibratorMode.PROPOSED:
            assert len(out.sample_sizes) == 9
        else:
            assert len(out.sample_sizes) == 1
    assert len(set(taus.values())) == 4


def test_calibration_ids_by_mode(small_cfg):
    scores = np.random.default_rng(0).uniform(size=30_000)
    prop = pl.calibration_ids(scores, small_cfg, pl.CalibratorMode.PROPOSED)
    assert all(np.array_equal(a, b) for a, b in zip(prop, calibration_subsamples(30_000, scores, 18_000, 2025)))
    (hashed,) = pl.calibration_ids(scores, small_cfg, pl.CalibratorMode.WILSON_HASH)
    assert np.array_equal(hashed, prop[0])  # single-sample modes use the first subsample's seed and size
    (rnd,) = pl.calibration_ids(scores, small_cfg, pl.CalibratorMode.WILSON_RND)
    assert rnd.size == hashed.size and not np.array_equal(rnd, hashed)
    (rnd2,) = pl.calibration_ids(scores, dataclasses.replace(small_cfg, init_seed=1), pl.CalibratorMode.WILSON_RND)
    assert not np.array_equal(rnd, rnd2)
    assert derive_seed(2025, 0) != derive_seed(2025, 1)


def test_calibration_uses_equalized_samples(small_cfg):
    prep = pl.prepare(small_cfg)
    _, scores, _, _ = pl._train_and_score(small_cfg, prep, None)
    out = pl.stage_calibrate(scores, prep.labeler, small_cfg, pl.CalibratorMode.WILSON_HASH, 0.8, CostCounter())
    (ids,) = pl.calibration_ids(scores, small_cfg, pl.CalibratorMode.WILSON_HASH)
    strata = assign_deciles(scores)
    kept = equalize_inclusion(ids, strata, small_cfg.seed + 1, prep.labeler(ids), small_cfg.inclusion_min_share)
    assert out.sample_sizes == [int(kept.size)]
    raw = pl.stage_calibrate(
        scores, prep.labeler, dataclasses.replace(small_cfg, equalize_inclusion=False), pl.CalibratorMode.WILSON_HASH, 0.8
    )
    assert raw.sample_sizes == [int(ids.size)]


def test_labeler_charges_geometric_cost(small_cfg):
    prep = pl.prepare(small_cfg)
    c = CostCounter()
    lab = prep.labeler(np.arange(500), c)
    assert c.geom == 500 and lab.dtype == bool


def test_training_labels_in_key_order(small_cfg):
    prep = pl.prepare(small_cfg)
    ids, labels = prep.train_ids, prep.train_labels
    assert labels.sum() == 100 and (~labels).sum() == 100
    assert prep.train_cost.geom >= ids.size
    order = pl.hashed_order(len(prep.csr), small_cfg.seed)
    order_pos = np.empty_like(order)
    order_pos[order] = np.arange(order.size)
    assert order_pos[ids].max() == prep.train_cost.geom - 1


def test_insufficient_labels(small_config, tmp_path):
    cfg = dataclasses.replace(small_config, output_dir=tmp_path, train_sample=300, train_labels=200)
    with pytest.raises(pl.InsufficientLabelsError, match="train_sample"):
        pl.run_pipeline(cfg)


def test_experiment_identical_seeds_zero_sd(small_cfg):
    s = pl.run_experiment(small_cfg, trials=2, init_seeds=[5, 5], modes=["proposed", "wilson_rnd"])
    assert s["modes"]["proposed"]["0.8"]["sd_recall"] == 0.0
    assert s["modes"]["wilson_rnd"]["0.8"]["sd_recall"] == 0.0
    assert len(s["runs"]) == 4


def test_experiment_needs_two_trials(small_cfg):
    with pytest.raises(pl.InputError):
        pl.run_experiment(small_cfg, trials=1)
    with pytest.raises(pl.InputError):
        pl.run_experiment(small_cfg, trials=3, init_seeds=[1, 2])


def test_experiment_runs_match_single_runs(small_cfg, tmp_path):
    s = pl.run_experiment(small_cfg, trials=2, targets=[0.7])
    single = pl.run_pipeline(dataclasses.replace(small_cfg, init_seed=1, recall_target=0.7), write=False)
    assert pl.strip_runtime(s["runs"][1]) == pl.strip_runtime(single.to_dict())


def test_config_validation(small_config):
    for bad in (
        dict(alpha=0.6),
        dict(recall_target=1.0),
        dict(train_labels=10**6),
        dict(ensemble="mean"),
        dict(budget=-1),
        dict(subsamples=0),
    ):
        with pytest.raises(pl.InputError):
            dataclasses.replace(small_config, **bad)
    with pytest.raises(ValueError):
        dataclasses.replace(small_config, mode="quantci")


def test_from_ini(small_config, tmp_path):
    ini = write_ini(tmp_path / "c.ini", small_config, mode="ivw_1", budget=123)
    cfg = pl.PipelineConfig.from_ini(ini, seed=99, recall_target=0.9, workers=None)
    assert cfg.seed == 99 and cfg.recall_target == 0.9 and cfg.mode is pl.CalibratorMode.IVW_1
    assert cfg.budget == 123 and cfg.source == small_config.source and cfg.train_labels == 200
    rel = tmp_path / "rel.ini"
    rel.write_text("[data]\nsource = a/s.csv\ntarget = t.csv\nground_truth = g.csv\noutput_dir = out\n")
    assert pl.PipelineConfig.from_ini(rel).source == tmp_path / "a" / "s.csv"
    (tmp_path / "bad.ini").write_text("[run]\nalpha = lots\n")
    with pytest.raises(pl.InputError):
        pl.PipelineConfig.from_ini(tmp_path / "bad.ini")
    with pytest.raises(pl.InputError):
        pl.PipelineConfig.from_ini(tmp_path / "missing.ini")


def test_budget_overrun_flag(small_cfg):
    rep = pl.run_pipeline(dataclasses.replace(small_cfg, budget=10), write=False)
    assert rep.to_dict()["budget_overrun"] and rep.verification["budget"] == 10


# ---------------------------------------------------------------- command line


@pytest.fixture
def ini(small_config, tmp_path):
    cfg = dataclasses.replace(small_config, output_dir=tmp_path / "out")
    return write_ini(tmp_path / "small.ini", cfg), cfg


def test_cli_stages_compose_to_run(ini, tmp_path, capsys):
    path, cfg = ini
    for cmd in ("filter", "train", "score", "calibrate"):
        assert cli.main([cmd, "--config", str(path)]) == 0
    staged = (cfg.output_dir / "calibration.json").read_bytes()
    staged_scores = (cfg.output_dir / "scores.npy").read_bytes()
    # calibrate again from the dumped scores
    assert cli.main(["calibrate", "--config", str(path)]) == 0
    assert (cfg.output_dir / "calibration.json").read_bytes() == staged
    assert cli.main(["run", "--config", str(path)]) == 0
    assert (cfg.output_dir / "calibration.json").read_bytes() == staged
    assert (cfg.output_dir / "scores.npy").read_bytes() == staged_scores
    out = capsys.readouterr().out
    assert "achieved recall" in out
    assert cli.main(["report", "--config", str(path)]) == 0
    assert "tau" in capsys.readouterr().out


def test_cli_stage_isolation_from_artifacts(ini):
    path, cfg = ini
    assert cli.main(["filter", "--config", str(path)]) == 0
    assert cli.main(["train", "--config", str(path)]) == 0
    model = (cfg.output_dir / "model.rfnn").read_bytes()
    assert cli.main(["train", "--config", str(path)]) == 0
    assert (cfg.output_dir / "model.rfnn").read_bytes() == model


def test_cli_unattainable_exit_code(ini):
    path, _ = ini
    assert cli.main(["run", "--config", str(path), "--mode", "wilson_hash", "--target", "0.9999"]) == cli.EXIT_UNATTAINABLE


def test_cli_input_errors(ini, tmp_path, capsys):
    path, cfg = ini
    assert cli.main(["calibrate", "--config", str(path)]) == cli.EXIT_INPUT  # nothing filtered yet
    assert "run 'filter' first" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text(path.read_text().replace(str(cfg.source), str(tmp_path / "nope.csv")))
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_INPUT
    assert cli.main(["run", "--config", str(tmp_path / "absent.ini")]) == cli.EXIT_INPUT
    with pytest.raises(SystemExit):
        cli.main(["run"])


def test_cli_generate(tmp_path):
    ini = tmp_path / "g.ini"
    ini.write_text(
        "[data]\nsource = s.csv\ntarget = t.csv\nground_truth = gt.csv\noutput_dir = out\n"
        "[synth]\nn_source = 50\nn_target = 200\nworld_extent = 5\nseed = 1\n"
    )
    assert cli.main(["generate", "--config", str(ini)]) == 0
    assert (tmp_path / "s.csv").read_text().startswith("id,wkt\n")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 201


def test_cli_experiment_embeds_runs(ini, capsys):
    path, cfg = ini
    rc = cli.main(["experiment", "--config", str(path), "--trials", "10"])
    assert rc == 0
    doc = json.loads((cfg.output_dir / "experiment.json").read_text())
    assert doc["trials"] == 10 and len(doc["runs"]) == 10
    assert doc["init_seeds"] == list(range(10))
    assert all(r["config"]["init_seed"] == s for r, s in zip(doc["runs"], range(10)))
    assert "proposed" in capsys.readouterr().out
    assert cli.main(["report", "--config", str(path)]) == 0
