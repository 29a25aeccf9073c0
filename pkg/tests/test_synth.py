import dataclasses

import numpy as np
import pytest

from recall_forge.geom_filter import enumerate_candidates, mean_cell_extents
from recall_forge.oracle import MatchOracle, MatchPredicateConfig, is_convex, overlap_ratio
from recall_forge.synth import SynthConfig, generate

SMALL = SynthConfig(n_source=300, n_target=1200, world_extent=45.0 * np.sqrt(300 / 5000), seed=3)


def test_no_matches_means_empty_ground_truth():
    d = generate(dataclasses.replace(SMALL, match_fraction=0.0))
    assert d.ground_truth.shape == (0, 2) and d.seeded_pairs.shape == (0, 2)


def test_exact_copies_have_unit_ratio():
    d = generate(dataclasses.replace(SMALL, jitter_sd=0.0, scale_sd=0.0))
    assert len(d.ground_truth) == len(d.seeded_pairs) == round(0.3 * 1200)
    for s, t in d.ground_truth[:100]:
        assert np.allclose(d.sources[s].ring, d.targets[t].ring, atol=1e-12)
        assert overlap_ratio(d.sources[s], d.targets[t]) == pytest.approx(1.0, abs=1e-9)


def test_byte_identical_output(tmp_path):
    for run in ("a", "b"):
        generate(SMALL).write(tmp_path / run / "s.csv", tmp_path / run / "t.csv", tmp_path / run / "gt.csv")
    for name in ("s.csv", "t.csv", "gt.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = dataclasses.replace(SMALL, seed=4)
    generate(other).write(tmp_path / "c" / "s.csv", tmp_path / "c" / "t.csv", tmp_path / "c" / "gt.csv")
    assert (tmp_path / "a" / "s.csv").read_bytes() != (tmp_path / "c" / "s.csv").read_bytes()


def test_labels_consistent_with_predicate():
    cfg = MatchPredicateConfig(min_overlap=0.6)
    d = generate(SMALL, cfg)
    oracle = MatchOracle(d.sources, d.targets, cfg)
    assert oracle.label(d.ground_truth[:, 0], d.ground_truth[:, 1]).all()
    rejected = ~oracle.label(d.seeded_pairs[:, 0], d.seeded_pairs[:, 1])
    assert len(d.ground_truth) + rejected.sum() == len(d.seeded_pairs)
    assert np.all(np.diff(d.ground_truth[:, 0]) >= 0)


def test_shapes_convex_quads_with_dense_ids():
    d = generate(SMALL)
    assert [g.id for g in d.sources] == list(range(300))
    assert [g.id for g in d.targets] == list(range(1200))
    assert all(g.ring.shape == (4, 2) and is_convex(g.ring) for g in d.sources + d.targets)


def test_matched_pairs_survive_filter_at_small_jitter():
    d = generate(dataclasses.replace(SMALL, jitter_sd=0.01, scale_sd=0.01))
    csr = enumerate_candidates(d.sources, d.targets, mean_cell_extents(d.sources))
    cand = set(csr.pair_keys().tolist())
    seeded = d.seeded_pairs[:, 0] * len(d.targets) + d.seeded_pairs[:, 1]
    assert all(k in cand for k in seeded.tolist())


def test_matched_targets_not_clustered_by_id():
    d = generate(SMALL)
    tgt = np.sort(d.seeded_pairs[:, 1])
    assert tgt.min() < 100 and tgt.max() > 1100


@pytest.mark.parametrize(
    "bad",
    [dict(n_source=0), dict(n_target=0), dict(match_fraction=1.5), dict(world_extent=0), dict(jitter_sd=-1)],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)
