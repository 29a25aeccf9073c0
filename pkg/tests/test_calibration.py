import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from recall_forge.calibration import (
    LOWER_BOUND_RULES,
    CalibrationError,
    CalibrationSample,
    RuleKind,
    ThresholdEstimate,
    bootstrap_thresholds,
    calibrate_ensemble,
    critical_rank,
    derive_seed,
    ensemble_threshold,
    fuse_subsample,
    ivw_fuse,
    ivw_weights,
    lower_bound,
    quantile_threshold,
    student_t_ci,
    threshold_for_target,
)

CP, J, W, Q = RuleKind.CLOPPER_PEARSON, RuleKind.JEFFREYS, RuleKind.WILSON, RuleKind.EXACT_QUANTILE


def sample_of(scores):
    return CalibrationSample(np.sort(np.asarray(scores, dtype=float))[::-1])


def estimate(mean, var):
    return ThresholdEstimate(CP, mean, var, np.empty(0))


def test_cp_all_successes():
    assert lower_bound(CP, 10, 10, 0.1) == pytest.approx(0.7943282, abs=5e-8)


def test_cp_zero_successes():
    assert lower_bound(CP, 0, 25, 0.1) == 0.0


def test_wilson_reference():
    oracle = proportion_confint(90, 100, alpha=0.2, method="wilson")[0]  # two-sided 80% = one-sided 90%
    assert oracle == pytest.approx(0.854857, abs=1e-5)
    assert lower_bound(W, 90, 100, 0.10) == pytest.approx(oracle, abs=1e-12)


@given(st.integers(1, 2000), st.data(), st.sampled_from([0.01, 0.05, 0.1, 0.2, 0.3]))
def test_wilson_matches_statsmodels(n, data, alpha):
    k = data.draw(st.integers(0, n))
    oracle = proportion_confint(k, n, alpha=2 * alpha, method="wilson")[0]
    assert lower_bound(W, k, n, alpha) == pytest.approx(max(oracle, 0.0), abs=1e-12)


@given(st.integers(1, 2000), st.data(), st.sampled_from([0.01, 0.1, 0.3]))
def test_beta_bounds_match_scipy(n, data, alpha):
    k = data.draw(st.integers(1, n))
    assert lower_bound(CP, k, n, alpha) == pytest.approx(stats.beta.ppf(alpha, k, n - k + 1), rel=1e-8, abs=1e-14)
    assert lower_bound(J, k, n, alpha) == pytest.approx(stats.beta.ppf(alpha, k + 0.5, n - k + 0.5), rel=1e-8, abs=1e-14)


def test_lower_bound_domain():
    with pytest.raises(CalibrationError):
        lower_bound(CP, 11, 10, 0.1)
    with pytest.raises(CalibrationError):
        lower_bound(W, 0, 0, 0.1)
    with pytest.raises(CalibrationError):
        lower_bound(Q, 1, 2, 0.1)


@given(st.integers(1, 300), st.sampled_from(LOWER_BOUND_RULES), st.floats(0.001, 0.4))
def test_bounds_monotone_in_k_and_below_rate(n, rule, alpha):
    ks = range(0, n + 1, max(1, n // 40))
    vals = [lower_bound(rule, k, n, alpha) for k in ks]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    # Jeffreys puts mass above 0 at k = 0, so the rate bound is checked from k = 1
    assert all(v <= k / n + 1e-15 for v, k in zip(vals, ks) if k >= 1)


def test_jeffreys_positive_at_zero_successes():
    assert 0 < lower_bound(J, 0, 10, 0.1) < 0.01


@pytest.mark.slow
def test_cp_not_above_jeffreys_exhaustive():
    for n in range(1, 501):
        for k in range(1, n + 1):
            assert lower_bound(CP, k, n, 0.1) <= lower_bound(J, k, n, 0.1)


def test_quantile_examples():
    p = np.arange(10, 0, -1) / 10
    assert quantile_threshold(p, 0.9) == pytest.approx(0.1)
    assert quantile_threshold(p, 0.7) == pytest.approx(0.3)
    assert quantile_threshold(p, 0.9999) == pytest.approx(0.1)  # rank 0 clamps to 1
    with pytest.raises(CalibrationError):
        quantile_threshold([], 0.5)


def test_quantile_matches_order_statistic():
    s = np.random.default_rng(0).uniform(size=1000)
    asc = sorted(s.tolist())
    assert quantile_threshold(np.sort(s)[::-1], 0.8) == asc[math.ceil(0.2 * 1000) - 1]


@pytest.mark.parametrize("rule", LOWER_BOUND_RULES)
def test_zero_target_takes_top_score(rule):
    s = sample_of(np.random.default_rng(1).uniform(size=50))
    t = threshold_for_target(rule, s, 0.0, 0.1)
    assert t.rank == 1 and t.attainable and t.tau == s.positive_scores[0]


def test_cp_unattainable_flag():
    s = sample_of(np.linspace(0.1, 1.0, 10))
    t = threshold_for_target(CP, s, 0.95, 0.1)
    assert not t.attainable and t.tau == pytest.approx(0.1)


def test_cp_rank_equals_full_scan():
    s = sample_of(np.random.default_rng(2).beta(5, 2, 1000))
    scan = next(k for k in range(1, 1001) if lower_bound(CP, k, 1000, 0.1) >= 0.9)
    t = threshold_for_target(CP, s, 0.9, 0.1)
    assert t.rank == scan and t.tau == s.positive_scores[scan - 1]


def test_quantile_rule_through_threshold_for_target():
    s = sample_of(np.arange(1, 11) / 10)
    t = threshold_for_target(Q, s, 0.7, 0.1)
    assert t.tau == pytest.approx(0.3) and t.attainable and t.rank == 8


def test_empty_sample_rejected():
    with pytest.raises(CalibrationError):
        threshold_for_target(CP, CalibrationSample(np.empty(0)), 0.5, 0.1)


def test_unsorted_sample_rejected():
    with pytest.raises(CalibrationError):
        CalibrationSample(np.array([0.1, 0.5]))


def test_from_labeled():
    s = CalibrationSample.from_labeled([0.2, 0.9, 0.5, 0.7], [1, 0, 1, 1])
    assert s.positive_scores.tolist() == [0.7, 0.5, 0.2] and s.negative_scores.tolist() == [0.9]


@given(st.integers(1, 500), st.sampled_from(LOWER_BOUND_RULES), st.floats(0.3, 0.99), st.data())
def test_guarantee_by_construction(n, rule, target, data):
    seed = data.draw(st.integers(0, 2**32))
    scores = np.random.default_rng(seed).integers(0, 20, n) / 20  # heavy ties
    s = sample_of(scores)
    t = threshold_for_target(rule, s, target, 0.1)
    if t.attainable:
        assert np.count_nonzero(s.positive_scores >= t.tau) / n >= target
        assert lower_bound(rule, t.rank, n, 0.1) >= target
        assert t.rank == 1 or lower_bound(rule, t.rank - 1, n, 0.1) < target


def test_bootstrap_identical_scores():
    est = bootstrap_thresholds(sample_of([0.4] * 30), J, 0.8, 0.1, 50, 3)
    assert est.mean == 0.4 and est.variance == 0.0


def test_bootstrap_deterministic():
    s = sample_of(np.random.default_rng(3).uniform(size=200))
    a = bootstrap_thresholds(s, W, 0.8, 0.1, 100, 9)
    b = bootstrap_thresholds(s, W, 0.8, 0.1, 100, 9)
    assert a.mean == b.mean and a.variance == b.variance and np.array_equal(a.samples, b.samples)


def test_bootstrap_replicates_equal_rule_on_resample():
    s = sample_of(np.random.default_rng(4).uniform(size=120))
    est = bootstrap_thresholds(s, CP, 0.8, 0.1, 20, 11)
    idx = np.random.default_rng(11).integers(0, 120, size=(20, 120))
    for b in range(20):
        again = threshold_for_target(CP, sample_of(s.positive_scores[idx[b]]), 0.8, 0.1)
        assert est.samples[b] == again.tau


@pytest.mark.parametrize("rule", [CP, J, W, Q])
def test_bootstrap_variance_close_to_high_b_reference(rule):
    s = sample_of(np.random.default_rng(5).beta(4, 2, 1000))
    est = bootstrap_thresholds(s, rule, 0.8, 0.1, 200, 21)
    ref = bootstrap_thresholds(s, rule, 0.8, 0.1, 10_000, 22)
    assert est.variance == pytest.approx(ref.variance, rel=0.2)


def test_bootstrap_requires_two():
    with pytest.raises(CalibrationError):
        bootstrap_thresholds(sample_of([0.5]), CP, 0.5, 0.1, 10, 0)
    with pytest.raises(CalibrationError):
        bootstrap_thresholds(sample_of([0.5, 0.6]), CP, 0.5, 0.1, 1, 0)


def test_ivw_equal_variances():
    est = [estimate(m, 0.02) for m in (0.2, 0.4, 0.5, 0.9)]
    assert ivw_fuse(est) == pytest.approx(0.5)


def test_ivw_zero_variance_wins_exactly():
    est = [estimate(0.31, 0.0), estimate(0.5, 1e-3), estimate(0.6, 2e-3), estimate(0.7, 1e-4)]
    assert ivw_fuse(est) == 0.31
    assert ivw_weights([0.0, 1.0, 0.0]).tolist() == [0.5, 0.0, 0.5]


def test_ivw_hand_evaluated():
    assert ivw_fuse([estimate(0.5, 0.01), estimate(0.6, 0.04)]) == pytest.approx(0.52, abs=1e-15)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=6))
def test_ivw_within_range(pairs):
    est = [estimate(m, v) for m, v in pairs]
    fused = ivw_fuse(est)
    means = [m for m, _ in pairs]
    assert min(means) <= fused <= max(means)
    assert ivw_weights([v for _, v in pairs]).sum() == pytest.approx(1.0)


def test_ivw_empty():
    with pytest.raises(CalibrationError):
        ivw_fuse([])


def test_ensemble_modes():
    assert ensemble_threshold([0.4, 0.4, 0.4]) == 0.4
    assert ensemble_threshold([0.3, 0.5, 0.4]) == 0.3
    v = np.random.default_rng(6).uniform(size=9)
    assert ensemble_threshold(v, "median") == sorted(v)[4]
    with pytest.raises(CalibrationError):
        ensemble_threshold(v, "mean")
    with pytest.raises(CalibrationError):
        ensemble_threshold([])


def test_ci_zero_width():
    assert student_t_ci([0.6] * 9, 0.6) == (0.6, 0.6)


def test_ci_against_scipy():
    v = np.random.default_rng(7).uniform(0.4, 0.6, 9)
    c = float(v.min())
    half = stats.t.ppf(0.95, 8) * math.sqrt(np.sum((v - c) ** 2) / (9 * 8))
    lo, hi = student_t_ci(v, c, 0.90)
    assert lo == pytest.approx(c - half, abs=1e-9) and hi == pytest.approx(c + half, abs=1e-9)
    assert stats.t.ppf(0.95, 8) == pytest.approx(1.8595, abs=5e-5)


def test_ci_needs_two():
    with pytest.raises(CalibrationError):
        student_t_ci([0.5], 0.5)


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(2025, r, k) for r in range(4) for k in range(9)}
    assert len(seeds) == 36 and derive_seed(2025, 1, 2) == derive_seed(2025, 1, 2)


def test_fuse_subsample_uses_all_rules():
    s = sample_of(np.random.default_rng(8).beta(3, 1, 400))
    f = fuse_subsample(s, 0.8, 0.1, 50, 1)
    assert [e.rule for e in f.estimates] == [CP, J, W, Q]
    means = [e.mean for e in f.estimates]
    assert min(means) <= f.tau_ens <= max(means) and f.attainable
    assert f.to_dict()["n_positives"] == 400


def test_ensemble_deterministic_and_consistent():
    rng = np.random.default_rng(9)
    samples = [sample_of(rng.beta(3, 1, 300)) for _ in range(9)]
    a = calibrate_ensemble(samples, 0.8, 0.1, 60, 2025)
    b = calibrate_ensemble(samples, 0.8, 0.1, 60, 2025)
    assert a.to_dict() == b.to_dict()
    assert a.final_tau == min(a.per_subsample)
    assert a.ci_low <= a.final_tau <= a.ci_high
    assert 0 <= a.final_tau <= 1 and a.attainable
    med = calibrate_ensemble(samples, 0.8, 0.1, 60, 2025, mode="median")
    assert med.final_tau == float(np.median(med.per_subsample))


def test_ensemble_single_subsample_has_no_ci():
    r = calibrate_ensemble([sample_of(np.linspace(0.1, 0.9, 50))], 0.8, 0.1, 20, 1)
    assert r.ci_low is None and r.to_dict()["ci"] is None


def test_ensemble_unattainable_propagates():
    r = calibrate_ensemble([sample_of(np.linspace(0.1, 0.9, 10))] * 2, 0.95, 0.1, 20, 1)
    assert not r.attainable


def test_critical_rank_none_when_unattainable():
    assert critical_rank(CP, 10, 0.95, 0.1) is None
    assert critical_rank(CP, 10, 0.5, 0.1) == next(k for k in range(1, 11) if lower_bound(CP, k, 10, 0.1) >= 0.5)
