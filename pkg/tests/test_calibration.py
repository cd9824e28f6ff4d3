import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from selcal.bounds import cp_upper, hoeffding_upper
from selcal.calibration import (
    LARGEST,
    PREFIX,
    GridStats,
    as_arrays,
    build_curve,
    calibrate,
    ecfr,
    select_threshold,
)
from selcal.evaluation import SyntheticModel, _draw, gen_population, substream
from selcal.model import BoundCurve, CurveEntry, RiskConfig, ScoredRecord

THREE = [ScoredRecord("a", 0.1, 1), ScoredRecord("b", 0.2, 0), ScoredRecord("c", 0.9, 1)]


def curve_of(ts, uppers):
    return BoundCurve(tuple(CurveEntry(t, i + 1, 0, 0.0, u) for i, (t, u) in enumerate(zip(ts, uppers))))


def brute_force_threshold(records, alpha, delta):
    """Scan every candidate by direct counting; keep the largest passing one."""
    best = None
    for t in sorted({r.uncertainty for r in records}):
        m = sum(r.uncertainty <= t for r in records)
        w = sum(r.uncertainty <= t and r.admissible == 0 for r in records)
        if cp_upper(w, m, delta) <= alpha:
            best = t
    return best


# -- counting ------------------------------------------------------------------


def test_ecfr_examples():
    assert ecfr(THREE, 0.5) == (2, 1, 0.5)
    assert ecfr(THREE, 0.05) == (0, 0, None)
    m, w, r = ecfr(THREE, 1.0)
    assert (m, w) == (3, 1) and r == pytest.approx(1 / 3)


def test_curve_single_failure():
    curve = build_curve([ScoredRecord("x", 0.4, 0)], 0.05, "cp")
    assert curve.to_list() == [{"t": 0.4, "m_hat": 1, "w_hat": 1, "r_hat": 1.0, "upper": 1.0}]


def test_curve_single_admissible():
    (entry,) = build_curve([ScoredRecord("x", 0.4, 1)], 0.05, "cp")
    assert entry.upper == pytest.approx(0.95, abs=1e-9)


def test_curve_two_admissible():
    curve = build_curve([ScoredRecord("x", 0.1, 1), ScoredRecord("y", 0.2, 1)], 0.05, "cp")
    np.testing.assert_allclose(curve.uppers, [0.95, 1 - 0.05 ** 0.5], atol=1e-9)


def test_curve_counters_with_ties():
    recs = [ScoredRecord(str(i), u, i % 2) for i, u in enumerate([0.3, 0.1, 0.3, 0.3, 0.2, 0.1])]
    curve = build_curve(recs, 0.05, "hfd")
    assert curve.thresholds == [0.1, 0.2, 0.3]
    assert [e.m_hat for e in curve] == [2, 3, 6]
    assert [e.w_hat for e in curve] == [0, 1, 3]
    for e in curve:
        assert e.upper == pytest.approx(hoeffding_upper(e.w_hat / e.m_hat, e.m_hat, 0.05), rel=1e-15)


def test_curve_rejects_empty():
    with pytest.raises(ValueError):
        build_curve([], 0.05, "cp")


# -- threshold selection -------------------------------------------------------


def test_select_examples_both_rules():
    c = curve_of([0.2, 0.5, 0.9], [0.04, 0.08, 0.12])
    assert select_threshold(c, 0.1, PREFIX) == 0.5
    assert select_threshold(c, 0.1, LARGEST) == 0.5


def test_select_first_violates():
    c = curve_of([0.2, 0.5], [0.15, 0.05])
    assert select_threshold(c, 0.1, PREFIX) is None
    # the default rule looks past the early violation
    assert select_threshold(c, 0.1, LARGEST) == 0.5


def test_select_non_monotone_prefix():
    c = curve_of([0.2, 0.5, 0.9], [0.05, 0.12, 0.09])
    assert select_threshold(c, 0.1, PREFIX) == 0.2
    assert select_threshold(c, 0.1, LARGEST) == 0.9


def test_select_unknown_rule():
    with pytest.raises(ValueError):
        select_threshold(curve_of([0.1], [0.0]), 0.1, "smallest")


def test_prefix_rule_never_fires_on_real_curves():
    # a single record cannot certify a rate below 1 - delta, so the first entry always fails
    recs = gen_population(500, SyntheticModel.linear(), 0)
    assert select_threshold(build_curve(recs, 0.05, "cp"), 0.5, PREFIX) is None


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.sampled_from([LARGEST, PREFIX]))
def test_alpha_monotone(uppers, a1, a2, rule):
    a1, a2 = sorted((a1, a2))
    c = curve_of([i / 10 for i in range(len(uppers))], uppers)
    t1, t2 = select_threshold(c, a1, rule), select_threshold(c, a2, rule)
    assert (-math.inf if t1 is None else t1) <= (-math.inf if t2 is None else t2)


# -- calibrate -----------------------------------------------------------------


def test_calibrate_all_admissible():
    recs = [ScoredRecord(f"r{i}", i / 100, 1) for i in range(100)]
    out = calibrate(recs, RiskConfig(alpha=0.1))
    assert out.threshold == 0.99
    assert out.bound_at_threshold == pytest.approx(1 - 0.05 ** 0.01, abs=1e-9)
    assert out.selected_count_cal == 100


def test_calibrate_all_failures():
    recs = [ScoredRecord(f"r{i}", i / 100, 0) for i in range(100)]
    out = calibrate(recs, RiskConfig(alpha=0.1))
    assert out.threshold is None and out.bound_at_threshold is None and out.selected_count_cal == 0


@pytest.mark.parametrize("seed", range(4))
def test_calibrate_matches_brute_force(seed):
    recs = gen_population(120, SyntheticModel.linear(), seed)
    for alpha in (0.1, 0.2, 0.3):
        expected = brute_force_threshold(recs, alpha, 0.05)
        assert calibrate(recs, RiskConfig(alpha=alpha)).threshold == expected


def test_calibrate_is_deterministic():
    recs = gen_population(400, SyntheticModel.linear(), 9)
    assert calibrate(recs, RiskConfig(alpha=0.15)) == calibrate(list(recs), RiskConfig(alpha=0.15))


def test_cp_threshold_dominates_hoeffding():
    for seed in range(20):
        recs = gen_population(400, SyntheticModel.linear(), seed)
        for alpha in (0.1, 0.2):
            t_cp = calibrate(recs, RiskConfig(alpha=alpha, bound_method="cp")).threshold
            t_h = calibrate(recs, RiskConfig(alpha=alpha, bound_method="hfd")).threshold
            assert (-1 if t_cp is None else t_cp) >= (-1 if t_h is None else t_h)


# -- fast path -----------------------------------------------------------------


@pytest.mark.parametrize("method", ["cp", "hfd"])
def test_grid_stats_matches_calibrate(method):
    rng = np.random.default_rng(21)
    models = [SyntheticModel.linear(), SyntheticModel.logistic(8, 0.6), SyntheticModel.step(0.02, 0.6, 0.4)]
    for i in range(45):
        model = models[i % 3]
        n = int(rng.integers(20, 600))
        recs = gen_population(n, model, int(rng.integers(1 << 30)))
        u, adm = as_arrays(recs)
        stats_ = GridStats(u, adm)
        for delta in (0.05, 0.1):
            curve = build_curve(recs, delta, method)
            for alpha in (0.05, 0.1, 0.25):
                assert stats_.largest_threshold(alpha, delta, method) == select_threshold(curve, alpha)


# -- Bernoulli structure of selected failures ----------------------------------


def test_selected_failures_are_iid_bernoulli():
    model = SyntheticModel.linear()
    t = 0.5
    first, second = [], []
    for rep in range(3000):
        u, adm = _draw(40, model, substream(123, 99, rep))
        fails = 1 - adm[u <= t]
        if fails.size >= 2:
            first.append(fails[0])
            second.append(fails[1])
    first, second = np.array(first), np.array(second)
    table = np.array([[np.sum((first == i) & (second == j)) for j in (0, 1)] for i in (0, 1)])
    _, p_indep, _, _ = stats.chi2_contingency(table, correction=False)
    assert p_indep > 0.01
    # marginal rate matches the conditional mean t / 2
    both = np.concatenate([first, second])
    observed = np.array([np.sum(both == 0), np.sum(both == 1)])
    expected = both.size * np.array([1 - t / 2, t / 2])
    assert stats.chisquare(observed, expected).pvalue > 0.01
