import itertools
import math

import mpmath
import numpy as np
import pytest
import scipy.stats as ss
from hypothesis import assume, given, strategies as st

from tanglepick.pick import PickRecord, Protocol
from tanglepick.stats import (
    SingularDesign, TestKind, betainc, dominance_analysis, f_cdf, f_sf, f_test_variance, gaussian_loglik,
    mcfadden_r2, normalized_std, relative_importance, t_cdf, t_sf2, t_test_mean,
)

# ---------------------------------------------------------------------------
# distribution functions against independent references
# ---------------------------------------------------------------------------

DFS = [0.5, 1, 2, 3, 5, 9, 17.5, 30, 120, 1000]


@pytest.mark.parametrize("df", DFS)
def test_t_cdf_matches_scipy(df):
    for t in np.linspace(-12, 12, 97):
        assert t_cdf(float(t), df) == pytest.approx(ss.t.cdf(t, df), abs=1e-9)
        assert t_sf2(float(t), df) == pytest.approx(2 * ss.t.sf(abs(t), df), abs=1e-9)


@pytest.mark.parametrize("d1,d2", list(itertools.product([1, 2, 4, 9, 25, 99], [1, 3, 8, 9, 40, 250])))
def test_f_cdf_matches_scipy(d1, d2):
    for x in np.concatenate([np.linspace(0.01, 5, 40), [7.5, 12, 40, 200]]):
        assert f_cdf(float(x), d1, d2) == pytest.approx(ss.f.cdf(x, d1, d2), abs=1e-9)


@given(st.floats(0.2, 80), st.floats(0.2, 80), st.floats(0.0, 1.0))
def test_betainc_matches_mpmath(a, b, x):
    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert betainc(a, b, x) == pytest.approx(ref, abs=1e-9)


@given(st.floats(-50, 50), st.floats(0.5, 500))
def test_t_cdf_matches_mpmath_series(t, df):
    # reference through the hypergeometric representation, 30 digits
    with mpmath.workdps(30):
        x = mpmath.mpf(t)
        v = mpmath.mpf(df)
        ref = 0.5 + x * mpmath.gamma((v + 1) / 2) / (mpmath.sqrt(mpmath.pi * v) * mpmath.gamma(v / 2)) * \
            mpmath.hyp2f1(0.5, (v + 1) / 2, 1.5, -x * x / v)
    assert t_cdf(t, df) == pytest.approx(float(ref), abs=1e-6)


def test_distribution_edges():
    assert f_sf(0.0, 3, 4) == 1.0
    assert f_sf(math.inf, 3, 4) == 0.0
    assert t_sf2(math.inf, 3) == 0.0
    assert t_sf2(0.0, 3) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        betainc(1, 1, 1.5)
    with pytest.raises(ValueError):
        t_sf2(1.0, 0)


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------


def test_welch_t_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.normal(10, 3, rng.integers(3, 40))
        b = rng.normal(11, 1, rng.integers(3, 40))
        r = t_test_mean(a, b)
        ref = ss.ttest_ind(a, b, equal_var=False)
        assert r.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-6)
        assert r.kind is TestKind.T_TEST_MEAN
        assert isinstance(r.p_value, float)


def test_f_test_matches_scipy_two_sided():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a = rng.normal(0, 1, rng.integers(3, 30))
        b = rng.normal(0, 2, rng.integers(3, 30))
        r = f_test_variance(a, b)
        va, vb = a.var(ddof=1), b.var(ddof=1)
        if va >= vb:
            ref = min(1.0, 2 * ss.f.sf(va / vb, a.size - 1, b.size - 1))
        else:
            ref = min(1.0, 2 * ss.f.sf(vb / va, b.size - 1, a.size - 1))
        assert r.statistic >= 1.0
        assert r.p_value == pytest.approx(ref, abs=1e-6)


samples = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30)


@given(samples, samples)
def test_t_test_p_in_unit_interval_and_swap_invariant(a, b):
    assume(np.var(a) > 1e-6 or np.var(b) > 1e-6)
    r1, r2 = t_test_mean(a, b), t_test_mean(b, a)
    assert 0.0 <= r1.p_value <= 1.0
    assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)
    assert r1.statistic == pytest.approx(-r2.statistic)


@given(samples, samples)
def test_f_test_p_in_unit_interval_and_swap_invariant(a, b):
    assume(np.var(a) > 1e-6 and np.var(b) > 1e-6)
    r1, r2 = f_test_variance(a, b), f_test_variance(b, a)
    assert 0.0 <= r1.p_value <= 1.0
    assert r1.p_value == r2.p_value


def test_tests_reject_degenerate_samples():
    with pytest.raises(ValueError):
        t_test_mean([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        t_test_mean([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(ValueError):
        f_test_variance([1.0, 1.0], [1.0, 2.0])


def test_csv_line_and_significance():
    r = t_test_mean([1, 2, 3, 4, 5.0], [50, 51, 52, 53, 54.0])
    assert r.significant
    kind, stat, p, sig = r.csv_line().split(",")
    assert kind == "TTestMean" and float(stat) == r.statistic and float(p) == r.p_value and sig == "1"


@pytest.mark.parametrize("x,expected", [([1, 2, 3], 1 / 2), ([8, 12], math.sqrt(8) / 10), ([2, 2, 2, 4], 1 / 2.5),
                                        ([10, 20, 30, 40], math.sqrt(500 / 3) / 25), ([-1, -3], math.sqrt(2) / -2)])
def test_normalized_std_hand_values(x, expected):
    assert normalized_std(x) == pytest.approx(expected, rel=1e-9)


def test_normalized_std_errors():
    with pytest.raises(ValueError):
        normalized_std([3.0])
    with pytest.raises(ValueError):
        normalized_std([-1.0, 1.0])


# ---------------------------------------------------------------------------
# dominance
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("full,null,expected", [(-10, -20, 0.5), (-90, -100, 0.1), (-100, -100, 0.0),
                                                (-1, -4, 0.75), (3, -6, 1.5)])
def test_mcfadden_hand_values(full, null, expected):
    assert mcfadden_r2(full, null) == pytest.approx(expected, rel=1e-9)


def test_mcfadden_rejects_zero_null():
    with pytest.raises(ValueError):
        mcfadden_r2(-1.0, 0.0)


def test_relative_importance_of_fixture_ids_sums_short_of_hundred():
    pct = relative_importance({"length": 0.591, "thickness": 0.130, "spikes": 0.072}, 0.794)
    # the rounded dominances add up to 0.793 against a full R^2 of 0.794
    assert sum(pct.values()) == pytest.approx(100 * 0.793 / 0.794, rel=1e-12)
    assert 100.0 - sum(pct.values()) == pytest.approx(0.12594, abs=1e-5)


def brute_loglik(X, y):
    """OLS by normal equations and a Gaussian log-density summed at the ML scale."""
    w = np.linalg.solve(X.T @ X, X.T @ y)
    r = y - X @ w
    return float(np.sum(ss.norm.logpdf(r, scale=math.sqrt(np.mean(r * r)))))


def test_dominance_matches_brute_force():
    rng = np.random.default_rng(9)
    n = 120
    cols = {"length": rng.uniform(10, 120, n), "thickness": rng.uniform(0.2, 1, n), "spikes": rng.integers(0, 3, n)}
    y = 0.4 * cols["length"] - 30 * cols["thickness"] + 5 * cols["spikes"] + rng.normal(0, 8, n)
    rep = dominance_analysis({**cols, "picked_units": y}, ["length", "thickness", "spikes"])
    ones = np.ones((n, 1))
    ll0 = brute_loglik(ones, y)
    names = list(cols)
    for k in range(1, 4):
        for sub in itertools.combinations(names, k):
            X = np.hstack([ones] + [cols[p][:, None].astype(float) for p in sub])
            assert rep.subset_r2[frozenset(sub)] == pytest.approx(1 - brute_loglik(X, y) / ll0, rel=1e-9)
    for p in names:
        rest = [q for q in names if q != p]
        X = np.hstack([ones] + [cols[q][:, None].astype(float) for q in rest])
        assert rep.interactional_dominance[p] == pytest.approx(rep.full_r2 - (1 - brute_loglik(X, y) / ll0),
                                                                rel=1e-8, abs=1e-12)
    assert rep.relative_importance_pct["length"] == pytest.approx(100 * rep.interactional_dominance["length"]
                                                                   / rep.full_r2)


@given(st.permutations(["length", "thickness", "spikes"]))
def test_dominance_invariant_to_predictor_order(order):
    rng = np.random.default_rng(11)
    n = 60
    data = {"length": rng.uniform(0, 1, n), "thickness": rng.uniform(0, 1, n), "spikes": rng.uniform(0, 1, n)}
    data["picked_units"] = data["length"] + 2 * data["spikes"] + rng.normal(0, 0.3, n)
    ref = dominance_analysis(data, ["length", "thickness", "spikes"])
    rep = dominance_analysis(data, order)
    for p in order:
        assert rep.interactional_dominance[p] == pytest.approx(ref.interactional_dominance[p], rel=1e-9, abs=1e-12)


def test_dominance_on_pick_records_and_csv():
    rng = np.random.default_rng(2)
    recs = [PickRecord(Protocol.MAGNET, 100, t, l, s, i, 0, 0.1, 0.01, int(rng.integers(0, 100)))
            for t in (0.2, 0.4, 1.0) for l in (12.0, 60.0, 120.0) for s in (0, 1, 2) for i in range(3)]
    rep = dominance_analysis(recs, ["length", "thickness", "spikes"])
    text = rep.csv()
    assert text.startswith("subset_mask,r2\n")
    masks = [int(line.split(",")[0]) for line in text.split("\n\n")[0].splitlines()[1:]]
    assert masks == list(range(1, 8))


def test_dominance_reports_singular_subsets():
    n = 30
    x = np.arange(n, dtype=float)
    data = {"a": x, "b": 2 * x, "picked_units": x + np.sin(x)}
    rep = dominance_analysis(data, ["a", "b"])
    assert any(s == frozenset({"a", "b"}) for s, _ in rep.singular)
    assert math.isnan(rep.full_r2)


def test_gaussian_loglik_rejects_rank_deficient_design():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(SingularDesign):
        gaussian_loglik(X, np.arange(5.0))
