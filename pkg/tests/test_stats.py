import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cheq.exceptions import ConstantInput, TooFewObservations, ZeroVariance
from cheq.stats import across_district_ci, correlation_from_rho, rankdata, spearman, welch_t


def _pearson(a, b):
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def _rank_oracle(x):
    # average rank by counting, no sorting
    return [sum(v < xi for v in x) + (sum(v == xi for v in x) + 1) / 2 for xi in x]


def test_rankdata_average_ties():
    assert list(rankdata([10, 20, 20, 5])) == [2.0, 3.5, 3.5, 1.0]


def test_spearman_monotone_gives_one():
    r = spearman(np.arange(10), np.arange(10) ** 3)
    assert r.rho == 1.0
    assert r.p_two_sided == 0.0


def test_spearman_t_approximation_n19():
    r = correlation_from_rho(0.413, 19)
    assert abs(r.t_stat - 1.870) < 1e-3
    assert abs(r.p_two_sided - 0.079) < 1e-3


def test_spearman_rank_then_pearson_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = np.round(rng.gamma(2, 3, 19), 1)
        y = np.round(x + rng.normal(0, 2, 19), 0)
        assert abs(spearman(x, y).rho - _pearson(_rank_oracle(list(x)), _rank_oracle(list(y)))) < 1e-12


def test_spearman_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=25), rng.normal(size=25)
    ours = spearman(x, y)
    theirs = scipy_stats.spearmanr(x, y)
    assert abs(ours.rho - theirs.statistic) < 1e-12
    assert abs(ours.p_two_sided - theirs.pvalue) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=3, max_size=30, unique=True), st.integers(0, 2**32 - 1))
def test_spearman_monotone_transform_invariance(x, seed):
    y = np.random.default_rng(seed).permutation(len(x)).astype(float)
    logx, cubex = np.log(x), np.asarray(x) ** 3
    # a transform that is monotone in exact arithmetic can still collapse floats
    assume(len(set(logx)) == len(x) and len(set(cubex)) == len(x))
    base = spearman(x, y)
    assert spearman(logx, y) == base
    assert spearman(cubex, np.exp(y / 10)) == base


def test_spearman_errors():
    with pytest.raises(ConstantInput):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(TooFewObservations):
        spearman([1, 2], [2, 1])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2])


def test_welch_identical_samples():
    r = welch_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.t == 0.0 and r.p == 1.0


def test_welch_near_constant_limit():
    eps = 1e-9
    r = welch_t([0, eps, 0, -eps], [1, 1 + eps, 1, 1 - eps])
    assert abs(r.t) > 1e8
    assert r.p < 1e-12


def test_welch_textbook_oracle():
    rng = np.random.default_rng(3)
    x, y = rng.normal(0.4, 0.1, 19), rng.normal(0.42, 0.15, 19)
    mx, my = sum(x) / 19, sum(y) / 19
    sx = sum((v - mx) ** 2 for v in x) / 18
    sy = sum((v - my) ** 2 for v in y) / 18
    t = (mx - my) / math.sqrt(sx / 19 + sy / 19)
    df = (sx / 19 + sy / 19) ** 2 / ((sx / 19) ** 2 / 18 + (sy / 19) ** 2 / 18)
    r = welch_t(x, y)
    assert abs(r.t - t) < 1e-10
    assert abs(r.df - df) < 1e-10
    scipy_stats = pytest.importorskip("scipy.stats")
    assert abs(r.p - scipy_stats.ttest_ind(x, y, equal_var=False).pvalue) < 1e-10


def test_welch_antisymmetric():
    x, y = [1.0, 2.5, 3.1, 0.2], [2.0, 2.2, 4.0]
    a, b = welch_t(x, y), welch_t(y, x)
    assert a.t == -b.t and a.p == b.p and a.df == b.df


def test_welch_errors():
    with pytest.raises(ZeroVariance):
        welch_t([1, 1], [2, 2])
    with pytest.raises(TooFewObservations):
        welch_t([1], [2, 3])


def test_ci_equal_values():
    mean, lo, hi = across_district_ci([5.0] * 19)
    assert mean == lo == hi == 5.0


def test_ci_anchor():
    # 19 values with mean 17.2 and sd 9.48
    z = np.random.default_rng(0).normal(size=19)
    z = (z - z.mean()) / z.std(ddof=1)
    mean, lo, hi = across_district_ci(17.2 + 9.48 * z, 0.99)
    assert abs(mean - 17.2) < 1e-12
    assert round(lo, 1) == 11.6 and round(hi, 1) == 22.8


def test_ci_widens_with_level():
    v = [1.0, 4.0, 2.0, 8.0]
    widths = [across_district_ci(v, lvl)[2] - across_district_ci(v, lvl)[1] for lvl in (0.5, 0.8, 0.9, 0.95, 0.99)]
    assert widths == sorted(widths)
