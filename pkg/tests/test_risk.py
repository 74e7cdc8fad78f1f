import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smislab.risk import (METRIC_NAMES, Rebalance, cvar_alpha, evar_alpha, expectile, max_drawdown, metric_panel,
                          simple_returns, turnover, type1_quantile, var_alpha)

from oracles import cvar_sorted, expectile_bisect

samples = st.lists(st.floats(-0.5, 0.5, allow_nan=False, allow_subnormal=False), min_size=1, max_size=80)


def test_simple_returns():
    s = pd.Series([100.0, 110.0, 99.0], index=pd.bdate_range("2020-01-01", periods=3))
    r = simple_returns(s)
    assert r.tolist() == pytest.approx([0.1, -0.1])
    assert r.index[0] == s.index[1]


def test_quantile_convention():
    x = np.arange(1, 21, dtype=float)
    assert type1_quantile(x, 0.05) == 1.0
    assert type1_quantile(x, 0.051) == 2.0
    assert type1_quantile(x, 0.0) == 1.0
    assert var_alpha(-x / 100, 0.95) == pytest.approx(0.20)


def test_cvar_small_examples():
    r = np.array([-0.05, -0.01, 0.0, 0.02, 0.03] * 4)
    assert cvar_alpha(r, 0.95) == pytest.approx(0.05)
    assert cvar_alpha(r, 0.80) == pytest.approx(0.05)
    assert cvar_alpha(r, 0.60) == pytest.approx((4 * 0.05 + 4 * 0.01) / 8)


def test_two_point_expectile():
    assert abs(expectile([0.0, 1.0], 0.9) - 0.9) < 1e-10
    assert abs(expectile([0.0, 1.0], 0.25) - 0.25) < 1e-10


def test_drawdown_and_turnover():
    assert max_drawdown([0.1, -0.5, 0.2]) == pytest.approx(0.5)
    assert max_drawdown([0.01, 0.02]) == 0.0
    t = pd.Series({"A": 0.6, "B": 0.4})
    d = pd.Series({"A": 0.5, "C": 0.5})
    assert turnover(t, d) == pytest.approx(0.5 * (0.1 + 0.4 + 0.5))


def test_metric_panel_by_hand():
    dates = pd.bdate_range("2020-01-01", periods=5)
    r = pd.Series([0.01, -0.02, 0.015, 0.0], index=dates[1:])
    t1 = pd.Series({"A": 0.5, "B": 0.5})
    t2 = pd.Series({"A": 0.7, "B": 0.3})
    rebs = [Rebalance(dates[0], t1), Rebalance(dates[2], t2, pd.Series({"A": 0.6, "B": 0.4}))]
    m = metric_panel(r, rebs)
    x = r.to_numpy()
    assert m.mean_ann == pytest.approx(250 * x.mean())
    assert m.std_ann == pytest.approx(np.sqrt(250) * x.std(ddof=1))
    assert m.sharpe == pytest.approx(m.mean_ann / m.std_ann)
    assert m.avg_turnover == pytest.approx(0.1)
    assert m.avg_n_assets == 2 and m.max_weight == 0.7
    assert m.hhi == pytest.approx((0.5 + 0.58) / 2)
    assert list(m.as_row()) == list(METRIC_NAMES)
    with pytest.raises(ValueError):
        metric_panel(r, [Rebalance(dates[1], t1)])


def test_input_validation():
    with pytest.raises(ValueError):
        cvar_alpha([], 0.9)
    with pytest.raises(ValueError):
        var_alpha([0.1, np.nan])
    with pytest.raises(ValueError):
        expectile([1.0], 1.0)


@settings(max_examples=300, deadline=None)
@given(samples, st.floats(0.5, 0.99))
def test_cvar_dominates_var(x, alpha):
    assert cvar_alpha(x, alpha) >= var_alpha(x, alpha) - 1e-15
    assert cvar_alpha(x, alpha) == pytest.approx(cvar_sorted(x, alpha), abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(samples)
def test_evar_at_half_is_minus_mean(x):
    assert abs(evar_alpha(x, 0.5) + np.mean(x)) < 1e-10


@settings(max_examples=300, deadline=None)
@given(samples, st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_expectile_monotone_and_matches_bisection(x, t1, t2):
    lo, hi = sorted((t1, t2))
    assert expectile(x, lo) <= expectile(x, hi) + 1e-12
    assert expectile(x, t1) == pytest.approx(expectile_bisect(x, t1), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(samples, st.floats(0.01, 10))
def test_risk_positive_homogeneity(x, c):
    x = np.asarray(x)
    assert cvar_alpha(c * x, 0.9) == pytest.approx(c * cvar_alpha(x, 0.9), rel=1e-9, abs=1e-14)
    assert evar_alpha(c * x, 0.9) == pytest.approx(c * evar_alpha(x, 0.9), rel=1e-9, abs=1e-14)
