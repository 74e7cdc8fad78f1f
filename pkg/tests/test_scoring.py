import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from smislab.exceptions import DegenerateTestError, DegreesOfFreedomError, EmptyGroupError
from smislab.scoring import (ScoreTable, compute_smis, compute_smisw, score_history, smis_score_func,
                             smis_test, smisw_score_func, smisw_test)

from conftest import make_panel


def z_oracle(s1, n1, s2, n2):
    p1, p2 = Fraction(s1, n1), Fraction(s2, n2)
    p = Fraction(s1 + s2, n1 + n2)
    z = float(p1 - p2) / math.sqrt(float(p * (1 - p) * (Fraction(1, n1) + Fraction(1, n2))))
    return z, math.erfc(abs(z) / math.sqrt(2))


def test_hand_enumeration(hand_panel):
    df = compute_smis(hand_panel, "2020Q1")
    assert df.loc["A", "smis"] == pytest.approx(7 / 15, abs=1e-15)
    assert (df.loc["A", "n1"], df.loc["A", "n2"], df.loc["A", "s1"], df.loc["A", "s2"]) == (3, 5, 2, 1)
    assert df.loc["B", "smis"] == pytest.approx(1 / 3 - 1 / 5)
    assert df.loc["C", "smis"] == pytest.approx(-3 / 5)
    z, p = z_oracle(2, 3, 1, 5)
    assert df.loc["A", "z"] == pytest.approx(z, rel=1e-12)
    assert df.loc["A", "p_value"] == pytest.approx(p, rel=1e-12)
    # the unlabeled fund's holding never counts
    assert set(df.index) == {"A", "B", "C"}


def test_weight_variant_hand(hand_panel):
    df = compute_smisw(hand_panel, "2020Q1")
    assert df.loc["A", "w9"] == pytest.approx((0.5 + 0.3) / 3)
    assert df.loc["A", "w_other"] == pytest.approx(0.2 / 5)
    t = stats.ttest_ind([0.5, 0.3, 0.0], [0.2, 0, 0, 0, 0], equal_var=True)
    assert df.loc["A", "t"] == pytest.approx(t.statistic, rel=1e-12)
    assert df.loc["A", "p_value_w"] == pytest.approx(t.pvalue, rel=1e-12)
    assert df.loc["A", "dof"] == 6


@pytest.mark.parametrize("s1,n1,s2,n2", [(3, 10, 1, 10), (7, 9, 2, 30), (0, 5, 4, 6), (50, 200, 60, 200)])
def test_z_matches_oracle(s1, n1, s2, n2):
    z, p = smis_test(s1, n1, s2, n2)
    zo, po = z_oracle(s1, n1, s2, n2)
    assert z == pytest.approx(zo, rel=1e-12)
    assert p == pytest.approx(po, rel=1e-10)


def test_degenerate_tests():
    with pytest.raises(DegenerateTestError):
        smis_test(0, 5, 0, 7)
    with pytest.raises(DegenerateTestError):
        smis_test(5, 5, 7, 7)
    # one fund per group with zero pooled variance has no defined statistic
    with pytest.raises(DegenerateTestError):
        smisw_test([0.05], [0.0, 0.0])
    with pytest.raises(DegreesOfFreedomError):
        smisw_test([0.05], [0.0])


def test_single_fund_group_with_spread():
    t, dof, p = smisw_test([0.05], [0.0, 0.02])
    ref = stats.ttest_ind([0.05], [0.0, 0.02], equal_var=True)
    assert dof == 1
    assert t == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)


def test_pooled_degenerate_asset_keeps_score():
    panel = make_panel([("F", "2020Q1", "A", 0.5), ("G", "2020Q1", "A", 0.5), ("G", "2020Q1", "B", 0.1)],
                       {"F": "9", "G": "8"})
    df = compute_smis(panel, "2020Q1")
    assert df.loc["A", "smis"] == 0 and np.isnan(df.loc["A", "z"]) and not df.loc["A", "test_available"]


def test_empty_group(hand_panel):
    only9 = make_panel([("F", "2020Q1", "A", 0.5)], {"F": "9"})
    with pytest.raises(EmptyGroupError, match="Art6/Art8"):
        compute_smis(only9, "2020Q1")
    with pytest.raises(EmptyGroupError):
        compute_smis(hand_panel, "2019Q4")


def test_score_history_records_gaps(hand_panel, tmp_path):
    table = score_history(hand_panel, ["2019Q4", "2020Q1"])
    assert list(table.gaps) == [table.quarters[0] - 1]
    path = table.to_csv(tmp_path / "s.csv")
    back = ScoreTable.read_csv(path)
    assert back.frame["smis"].tolist() == pytest.approx(table.frame["smis"].tolist())
    assert str(back.quarters[0]) == "2020Q1"


def test_score_funcs_match_panel(hand_panel):
    W = hand_panel.weight_matrix("2020Q1")
    labels = hand_panel.funds.loc[W.index, "sfdr_label"]
    keep = (labels != "NA").to_numpy()
    X, y = W.to_numpy()[keep], (labels == "9").to_numpy()[keep]
    s, p = smis_score_func(X, y)
    df = compute_smis(hand_panel, "2020Q1")
    np.testing.assert_allclose(s, df["smis"].reindex(W.columns).to_numpy())
    sw, _ = smisw_score_func(X, y)
    np.testing.assert_allclose(sw, compute_smisw(hand_panel, "2020Q1")["smisw"].reindex(W.columns).to_numpy())


def test_sklearn_selectkbest_compatible(rng):
    from sklearn.feature_selection import SelectKBest
    X = rng.random((40, 6)) * (rng.random((40, 6)) < 0.4)
    y = np.arange(40) < 15
    sel = SelectKBest(smis_score_func, k=2).fit(X, y)
    assert sel.get_support().sum() == 2


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 8), st.randoms(use_true_random=False))
def test_bounds_and_antisymmetry(n9, no, n_assets, r):
    held9 = np.array([[r.random() < 0.5 for _ in range(n_assets)] for _ in range(n9)], dtype=float)
    heldo = np.array([[r.random() < 0.5 for _ in range(n_assets)] for _ in range(no)], dtype=float)
    X = np.vstack((held9, heldo))
    y = np.array([True] * n9 + [False] * no)
    s, _ = smis_score_func(X, y)
    assert np.all((s >= -1) & (s <= 1))
    s_swapped, _ = smis_score_func(X, ~y)
    assert np.array_equal(s_swapped, -s)
