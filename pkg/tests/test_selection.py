import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smislab.exceptions import InfeasibleCornerError, InsufficientUniverseError
from smislab.selection import (Corner, SelectionResult, StrategyKind, StrategySpec, build_selection,
                               quadrant_select, rank_select)

from oracles import corner_oracle


def cs(esg, smis):
    return pd.DataFrame({"esg": esg, "smis": smis})


def test_rank_select_examples():
    s = {"A": 3, "B": 2, "C": 1, "D": 0}
    assert rank_select(s, 2, "top") == {"A", "B"}
    assert rank_select(s, 2, "bottom") == {"C", "D"}
    assert rank_select({"B": 1, "A": 1, "C": 0}, 1, "top") == {"A"}
    with pytest.raises(InsufficientUniverseError):
        rank_select({"A": 1, "B": np.nan, "C": 2}, 2)


def test_spec_invariants():
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.RANDOM, 5)
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.TOP_ESG, 5, seed=1)
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.TOP_ESG, 0)
    with pytest.raises(ValueError):
        SelectionResult({"A"}, {"A"})


def test_top_smis_example():
    res = build_selection(StrategySpec("smis", 1), cs({"A": 1, "B": 2, "C": 3, "D": 4},
                                                      {"A": 0.3, "B": 0.1, "C": -0.2, "D": -0.4}))
    assert res.over == {"A"} and res.under == {"D"}


def test_diagonal_lower_left():
    e = {"a1": 1, "a2": 2, "a3": 3, "a4": 4}
    assert quadrant_select(e, e, 1, Corner.LOWER_LEFT) == {"a1"}
    assert quadrant_select(e, e, 1, Corner.UPPER_RIGHT) == {"a4"}


def test_anticorrelated_upper_left():
    esg = {"a": 1, "b": 2, "c": 3, "d": 4}
    smis = {"a": 4, "b": 3, "c": 2, "d": 1}
    assert quadrant_select(esg, smis, 1, Corner.UPPER_LEFT) == {"d"}
    assert quadrant_select(esg, smis, 1, Corner.LOWER_RIGHT) == {"a"}


def test_infeasible_corner_reports_max():
    # a fully tied score leaves no strict lower tail
    esg = {f"x{i}": 5.0 for i in range(10)}
    smis = {f"x{i}": float(i) for i in range(10)}
    with pytest.raises(InfeasibleCornerError) as info:
        quadrant_select(esg, smis, 3, Corner.UPPER_LEFT)
    assert info.value.max_count == 0
    # two tied blocks cap the corner at 4 members
    esg = {f"x{i}": float(i < 5) for i in range(10)}
    with pytest.raises(InfeasibleCornerError) as info:
        quadrant_select(esg, smis, 5, Corner.LOWER_LEFT)
    assert info.value.max_count == 4


def test_mirrored_corners(rng):
    ids = [f"s{i:02d}" for i in range(60)]
    frame = cs(dict(zip(ids, rng.normal(size=60))), dict(zip(ids, rng.normal(size=60))))
    tb = build_selection(StrategySpec("tb", 5), frame)
    bt = build_selection(StrategySpec("bt", 5), frame)
    assert tb.over == bt.under and tb.under == bt.over


def test_random_reproducible_and_disjoint(rng):
    ids = [f"s{i:02d}" for i in range(30)]
    frame = cs(dict(zip(ids, rng.normal(size=30))), dict(zip(ids, rng.normal(size=30))))
    a = build_selection(StrategySpec("random", 10, seed=3), frame)
    b = build_selection(StrategySpec("random", 10, seed=3), frame)
    assert a == b and not (a.over & a.under) and a.k == 10


def test_coinciding_ranks_make_three_strategies_agree(rng):
    ids = [f"s{i:03d}" for i in range(300)]
    x = rng.normal(size=300)
    frame = cs(dict(zip(ids, x)), dict(zip(ids, np.exp(x))))
    s1 = build_selection(StrategySpec("esg", 20), frame)
    s2 = build_selection(StrategySpec("smis", 20), frame)
    s3 = build_selection(StrategySpec("tt", 20), frame)
    assert s1 == s2 == s3


def test_selection_csv_layout():
    res = SelectionResult({"B"}, {"A"})
    df = res.to_frame("2020Q1", "tt")
    assert list(df.columns) == ["quarter", "strategy", "side", "asset_id"]
    assert df.values.tolist() == [["2020Q1", "tt", "over", "B"], ["2020Q1", "tt", "under", "A"]]


@settings(max_examples=150, deadline=None)
@given(st.integers(4, 8), st.data())
def test_matches_brute_force(n, data):
    vals = st.integers(0, 6)
    esg = {f"a{i}": data.draw(vals) for i in range(n)}
    smis = {f"a{i}": data.draw(vals) for i in range(n)}
    k = data.draw(st.integers(1, n // 2))
    corner = data.draw(st.sampled_from(list(Corner)))
    expected = corner_oracle(esg, smis, k, *corner.value)
    if expected is None:
        with pytest.raises(InfeasibleCornerError):
            quadrant_select(esg, smis, k, corner)
    else:
        assert quadrant_select(esg, smis, k, corner) == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-60, 60), min_size=6, max_size=30, unique=True), st.data())
def test_lower_left_rank_invariant(xs, data):
    xs = [x / 10 for x in xs]
    n = len(xs)
    ys = data.draw(st.permutations(xs))
    ids = [f"a{i:02d}" for i in range(n)]
    esg, smis = dict(zip(ids, xs)), dict(zip(ids, ys))
    k = data.draw(st.integers(1, n // 2))
    try:
        base = quadrant_select(esg, smis, k, Corner.LOWER_LEFT)
    except InfeasibleCornerError:
        return
    t_esg = {i: np.exp(v) for i, v in esg.items()}
    t_smis = {i: v ** 3 + 2 for i, v in smis.items()}
    assert quadrant_select(t_esg, t_smis, k, Corner.LOWER_LEFT) == base
    assert len(base) == k
