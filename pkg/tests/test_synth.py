import dataclasses

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from smislab.data import load_dataset
from smislab.scoring import compute_smis
from smislab.synth import SynthConfig, generate, write_dataset

TINY = SynthConfig(n_assets=80, n_art9=15, n_art8=30, n_art6=10, n_quarters=4, rng_seed=5)


def mean_smis_by_asset(data):
    frames = [compute_smis(data.panel, q)["smis"] for q in data.panel.quarters]
    return pd.concat(frames, axis=1).mean(axis=1)


def test_deterministic():
    a, b = generate(TINY), generate(TINY)
    pd.testing.assert_frame_equal(a.panel.holdings, b.panel.holdings)
    pd.testing.assert_frame_equal(a.prices, b.prices)
    pd.testing.assert_frame_equal(a.esg, b.esg)
    c = generate(dataclasses.replace(TINY, rng_seed=6))
    assert not a.prices.equals(c.prices)


def test_shapes_and_validity():
    d = generate(TINY)
    assert len(d.panel.quarters) == 4
    assert d.panel.funds["sfdr_label"].value_counts().sum() == 15 + 30 + 10 + TINY.n_unlabeled
    totals = d.panel.holdings.groupby(["fund_id", "quarter"])["weight"].sum()
    assert (totals <= 1 + 1e-9).all() and (totals >= 1 - TINY.max_cash - 1e-9).all()
    assert d.prices.index[0] < d.panel.quarters[0].start_time
    assert d.prices.notna().any().all()
    assert set(d.ground_truth["asset_id"]) == set(d.prices.columns)


def test_csv_roundtrip(tmp_path):
    d = generate(TINY)
    write_dataset(d, tmp_path)
    back = load_dataset(tmp_path, impute=False, quarters=[])
    pd.testing.assert_frame_equal(back.prices, d.prices, check_freq=False, check_names=False)
    assert back.panel.holdings["weight"].sum() == pytest.approx(d.panel.holdings["weight"].sum(), rel=1e-14)


def test_no_link_gives_no_signal():
    cfg = SynthConfig(n_assets=300, n_art9=60, n_art8=120, n_art6=40, n_quarters=6, hold_link=0.0, rng_seed=2)
    smis = mean_smis_by_asset(generate(cfg))
    assert abs(smis.mean()) < 0.01
    s = generate(cfg).ground_truth.set_index("asset_id")["s"].reindex(smis.index)
    assert abs(stats.spearmanr(s, smis)[0]) < 0.15


def test_top_decile_monotone_in_link():
    means = []
    for b in (0.0, 0.5, 1.0, 2.0, 4.0):
        d = generate(dataclasses.replace(TINY, hold_link=b))
        s = d.ground_truth.set_index("asset_id")["s"]
        top = s[s >= s.quantile(0.9)].index
        means.append(mean_smis_by_asset(d).reindex(top).mean())
    assert np.all(np.diff(means) > 0)


def test_strong_link_recovers_ranking():
    cfg = SynthConfig(n_assets=200, n_art9=200, n_art8=200, n_art6=50, n_quarters=4, hold_link=4.0, rng_seed=4)
    d = generate(cfg)
    smis = mean_smis_by_asset(d)
    s = d.ground_truth.set_index("asset_id")["s"].reindex(smis.index)
    assert stats.spearmanr(s, smis)[0] > 0.9


def test_config_checks():
    with pytest.raises(ValueError):
        SynthConfig(n_assets=0)
    with pytest.raises(ValueError):
        SynthConfig(esg_correlation=1.5)
    with pytest.raises(ValueError):
        SynthConfig(max_cash=1.0)
