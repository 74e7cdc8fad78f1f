import dataclasses
import json
import warnings

import numpy as np
import pandas as pd
import pytest

from smislab import backtest as bt
from smislab.backtest import (BacktestConfig, build_benchmark, flag_metrics, random_validation, run_backtest,
                              run_fixed_tilt, run_opt_tilt, simulate_drift, tilt_weights)
from smislab.data import AlignedDataset, HoldingsPanel
from smislab.exceptions import EmptyUniverseError, InsufficientUniverseError
from smislab.optimize import OptimalPortfolio, SolverStatus
from smislab.selection import SelectionResult

END = "2011-12-31"


def cfg(**kw):
    base = dict(start="2010-04-01", end=END, k=10, n_random=0)
    base.update(kw)
    return BacktestConfig(**base)


def tiny_dataset(shares=None):
    dates = pd.bdate_range("2020-01-01", periods=5)
    prices = pd.DataFrame({"A": 10.0, "B": 10.0, "C": 30.0, "D": 10.0}, index=dates)
    return AlignedDataset(HoldingsPanel(pd.DataFrame(columns=["fund_id", "quarter", "asset_id", "weight"]),
                                        pd.DataFrame()), prices, pd.DataFrame(), shares)


def test_benchmark_examples():
    ds = tiny_dataset(pd.Series({"A": 1.0, "B": 1.0, "C": 1.0, "D": 1.0}))
    d = ds.prices.index[0]
    w = build_benchmark(ds, ["A", "B", "D"], d)
    assert w.tolist() == pytest.approx([1 / 3] * 3)
    w = build_benchmark(ds, ["A", "C"], d)
    assert w.tolist() == pytest.approx([0.25, 0.75])
    eq = build_benchmark(tiny_dataset(), list("ABCD"), d)
    assert eq.tolist() == [0.25] * 4
    top2 = build_benchmark(ds, list("ABCD"), d, size=2)
    assert len(top2) == 2 and "C" in top2.index
    with pytest.raises(EmptyUniverseError):
        build_benchmark(ds, ["A"], d)


def test_tilt_examples():
    bmk = pd.Series(0.25, index=list("ABCD"))
    w = tilt_weights(bmk, SelectionResult({"A"}, {"B"}), 0.10, 1)
    assert w.tolist() == pytest.approx([0.35, 0.15, 0.25, 0.25])
    assert w.sum() == pytest.approx(1.0)
    bmk = pd.Series({"A": 0.0005, "B": 0.9995})
    w = tilt_weights(bmk, SelectionResult({"B"}, {"A"}), 0.10, 100)
    assert w["A"] == pytest.approx(-0.0005)
    assert tilt_weights(bmk, SelectionResult({"B"}, {"A"}), 0.0, 100).equals(bmk.rename("weight"))
    with pytest.raises(ValueError):
        tilt_weights(bmk, SelectionResult({"B"}, {"A"}), 0.1, 0)


def test_drift_simulation():
    w = np.array([0.5, 0.5])
    growth = np.cumprod(1 + np.array([[0.1, 0.0], [0.0, -0.5]]), axis=0)
    r, end = simulate_drift(w, growth)
    assert r.tolist() == pytest.approx([0.05, (0.55 + 0.25) / 1.05 - 1])
    assert end.sum() == pytest.approx(1.0)
    assert end.tolist() == pytest.approx([0.55 / 0.8, 0.25 / 0.8])


def test_config_checks():
    with pytest.raises(ValueError):
        BacktestConfig(overlay=1.0)
    with pytest.raises(ValueError):
        BacktestConfig(calibration_days=1)
    with pytest.raises(ValueError):
        BacktestConfig(ci_level=1.0)
    with pytest.raises(ValueError):
        BacktestConfig(start="2020-01-01", end="2019-01-01")
    c = cfg(engine="cvar")
    assert BacktestConfig.from_dict(c.to_dict()) == c


def test_overlay_zero_is_benchmark(small_synth):
    rep = run_backtest(cfg(overlay=0.0), small_synth.aligned())
    assert np.array_equal(rep.returns.to_numpy(), rep.benchmark_returns.to_numpy())
    assert rep.panel == rep.benchmark_panel


def test_quarter_timing(small_synth):
    rep = run_fixed_tilt(cfg(end="2010-06-30"), small_synth.aligned())
    assert len(rep.rebalances) == 1
    prices = small_synth.prices
    d0 = prices.index[prices.index >= "2010-04-01"][0]
    assert rep.rebalances[0].date == d0
    assert rep.returns.index[0] > d0
    assert 55 <= len(rep.returns) <= 66


def test_uses_previous_quarter_holdings(small_synth):
    ds = small_synth.aligned()
    base = run_backtest(cfg(strategy="smis"), ds)
    h = small_synth.panel.holdings.copy()
    q = pd.Period("2010Q3", freq="Q-DEC")
    h = h[h["quarter"] != q]  # drop every snapshot of 2010Q3
    altered = dataclasses.replace(ds, panel=HoldingsPanel(h, small_synth.panel.funds))
    rep = run_backtest(cfg(strategy="smis"), altered)
    sel_base = dict(base.selections)
    sel_alt = dict(rep.selections)
    assert sel_base[q] == sel_alt[q]
    assert (q + 1) not in sel_alt  # no holdings means no eligible universe
    assert any(e["event"] == "skipped" and e["quarter"] == str(q + 1) for e in rep.diagnostics)


def test_planted_signal_small(small_synth):
    rep = run_backtest(cfg(strategy="smis"), small_synth.aligned())
    assert rep.panel.mean_ann > rep.benchmark_panel.mean_ann
    assert rep.panel.avg_turnover > rep.benchmark_panel.avg_turnover


def test_hard_fail_and_fallback(small_synth):
    with pytest.raises(InsufficientUniverseError):
        run_backtest(cfg(k=500, hard_fail=True), small_synth.aligned())
    rep = run_backtest(cfg(k=500), small_synth.aligned())
    assert all(e["event"] == "fallback" for e in rep.diagnostics)
    assert rep.panel.mean_ann == rep.benchmark_panel.mean_ann


def test_opt_engines_respect_bounds(small_synth):
    rep = run_opt_tilt(cfg(engine="mv", calibration_days=120), small_synth.aligned())
    assert all(e["event"] == "rebalance" for e in rep.diagnostics)
    for rb in rep.rebalances:
        assert rb.target.sum() == pytest.approx(1.0, abs=1e-8)
        assert rb.target.min() >= -1e-8
    with pytest.raises(ValueError):
        run_fixed_tilt(cfg(engine="mv"), small_synth.aligned())


def test_infeasible_solver_falls_back(small_synth, monkeypatch):
    def infeasible(*a, **k):
        return OptimalPortfolio(np.array([np.nan]), float("nan"), SolverStatus.INFEASIBLE)
    monkeypatch.setattr(bt, "min_cvar", infeasible)
    rep = run_opt_tilt(cfg(engine="cvar", calibration_days=120), small_synth.aligned())
    assert all(e["event"] == "fallback" for e in rep.diagnostics)
    assert np.array_equal(rep.returns.to_numpy(), rep.benchmark_returns.to_numpy())


def test_flags():
    ci = {"mean": (0.0, 1.0), "VaR": (0.0, 1.0), "turnover": (0, 1)}
    row = {"mean": 2.0, "VaR": 2.0, "turnover": 5.0}
    f = flag_metrics(row, ci)
    assert f["mean"] == "better" and f["VaR"] == "worse" and f["turnover"] == "na"
    f = flag_metrics({"mean": -1.0, "VaR": -1.0, "turnover": 0}, ci)
    assert f["mean"] == "worse" and f["VaR"] == "better"
    assert flag_metrics({"mean": 0.5, "VaR": 0.5, "turnover": 0}, ci)["mean"] == "inside"


def test_validation_degenerate_and_warning(small_synth):
    rep = random_validation(cfg(n_random=0), small_synth.aligned())
    assert set(rep.flags.values()) == {"unavailable"} and rep.ci == {}
    with pytest.warns(RuntimeWarning):
        rep = random_validation(cfg(n_random=5), small_synth.aligned())
    assert len(rep.random_panels) == 5


def test_validation_parallel_matches_serial(small_synth):
    ds = small_synth.aligned()
    a = random_validation(cfg(n_random=24), ds, jobs=1)
    b = random_validation(cfg(n_random=24), ds, jobs=2)
    assert a.random_panels == b.random_panels
    assert a.ci == b.ci


def test_report_files(small_synth, tmp_path):
    rep = random_validation(cfg(n_random=20), small_synth.aligned())
    paths = rep.write(tmp_path)
    report = pd.read_csv(paths["report"])
    assert report["strategy"].tolist() == ["Benchmark", "Top SMIS"]
    assert {"ci_lo_Sharpe", "ci_hi_Sharpe", "flag_Sharpe"} <= set(report.columns)
    w = pd.read_csv(paths["weights"])
    assert list(w.columns) == ["date", "asset_id", "weight"]
    assert w.groupby("date")["weight"].sum().to_numpy() == pytest.approx(1.0)
    events = [json.loads(line) for line in paths["diagnostics"].read_text().splitlines()]
    assert len(events) == len(rep.rebalances)
    sel = pd.read_csv(paths["selection"])
    assert set(sel["side"]) == {"over", "under"}
