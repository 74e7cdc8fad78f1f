"""Quarterly tilting and optimized-tilting backtests with random-strategy validation.

Timing: quarter ``Q`` is rebalanced at the close of its first trading day
``d0(Q)`` and held, drifting with realized returns, until ``d0(Q+1)``. Scores
use the holdings snapshot of ``Q-1`` and ESG the previous calendar year (with a
one-year fallback), so nothing dated after the rebalance enters a decision.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import check_open_unit, check_positive_int
from .data import AlignedDataset, resolve_universe
from .exceptions import (AssumptionViolatedError, DegreesOfFreedomError, EmptyGroupError,
                         EmptyUniverseError, InfeasibleCornerError, InsufficientUniverseError)
from .optimize import ScenarioSet, bounds_from_sets, max_sharpe, min_cvar, min_evar, min_variance
from .risk import METRIC_NAMES, MetricPanel, Rebalance, metric_panel
from .scoring import compute_smis
from .selection import StrategyKind, StrategySpec, build_selection

logger = logging.getLogger(__name__)

BENCHMARK_SIZE = 600
MIN_RANDOM = 20

# metrics that get a better/worse flag, with the preferred direction
FLAG_DIRECTION = {"mean": 1, "VaR": -1, "EVaR": -1, "CVaR": -1, "std": -1, "Sharpe": 1, "maxDD": -1}


class Engine(str, Enum):
    FIXED_TILT = "tilt"
    OPT_CVAR = "cvar"
    OPT_EVAR = "evar"
    OPT_MV = "mv"
    OPT_MAX_SHARPE = "sharpe"

    @property
    def optimized(self):
        return self is not Engine.FIXED_TILT


@dataclass(frozen=True)
class BacktestConfig:
    start: str = "2010-04-01"
    end: str = "2023-12-31"
    strategy: StrategyKind = StrategyKind.TOP_SMIS
    engine: Engine = Engine.FIXED_TILT
    k: int = 100
    overlay: float = 0.10
    calibration_days: int = 250
    alpha: float = 0.95
    n_random: int = 200
    ci_level: float = 0.90
    rng_seed: int = 0
    benchmark_size: int = BENCHMARK_SIZE
    hard_fail: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", StrategyKind(self.strategy))
        object.__setattr__(self, "engine", Engine(self.engine))
        check_positive_int(self.k, "k")
        # overlay 0 is allowed: it must reproduce the benchmark exactly
        check_open_unit(self.overlay, "overlay", low_closed=True)
        if self.calibration_days < 2:
            raise ValueError("calibration_days must be at least 2")
        check_open_unit(self.alpha, "alpha")
        check_open_unit(self.ci_level, "ci_level")
        if self.n_random < 0:
            raise ValueError("n_random must be non-negative")
        check_positive_int(self.benchmark_size, "benchmark_size")
        if pd.Timestamp(self.start) >= pd.Timestamp(self.end):
            raise ValueError("start must precede end")

    def to_dict(self):
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["engine"] = self.engine.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BacktestReport:
    config: BacktestConfig
    label: str
    panel: MetricPanel
    benchmark_panel: MetricPanel
    returns: pd.Series
    benchmark_returns: pd.Series
    rebalances: list
    diagnostics: list
    ci: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    random_panels: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    contexts: list = field(default_factory=list, repr=False)

    def weights_frame(self) -> pd.DataFrame:
        rows = [(rb.date.strftime("%Y-%m-%d"), a, float(w))
                for rb in self.rebalances for a, w in rb.target.items() if w != 0.0]
        return pd.DataFrame(rows, columns=["date", "asset_id", "weight"])

    def selection_frame(self) -> pd.DataFrame:
        frames = [sel.to_frame(q, self.config.strategy.value) for q, sel in self.selections]
        if not frames:
            return pd.DataFrame(columns=["quarter", "strategy", "side", "asset_id"])
        return pd.concat(frames, ignore_index=True)

    def table(self) -> pd.DataFrame:
        rows = [dict(strategy="Benchmark", **self.benchmark_panel.as_row()),
                dict(strategy=self.label, **self.panel.as_row())]
        df = pd.DataFrame(rows)
        if self.ci or self.flags:
            for m in METRIC_NAMES:
                lo, hi = self.ci.get(m, (np.nan, np.nan))
                df[f"ci_lo_{m}"] = [np.nan, lo]
                df[f"ci_hi_{m}"] = [np.nan, hi]
                df[f"flag_{m}"] = ["", self.flags.get(m, "na")]
        return df

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.csv", "weights": out / "weights.csv",
                 "diagnostics": out / "diagnostics.jsonl", "selection": out / "selection.csv"}
        self.table().to_csv(paths["report"], index=False, float_format="%.12g")
        self.weights_frame().to_csv(paths["weights"], index=False, float_format="%.12g")
        self.selection_frame().to_csv(paths["selection"], index=False)
        with open(paths["diagnostics"], "w") as fh:
            for ev in self.diagnostics:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
        return paths


# ---------------------------------------------------------------------------
# building blocks


def build_benchmark(dataset: AlignedDataset, eligible, date, size=BENCHMARK_SIZE) -> pd.Series:
    """Capitalization-proxy weights (price x shares at ``date``) over the ``size``
    largest eligible assets; equal weights over the first ``size`` ids when the
    dataset has no share counts."""
    ids = sorted(eligible)
    if len(ids) < 2:
        raise EmptyUniverseError(f"benchmark needs at least 2 eligible assets, got {len(ids)}")
    if dataset.shares is None:
        chosen = ids[:size]
        return pd.Series(1.0 / len(chosen), index=chosen, name="weight")
    px = dataset.prices.loc[pd.Timestamp(date), ids]
    cap = (px * dataset.shares.reindex(ids)).dropna()
    cap = cap[cap > 0]
    if len(cap) < 2:
        raise EmptyUniverseError("fewer than 2 eligible assets with a capitalization proxy")
    order = sorted(cap.index, key=lambda a: (-cap[a], a))[:size]
    cap = cap[sorted(order)]
    return (cap / cap.sum()).rename("weight")


def tilt_weights(benchmark_weights: pd.Series, selection, overlay: float, k: int) -> pd.Series:
    """Add ``overlay/k`` to each over-set asset and subtract it from each under-set asset."""
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    step = overlay / k
    ids = sorted(set(benchmark_weights.index) | selection.over | selection.under)
    w = benchmark_weights.reindex(ids, fill_value=0.0).astype(float)
    over = w.index.isin(list(selection.over))
    under = w.index.isin(list(selection.under))
    vals = w.to_numpy().copy()
    vals[over] = vals[over] + step
    vals[under] = vals[under] - step
    return pd.Series(vals, index=w.index, name="weight")


def simulate_drift(weights, growth):
    """Daily portfolio returns and end-of-window weights for a buy-and-hold book.

    ``growth`` is the cumulative gross return matrix (days x assets) since the
    rebalance close.
    """
    w = np.asarray(weights, dtype=float)
    V = growth * w
    P = V.sum(axis=1)
    prev = np.concatenate(([w.sum()], P[:-1]))
    return P / prev - 1.0, V[-1] / P[-1]


@dataclass
class QuarterContext:
    """Everything a replicate needs for one quarter, computed once."""

    quarter: pd.Period
    date: pd.Timestamp
    return_dates: pd.DatetimeIndex
    ids: tuple
    growth: np.ndarray
    benchmark: np.ndarray
    cross_section: pd.DataFrame | None
    calibration: np.ndarray | None
    note: dict


def _rebalance_dates(prices: pd.DataFrame, start, end):
    """(quarter, d0, window end) for each quarter whose first trading day lies in [start, end]."""
    dates = prices.index[(prices.index >= pd.Timestamp(start)) & (prices.index <= pd.Timestamp(end))]
    if len(dates) < 2:
        return []
    q_of = dates.to_period("Q-DEC")
    firsts = {}
    for d, q in zip(dates, q_of):
        firsts.setdefault(q, d)
    qs = sorted(firsts)
    out = []
    for i, q in enumerate(qs):
        stop = firsts[qs[i + 1]] if i + 1 < len(qs) else dates[-1]
        if stop > firsts[q]:
            out.append((q, firsts[q], stop))
    return out


def _cross_section(dataset, universe, quarter, ids):
    smis = compute_smis(dataset.panel, quarter - 1)["smis"]
    cs = pd.DataFrame({"esg": universe.esg.reindex(list(ids)), "smis": smis.reindex(list(ids))})
    return cs.dropna()


def prepare_contexts(config: BacktestConfig, dataset: AlignedDataset) -> list:
    """One :class:`QuarterContext` per quarter; skipped quarters leave their diagnostic dict."""
    contexts = []
    lookback = config.calibration_days if config.engine.optimized else 0
    for q, d0, stop in _rebalance_dates(dataset.prices, config.start, config.end):
        note = {"quarter": str(q), "date": d0.strftime("%Y-%m-%d")}
        u = resolve_universe(dataset.panel, dataset.prices, dataset.esg, quarter=q,
                             holdings_quarter=q - 1, esg_year=q.year - 1, start=d0, end=stop,
                             lookback_days=lookback)
        note["n_eligible"] = len(u.eligible)
        note["n_esg_fallback"] = len(u.esg_fallback)
        try:
            bmk = build_benchmark(dataset, u.eligible, d0, config.benchmark_size)
        except EmptyUniverseError as exc:
            if config.hard_fail:
                raise
            logger.warning("skipping %s: %s", q, exc)
            note.update(event="skipped", reason=str(exc))
            contexts.append(note)
            continue
        # optimized engines work inside the benchmark; fixed tilts over all eligible assets
        ids = tuple(bmk.index) if config.engine.optimized else tuple(u.eligible)
        win = dataset.prices.loc[d0:stop, list(ids)]
        gross = win.to_numpy()[1:] / win.to_numpy()[0]
        calib = None
        if config.engine.optimized:
            pos = dataset.prices.index.get_loc(d0)
            cal_px = dataset.prices.iloc[pos - lookback:pos + 1][list(ids)].to_numpy()
            calib = cal_px[1:] / cal_px[:-1] - 1.0
        try:
            cs = _cross_section(dataset, u, q, ids)
        except (EmptyGroupError, DegreesOfFreedomError) as exc:
            if config.hard_fail:
                raise
            cs = None
            note["score_error"] = str(exc)
        note["n_benchmark"] = len(bmk)
        contexts.append(QuarterContext(q, d0, win.index[1:], ids, gross,
                                       bmk.reindex(list(ids), fill_value=0.0).to_numpy(), cs, calib, note))
    return contexts


def _solve(engine, ctx, bmk, selection, alpha):
    ids = pd.Index(ctx.ids)
    bounds = bounds_from_sets(pd.Series(bmk, index=ids), selection.over, selection.under)
    scen = ScenarioSet(ctx.calibration, ctx.ids)
    floor = float((ctx.calibration @ bmk).mean())
    if engine is Engine.OPT_CVAR:
        return min_cvar(scen, bounds, floor, alpha)
    if engine is Engine.OPT_EVAR:
        return min_evar(scen, bounds, floor, alpha)
    if engine is Engine.OPT_MV:
        return min_variance(scen, bounds, floor)
    return max_sharpe(scen, bounds, 0.0)


def _target(config, spec, ctx, rng):
    """Target weight vector over ``ctx.ids`` and a diagnostic event."""
    event = dict(ctx.note)
    if spec is None:
        event["event"] = "benchmark"
        return ctx.benchmark, event, None
    if ctx.cross_section is None:
        event.update(event="fallback", reason=event.get("score_error", "no scores"))
        return ctx.benchmark, event, None
    cs = ctx.cross_section
    try:
        sel = build_selection(spec, cs, rng=rng)
    except (InsufficientUniverseError, InfeasibleCornerError) as exc:
        if config.hard_fail:
            raise
        event.update(event="fallback", reason=str(exc))
        return ctx.benchmark, event, None
    if not config.engine.optimized:
        pos = {a: i for i, a in enumerate(ctx.ids)}
        w = ctx.benchmark.copy()
        step = config.overlay / config.k
        over = np.array([pos[a] for a in sorted(sel.over)], dtype=int)
        under = np.array([pos[a] for a in sorted(sel.under)], dtype=int)
        w[over] = w[over] + step
        w[under] = w[under] - step
        event["event"] = "rebalance"
        return w, event, sel
    try:
        res = _solve(config.engine, ctx, ctx.benchmark, sel, config.alpha)
    except AssumptionViolatedError as exc:
        event.update(event="fallback", reason=str(exc))
        return ctx.benchmark, event, sel
    event["solver_status"] = res.solver_status.value
    if not res.ok:
        event.update(event="fallback", reason=f"solver status {res.solver_status.value}")
        return ctx.benchmark, event, sel
    event["event"] = "rebalance"
    return res.weights, event, sel


def run_contexts(config, contexts, spec, rng=None):
    """Simulate one strategy over precomputed quarters.

    ``spec=None`` holds the benchmark. Returns ``(returns, rebalances, events,
    selections)`` where ``selections`` pairs each quarter with its selection.
    """
    pieces, rebalances, events, selections = [], [], [], []
    drifted = None
    for ctx in contexts:
        if not isinstance(ctx, QuarterContext):
            events.append(dict(ctx))
            drifted = None
            continue
        w, ev, sel = _target(config, spec, ctx, rng)
        if sel is not None:
            selections.append((ctx.quarter, sel))
        r, end_w = simulate_drift(w, ctx.growth)
        target = pd.Series(w, index=list(ctx.ids))
        rebalances.append(Rebalance(ctx.date, target, drifted))
        drifted = pd.Series(end_w, index=list(ctx.ids))
        pieces.append(pd.Series(r, index=ctx.return_dates))
        events.append(ev)
    if not pieces:
        raise EmptyUniverseError("no quarter could be simulated")
    return pd.concat(pieces), rebalances, events, selections


def _strategy_spec(config, seed=None):
    if config.strategy is StrategyKind.RANDOM:
        return StrategySpec(StrategyKind.RANDOM, config.k, 0 if seed is None else seed)
    return StrategySpec(config.strategy, config.k)


def _seed_streams(config):
    root = np.random.SeedSequence(config.rng_seed)
    return root.spawn(config.n_random + 1)


def run_backtest(config: BacktestConfig, dataset: AlignedDataset) -> BacktestReport:
    contexts = prepare_contexts(config, dataset)
    spec = _strategy_spec(config)
    # stream 0 drives a random realized strategy; replicates use streams 1..n_random
    rng = np.random.default_rng(_seed_streams(config)[0]) \
        if config.strategy is StrategyKind.RANDOM else None
    r, rebs, events, sels = run_contexts(config, contexts, spec, rng)
    br, brebs, _, _ = run_contexts(config, contexts, None)
    return BacktestReport(
        config=config, label=spec.label, panel=metric_panel(r, rebs, alpha=config.alpha),
        benchmark_panel=metric_panel(br, brebs, alpha=config.alpha), returns=r,
        benchmark_returns=br, rebalances=rebs, diagnostics=events, selections=sels,
        contexts=contexts)


def run_fixed_tilt(config: BacktestConfig, dataset: AlignedDataset) -> BacktestReport:
    if config.engine.optimized:
        raise ValueError(f"engine {config.engine.value} is not a fixed tilt")
    return run_backtest(config, dataset)


def run_opt_tilt(config: BacktestConfig, dataset: AlignedDataset) -> BacktestReport:
    if not config.engine.optimized:
        raise ValueError("run_opt_tilt needs an optimized engine")
    return run_backtest(config, dataset)


# ---------------------------------------------------------------------------
# random validation

_WORKER = {}


def _init_worker(config, contexts):
    _WORKER["config"] = config
    _WORKER["contexts"] = contexts


def _replicate(seed_seq):
    config, contexts = _WORKER["config"], _WORKER["contexts"]
    rng = np.random.default_rng(seed_seq)
    spec = StrategySpec(StrategyKind.RANDOM, config.k, 0)
    r, rebs, _, _ = run_contexts(config, contexts, spec, rng)
    return metric_panel(r, rebs, alpha=config.alpha).as_row()


def random_panels(config, contexts, seeds, jobs=1) -> list[dict]:
    """Metric rows of random-selection replicates, in seed order."""
    if jobs <= 1 or len(seeds) <= 1:
        _init_worker(config, contexts)
        try:
            return [_replicate(s) for s in seeds]
        finally:
            _WORKER.clear()
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(config, contexts)) as pool:
        return list(pool.map(_replicate, seeds, chunksize=max(1, len(seeds) // (4 * jobs))))


def confidence_bounds(rows: list[dict], ci_level: float) -> dict:
    lo_q, hi_q = (1 - ci_level) / 2, (1 + ci_level) / 2
    out = {}
    for m in METRIC_NAMES:
        vals = np.array([r[m] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        out[m] = tuple(float(v) for v in np.quantile(vals, [lo_q, hi_q])) if vals.size else (np.nan, np.nan)
    return out


def flag_metrics(realized: dict, ci: dict) -> dict:
    """better/worse/inside per flagged metric; ``na`` for the rest."""
    flags = {}
    for m in METRIC_NAMES:
        if m not in FLAG_DIRECTION or m not in ci or not np.all(np.isfinite(ci[m])):
            flags[m] = "na"
            continue
        lo, hi = ci[m]
        v = realized[m]
        sign = FLAG_DIRECTION[m]
        if v > hi:
            flags[m] = "better" if sign > 0 else "worse"
        elif v < lo:
            flags[m] = "worse" if sign > 0 else "better"
        else:
            flags[m] = "inside"
    return flags


def random_validation(config: BacktestConfig, dataset: AlignedDataset | None = None,
                      report: BacktestReport | None = None, *, jobs=1) -> BacktestReport:
    """Attach random-selection CIs and flags to ``report`` (run first if missing)."""
    if report is None:
        if dataset is None:
            raise ValueError("need a dataset or a finished report")
        report = run_backtest(config, dataset)
    contexts = report.contexts or prepare_contexts(config, dataset)
    if config.n_random == 0:
        report.ci = {}
        report.flags = {m: "unavailable" for m in METRIC_NAMES}
        return report
    if config.n_random < MIN_RANDOM:
        warnings.warn(f"n_random={config.n_random} < {MIN_RANDOM}: confidence bounds are unstable",
                      RuntimeWarning, stacklevel=2)
    seeds = _seed_streams(config)[1:]
    rows = random_panels(config, contexts, seeds, jobs)
    report.random_panels = rows
    report.ci = confidence_bounds(rows, config.ci_level)
    report.flags = flag_metrics(report.panel.as_row(), report.ci)
    return report
