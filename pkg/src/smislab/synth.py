"""Seeded synthetic holdings/prices/ESG generator with a planted sustainability signal.

Each asset carries a latent loading ``s_i ~ U(-1, 1)``. Article 9 funds hold
asset ``i`` with probability ``logistic(a + b s_i)``, every other fund with
``logistic(a)``; the same uniform draw decides both, so raising ``b`` can only
add Article 9 holdings of positive-``s`` assets. Annual price drift carries a
``c s_i`` term on top of a market factor. ESG scores come from a second latent
that is only weakly correlated with ``s``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit

from .data import ESG_BINARY, ESG_COVARIATES, AlignedDataset, HoldingsPanel, SfdrLabel, parse_quarter

GICS_SECTORS = (
    "Energy", "Materials", "Industrials", "Consumer Discretionary", "Consumer Staples",
    "Health Care", "Financials", "Information Technology", "Communication Services",
    "Utilities", "Real Estate",
)


@dataclass(frozen=True)
class SynthConfig:
    n_assets: int = 400
    n_art9: int = 30
    n_art8: int = 120
    n_art6: int = 30
    n_unlabeled: int = 5
    n_quarters: int = 56
    first_quarter: str = "2010Q1"
    base_logit: float = -2.0
    hold_link: float = 2.0
    drift_link: float = 0.15
    esg_correlation: float = 0.2
    market_drift: float = 0.06
    market_vol: float = 0.15
    idio_vol: float = 0.25
    max_cash: float = 0.05
    missing_esg: float = 0.03
    missing_snapshot: float = 0.02
    late_listing: float = 0.05
    history_months: int = 15
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_assets", "n_art9", "n_quarters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_art8 + self.n_art6 < 1:
            raise ValueError("need at least one Article 6 or 8 fund")
        for name in ("n_art8", "n_art6", "n_unlabeled", "history_months"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("base_logit", "hold_link", "drift_link", "esg_correlation"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("max_cash", "missing_esg", "missing_snapshot", "late_listing"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not -1 <= self.esg_correlation <= 1:
            raise ValueError("esg_correlation must lie in [-1, 1]")


@dataclass
class SynthDataset:
    panel: HoldingsPanel
    prices: pd.DataFrame
    esg: pd.DataFrame
    shares: pd.Series
    ground_truth: pd.DataFrame
    config: SynthConfig

    def aligned(self) -> AlignedDataset:
        return AlignedDataset(self.panel, self.prices, self.esg, self.shares)


def _asset_ids(n):
    width = max(4, len(str(n)))
    return [f"A{i:0{width}d}" for i in range(1, n + 1)]


def _funds(cfg):
    rows = []
    for label, count, prefix in ((SfdrLabel.ART9, cfg.n_art9, "F9"), (SfdrLabel.ART8, cfg.n_art8, "F8"),
                                 (SfdrLabel.ART6, cfg.n_art6, "F6"), (SfdrLabel.UNLABELED, cfg.n_unlabeled, "FN")):
        rows += [(f"{prefix}_{j:03d}", label) for j in range(1, count + 1)]
    return rows


def generate(config: SynthConfig | None = None) -> SynthDataset:
    cfg = config or SynthConfig()
    root = np.random.SeedSequence(cfg.rng_seed)
    r_asset, r_hold, r_price, r_esg, r_fund, r_weight = (np.random.default_rng(s) for s in root.spawn(6))

    n = cfg.n_assets
    ids = _asset_ids(n)
    s = r_asset.uniform(-1, 1, n)
    beta = r_asset.uniform(0.6, 1.4, n)
    sector = r_asset.integers(0, len(GICS_SECTORS), n)
    shares = np.round(np.exp(r_asset.normal(16, 1, n)))

    q0 = parse_quarter(cfg.first_quarter)
    quarters = [q0 + i for i in range(cfg.n_quarters)]
    start = (q0.start_time - pd.DateOffset(months=cfg.history_months)).normalize()
    dates = pd.bdate_range(start, quarters[-1].end_time.normalize())
    T = len(dates)

    # listing windows: a few assets list late or delist early
    listed_from = np.zeros(n, dtype=int)
    listed_to = np.full(n, T - 1)
    late = r_asset.random(n) < cfg.late_listing
    listed_from[late] = r_asset.integers(T // 4, T // 2, late.sum())
    gone = r_asset.random(n) < cfg.late_listing
    listed_to[gone] = r_asset.integers(T // 2, T - T // 8, gone.sum())

    # prices
    dt = 1.0 / 250
    mkt = r_price.normal(cfg.market_drift * dt, cfg.market_vol * np.sqrt(dt), T)
    idio = r_price.normal(0.0, cfg.idio_vol * np.sqrt(dt), (T, n))
    logret = mkt[:, None] * beta + cfg.drift_link * s * dt + idio
    logret[0] = 0.0
    px = np.round(100 * np.exp(np.cumsum(logret, axis=0)), 6)
    rows = np.arange(T)[:, None]
    px = np.where((rows >= listed_from) & (rows <= listed_to), px, np.nan)
    prices = pd.DataFrame(px, index=pd.DatetimeIndex(dates, name="date"),
                          columns=pd.Index(ids, name="asset_id"))

    # holdings
    funds = _funds(cfg)
    is9 = np.array([lab is SfdrLabel.ART9 for _, lab in funds])
    p_base = expit(cfg.base_logit)
    p9 = expit(cfg.base_logit + cfg.hold_link * s)
    frames = []
    for q in quarters:
        pos = min(dates.searchsorted(q.end_time.normalize(), side="right") - 1, T - 1)
        listed = (listed_from <= pos) & (listed_to >= pos)
        u = r_hold.random((len(funds), n))
        held = np.where(is9[:, None], u < p9, u < p_base) & listed
        present = r_hold.random(len(funds)) >= cfg.missing_snapshot
        cash = r_hold.uniform(0, cfg.max_cash, len(funds))
        for f, (fid, _) in enumerate(funds):
            if not present[f]:
                continue
            cols = np.flatnonzero(held[f])
            if cols.size == 0:
                cols = np.flatnonzero(listed)[:1]
            w = r_weight.dirichlet(np.ones(cols.size)) * (1 - cash[f])
            frames.append(pd.DataFrame({"fund_id": fid, "quarter": q,
                                        "asset_id": np.asarray(ids)[cols], "weight": np.round(w, 10)}))
    holdings = pd.concat(frames, ignore_index=True)
    holdings["quarter"] = pd.PeriodIndex(holdings["quarter"], freq="Q-DEC")
    holdings = holdings.sort_values(["quarter", "fund_id", "asset_id"], kind="mergesort").reset_index(drop=True)
    fund_frame = pd.DataFrame({"sfdr_label": [lab for _, lab in funds],
                               "aum_mln": np.round(np.exp(r_fund.normal(5, 1, len(funds))), 2)},
                              index=pd.Index([fid for fid, _ in funds], name="fund_id")).sort_index()
    panel = HoldingsPanel(holdings, fund_frame)

    esg = _esg(cfg, r_esg, ids, s, sector, shares, quarters)
    truth = pd.DataFrame({"asset_id": ids, "s": s, "beta": beta, "gics_sector": [GICS_SECTORS[j] for j in sector],
                          "listed_from": dates[listed_from].strftime("%Y-%m-%d"),
                          "listed_to": dates[listed_to].strftime("%Y-%m-%d")})
    return SynthDataset(panel, prices, esg, pd.Series(shares, index=ids, name="shares"), truth, cfg)


def _esg(cfg, rng, ids, s, sector, shares, quarters):
    n = len(ids)
    years = range(quarters[0].year - 2, quarters[-1].year + 1)
    z_s = s / np.sqrt(1 / 3)
    rho = cfg.esg_correlation
    latent = rho * z_s + np.sqrt(1 - rho ** 2) * rng.normal(size=n)
    records = []
    for y in years:
        noise = rng.normal(0, 0.3, n)
        esg = np.round(100 * stats.norm.cdf(latent + noise), 4)
        esg[rng.random(n) < cfg.missing_esg] = np.nan
        cov = {
            "green_revenues": np.clip(10 + 8 * s + rng.normal(0, 5, n), 0, 100),
            "std_total_emission": np.log1p(np.exp(rng.normal(3 - s, 1, n))),
            "target_reduction": (rng.random(n) < expit(latent)).astype(float),
            "board_diversity": np.clip(25 + 5 * latent + rng.normal(0, 8, n), 0, 100),
            "human_policy_rights": (rng.random(n) < expit(0.5 + latent)).astype(float),
            "armaments": (rng.random(n) < 0.05).astype(float),
            "esg_controversies": np.clip(80 + 10 * rng.normal(size=n), 0, 100),
            "size": np.log(shares * 100) + rng.normal(0, 0.2, n),
            "pb_ratio": np.exp(rng.normal(0.7, 0.5, n)),
            "roe": rng.normal(0.10, 0.08, n),
            "pe_ratio": np.exp(rng.normal(2.8, 0.4, n)),
            "dividend_yield": np.clip(rng.normal(0.03, 0.015, n), 0, None),
        }
        frame = pd.DataFrame({"asset_id": ids, "year": y, "esg_score": esg})
        for c in ESG_COVARIATES:
            frame[c] = cov[c] if c in ESG_BINARY else np.round(cov[c], 6)
        frame["gics_sector"] = [GICS_SECTORS[j] for j in sector]
        records.append(frame)
    out = pd.concat(records, ignore_index=True)
    return out.set_index(["asset_id", "year"]).sort_index()


def write_dataset(data: SynthDataset, directory) -> dict:
    """Write the CSV file set read by :func:`smislab.data.load_dataset`, plus ground_truth.csv."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {name: d / f"{name}.csv" for name in ("holdings", "funds", "prices", "esg", "shares", "ground_truth")}
    h = data.panel.holdings.copy()
    h["quarter"] = h["quarter"].astype(str)
    h.to_csv(paths["holdings"], index=False)
    f = data.panel.funds.copy()
    f["sfdr_label"] = [lab.value for lab in f["sfdr_label"]]
    f.reset_index().to_csv(paths["funds"], index=False)
    long = data.prices.reset_index().melt(id_vars="date", var_name="asset_id", value_name="close").dropna()
    long["date"] = long["date"].dt.strftime("%Y-%m-%d")
    long = long.sort_values(["asset_id", "date"], kind="mergesort")
    long[["asset_id", "date", "close"]].to_csv(paths["prices"], index=False)
    esg = data.esg.reset_index()
    for c in ESG_BINARY:
        esg[c] = esg[c].astype(int)
    esg.to_csv(paths["esg"], index=False)
    data.shares.rename_axis("asset_id").reset_index().to_csv(paths["shares"], index=False)
    data.ground_truth.to_csv(paths["ground_truth"], index=False)
    return paths


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
