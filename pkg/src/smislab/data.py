"""Holdings panel, fund metadata, prices and ESG records.

CSV layouts read here (empty cell = missing):

* ``holdings.csv``: ``fund_id,quarter,asset_id,weight`` with quarter as ``YYYYQn``
  and weight a decimal fraction of fund NAV.
* ``funds.csv``: ``fund_id,sfdr_label,aum_mln`` with label in ``6|8|9|NA``.
* ``prices.csv``: ``asset_id,date,close`` with ISO-8601 dates.
* ``esg.csv``: ``asset_id,year,esg_score,<covariates...>,gics_sector``.
* ``shares.csv`` (optional): ``asset_id,shares``; used as a capitalization proxy.

All containers are treated as immutable once built.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from .exceptions import DataValidationError, EmptyUniverseError, ParseError

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-6
QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")

ESG_COVARIATES = (
    "green_revenues",
    "std_total_emission",
    "target_reduction",
    "board_diversity",
    "human_policy_rights",
    "armaments",
    "esg_controversies",
    "size",
    "pb_ratio",
    "roe",
    "pe_ratio",
    "dividend_yield",
)
ESG_BINARY = ("target_reduction", "human_policy_rights", "armaments")
ESG_COLUMNS = ("asset_id", "year", "esg_score") + ESG_COVARIATES + ("gics_sector",)


class SfdrLabel(str, Enum):
    ART6 = "6"
    ART8 = "8"
    ART9 = "9"
    UNLABELED = "NA"

    @classmethod
    def parse(cls, text):
        text = str(text).strip()
        for member in cls:
            if text == member.value:
                return member
        raise ValueError(f"unknown SFDR label {text!r} (expected 6, 8, 9 or NA)")


# ---------------------------------------------------------------------------
# quarters


def parse_quarter(text) -> pd.Period:
    """Parse ``YYYYQn`` (or pass through a quarterly Period)."""
    if isinstance(text, pd.Period):
        return text.asfreq("Q-DEC")
    m = QUARTER_RE.match(str(text).strip())
    if not m:
        raise ValueError(f"malformed quarter {text!r}; expected YYYYQn")
    return pd.Period(year=int(m.group(1)), quarter=int(m.group(2)), freq="Q-DEC")


def quarter_range(spec: str) -> list[pd.Period]:
    """``"2010Q1:2012Q4"`` -> every quarter in the closed range."""
    if ":" in spec:
        lo, hi = spec.split(":", 1)
    else:
        lo = hi = spec
    start, end = parse_quarter(lo), parse_quarter(hi)
    if end < start:
        raise ValueError(f"empty quarter range {spec!r}")
    return list(pd.period_range(start, end, freq="Q-DEC"))


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class FundMeta:
    fund_id: str
    sfdr_label: SfdrLabel
    aum: float = float("nan")


@dataclass(frozen=True)
class HoldingsSnapshot:
    fund_id: str
    quarter: pd.Period
    positions: Mapping[str, float]

    def __post_init__(self):
        bad = [a for a, w in self.positions.items() if not w >= 0]
        if bad:
            raise ValueError(f"negative weights in snapshot {self.fund_id}/{self.quarter}: {bad[:3]}")
        total = float(sum(self.positions.values()))
        if total > 1 + WEIGHT_SUM_TOL:
            raise ValueError(f"weights of {self.fund_id}/{self.quarter} sum to {total:.6f} > 1")


@dataclass(frozen=True)
class PriceSeries:
    asset_id: str
    dates: pd.DatetimeIndex
    prices: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.prices):
            raise ValueError("dates and prices differ in length")
        if not self.dates.is_monotonic_increasing or self.dates.has_duplicates:
            raise ValueError(f"dates of {self.asset_id} are not strictly increasing")
        if np.any(~(np.asarray(self.prices) > 0)):
            raise ValueError(f"non-positive or missing price for {self.asset_id}")


@dataclass(frozen=True)
class EsgRecord:
    asset_id: str
    year: int
    esg_score: float
    covariates: Mapping[str, float] = field(default_factory=dict)
    gics_sector: str | None = None


@dataclass(frozen=True)
class HoldingsPanel:
    """Long-format holdings plus fund metadata.

    ``holdings`` has columns ``fund_id, quarter, asset_id, weight`` (quarter is a
    quarterly ``Period``); ``funds`` is indexed by ``fund_id`` with columns
    ``sfdr_label`` (an :class:`SfdrLabel`) and ``aum_mln``. ``imputed`` holds the
    ``(fund_id, quarter)`` keys of snapshots filled by :func:`impute_single_gaps`.
    """

    holdings: pd.DataFrame
    funds: pd.DataFrame
    imputed: frozenset = frozenset()

    @cached_property
    def quarters(self) -> list[pd.Period]:
        return sorted(self.holdings["quarter"].unique())

    @cached_property
    def _by_quarter(self) -> dict:
        return {q: g for q, g in self.holdings.groupby("quarter", sort=True)}

    def fund_meta(self) -> list[FundMeta]:
        return [FundMeta(fid, row.sfdr_label, float(row.aum_mln)) for fid, row in self.funds.iterrows()]

    def snapshots(self) -> Iterator[HoldingsSnapshot]:
        for (fid, q), g in self.holdings.groupby(["fund_id", "quarter"], sort=True):
            yield HoldingsSnapshot(fid, q, dict(zip(g["asset_id"], g["weight"])))

    def weight_matrix(self, quarter) -> pd.DataFrame:
        """Funds with a snapshot in ``quarter`` x assets, zero-filled."""
        q = parse_quarter(quarter)
        g = self._by_quarter.get(q)
        if g is None:
            return pd.DataFrame(dtype=float)
        return g.pivot_table(index="fund_id", columns="asset_id", values="weight",
                             aggfunc="sum", fill_value=0.0).sort_index().sort_index(axis=1)

    def held_assets(self, quarter) -> set:
        g = self._by_quarter.get(parse_quarter(quarter))
        if g is None:
            return set()
        return set(g.loc[g["weight"] > 0, "asset_id"])

    def validate(self):
        diags = []
        h = self.holdings
        unknown = sorted(set(h["fund_id"]) - set(self.funds.index))
        diags += [(None, f"snapshot references unknown fund {f!r}") for f in unknown]
        if (h["weight"] < 0).any():
            diags.append((None, "negative weights present"))
        dup = h.duplicated(["fund_id", "quarter", "asset_id"])
        if dup.any():
            r = h.loc[dup].iloc[0]
            diags.append((None, f"duplicate snapshot key ({r.fund_id}, {r.quarter})"))
        sums = h.groupby(["fund_id", "quarter"])["weight"].sum()
        for (fid, q), s in sums[sums > 1 + WEIGHT_SUM_TOL].items():
            diags.append((None, f"weights of snapshot ({fid}, {q}) sum to {s:.6f} > 1"))
        if diags:
            raise DataValidationError(diags, source="HoldingsPanel")
        return self


# ---------------------------------------------------------------------------
# CSV loading


def _read_csv(path, columns):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(path, int(m.group(1)) if m else None, str(exc).strip()) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(path, 1, "empty file") from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ParseError(path, 1, f"missing columns {missing}")
    df = df.apply(lambda s: s.str.strip())
    # header occupies line 1
    df.index = pd.RangeIndex(2, len(df) + 2, name="line")
    return df


def _numeric(df, col, path, diags, *, allow_empty=False):
    raw = df[col]
    empty = raw == ""
    values = pd.to_numeric(raw.where(~empty, None), errors="coerce")
    bad = values.isna() & ~(empty & allow_empty)
    for line, cell in raw[bad].items():
        diags.append((line, f"{col}: cannot parse {cell!r} as a number"))
    return values.astype(float)


def load_funds(path) -> pd.DataFrame:
    df = _read_csv(path, ["fund_id", "sfdr_label", "aum_mln"])
    diags = []
    labels = []
    for line, text in df["sfdr_label"].items():
        try:
            labels.append(SfdrLabel.parse(text))
        except ValueError as exc:
            diags.append((line, str(exc)))
            labels.append(None)
    aum = _numeric(df, "aum_mln", path, diags, allow_empty=True)
    for line in aum.index[aum < 0]:
        diags.append((line, f"aum_mln must be >= 0, got {aum[line]}"))
    for line in df.index[df["fund_id"] == ""]:
        diags.append((line, "empty fund_id"))
    dup = df["fund_id"].duplicated(keep="first")
    for line, fid in df.loc[dup, "fund_id"].items():
        diags.append((line, f"duplicate fund_id {fid!r}"))
    if diags:
        raise DataValidationError(sorted(diags, key=lambda d: d[0]), source=str(path))
    out = pd.DataFrame({"sfdr_label": labels, "aum_mln": aum.to_numpy()},
                       index=pd.Index(df["fund_id"].to_numpy(), name="fund_id"))
    return out.sort_index()


def load_panel(holdings_path, funds_path) -> HoldingsPanel:
    """Read and validate ``holdings.csv`` + ``funds.csv``.

    Every invariant violation is reported with its line number in a single
    :class:`DataValidationError`; tokenization failures raise :class:`ParseError`.
    """
    funds = load_funds(funds_path)
    df = _read_csv(holdings_path, ["fund_id", "quarter", "asset_id", "weight"])
    diags = []

    quarters = []
    for line, text in df["quarter"].items():
        m = QUARTER_RE.match(text)
        if m is None:
            diags.append((line, f"quarter: malformed {text!r}; expected YYYYQn"))
            quarters.append(pd.NaT)
        else:
            quarters.append(pd.Period(year=int(m.group(1)), quarter=int(m.group(2)), freq="Q-DEC"))
    weight = _numeric(df, "weight", holdings_path, diags)
    for line in weight.index[weight < 0]:
        diags.append((line, f"weight must be >= 0 (long-only), got {weight[line]}"))
    for line in df.index[df["asset_id"] == ""]:
        diags.append((line, "empty asset_id"))
    unknown = ~df["fund_id"].isin(funds.index)
    for line, fid in df.loc[unknown, "fund_id"].items():
        diags.append((line, f"unknown fund_id {fid!r} (not in funds file)"))

    h = pd.DataFrame({
        "fund_id": df["fund_id"].to_numpy(),
        "quarter": pd.PeriodIndex(quarters, freq="Q-DEC"),
        "asset_id": df["asset_id"].to_numpy(),
        "weight": weight.to_numpy(),
    }, index=df.index)

    dup = h.duplicated(["fund_id", "quarter", "asset_id"], keep="first")
    for line, r in h.loc[dup].iterrows():
        diags.append((line, f"duplicate snapshot key ({r.fund_id}, {r.quarter}) for asset {r.asset_id!r}"))

    ok = h["weight"].notna() & h["quarter"].notna()
    sums = h[ok].groupby(["fund_id", "quarter"])["weight"].agg(["sum"])
    first_line = h[ok].reset_index().groupby(["fund_id", "quarter"])["line"].min()
    over = sums["sum"] > 1 + WEIGHT_SUM_TOL
    for key in sums.index[over]:
        diags.append((int(first_line[key]),
                      f"weights of snapshot ({key[0]}, {key[1]}) sum to {sums.loc[key, 'sum']:.6f} > 1"))

    if diags:
        raise DataValidationError(sorted(diags, key=lambda d: d[0]), source=str(holdings_path))

    h = h.sort_values(["quarter", "fund_id", "asset_id"], kind="mergesort").reset_index(drop=True)
    return HoldingsPanel(h, funds)


def load_prices(path) -> pd.DataFrame:
    """Wide close-price frame: DatetimeIndex (sorted) x asset_id, NaN where absent."""
    df = _read_csv(path, ["asset_id", "date", "close"])
    diags = []
    dates = pd.to_datetime(df["date"], format="ISO8601", errors="coerce")
    for line, text in df.loc[dates.isna(), "date"].items():
        diags.append((line, f"date: cannot parse {text!r} as ISO-8601"))
    close = _numeric(df, "close", path, diags)
    for line in close.index[close <= 0]:
        diags.append((line, f"close must be > 0, got {close[line]}"))
    long = pd.DataFrame({"asset_id": df["asset_id"], "date": dates, "close": close})
    dup = long.duplicated(["asset_id", "date"])
    for line, r in long.loc[dup].iterrows():
        diags.append((line, f"duplicate price for ({r.asset_id}, {r.date.date()})"))
    if diags:
        raise DataValidationError(sorted(diags, key=lambda d: d[0]), source=str(path))
    wide = long.pivot(index="date", columns="asset_id", values="close")
    return wide.sort_index().sort_index(axis=1)


def price_series(prices: pd.DataFrame, asset_id) -> PriceSeries:
    s = prices[asset_id].dropna()
    return PriceSeries(asset_id, pd.DatetimeIndex(s.index), s.to_numpy())


def load_esg(path) -> pd.DataFrame:
    """ESG records indexed by ``(asset_id, year)``; covariates as floats, NaN when empty."""
    df = _read_csv(path, ["asset_id", "year", "esg_score"])
    diags = []
    year = _numeric(df, "year", path, diags)
    out = pd.DataFrame({"asset_id": df["asset_id"], "year": year})
    for col in ("esg_score",) + ESG_COVARIATES:
        if col in df.columns:
            out[col] = _numeric(df, col, path, diags, allow_empty=True)
        else:
            out[col] = np.nan
    for col in ("esg_score", "esg_controversies"):
        bad = out[col].notna() & ~out[col].between(0, 100)
        for line in out.index[bad]:
            diags.append((line, f"{col} must lie in [0, 100], got {out.loc[line, col]}"))
    for col in ESG_BINARY:
        bad = out[col].notna() & ~out[col].isin([0.0, 1.0])
        for line in out.index[bad]:
            diags.append((line, f"{col} must be 0 or 1, got {out.loc[line, col]}"))
    out["gics_sector"] = df["gics_sector"].replace("", None) if "gics_sector" in df.columns else None
    dup = out.duplicated(["asset_id", "year"])
    for line, r in out.loc[dup].iterrows():
        diags.append((line, f"duplicate ESG record ({r.asset_id}, {int(r.year)})"))
    if diags:
        raise DataValidationError(sorted(diags, key=lambda d: d[0]), source=str(path))
    out["year"] = out["year"].astype(int)
    return out.set_index(["asset_id", "year"]).sort_index()


def load_shares(path) -> pd.Series:
    df = _read_csv(path, ["asset_id", "shares"])
    diags = []
    shares = _numeric(df, "shares", path, diags)
    for line in shares.index[shares <= 0]:
        diags.append((line, f"shares must be > 0, got {shares[line]}"))
    if diags:
        raise DataValidationError(diags, source=str(path))
    return pd.Series(shares.to_numpy(), index=df["asset_id"].to_numpy(), name="shares").sort_index()


# ---------------------------------------------------------------------------
# imputation


def impute_single_gaps(panel: HoldingsPanel) -> HoldingsPanel:
    """Fill isolated missing quarters with the previous quarter's snapshot.

    A quarter ``q`` is filled for a fund only when the fund has a snapshot at
    both ``q-1`` and ``q+1``. Longer runs, and leading or trailing gaps, stay
    missing. Filled keys are added to ``imputed``.
    """
    h = panel.holdings
    keys = set(zip(h["fund_id"], h["quarter"]))
    gaps = sorted((f, q + 1) for f, q in keys if (f, q + 2) in keys and (f, q + 1) not in keys)
    if not gaps:
        return panel
    src = pd.DataFrame({"fund_id": [f for f, _ in gaps],
                        "quarter": pd.PeriodIndex([q - 1 for _, q in gaps], freq="Q-DEC"),
                        "target": pd.PeriodIndex([q for _, q in gaps], freq="Q-DEC")})
    copies = h.merge(src, on=["fund_id", "quarter"], how="inner")
    copies["quarter"] = copies.pop("target")
    filled = pd.concat([h, copies[h.columns]], ignore_index=True)
    filled = filled.sort_values(["quarter", "fund_id", "asset_id"], kind="mergesort").reset_index(drop=True)
    logger.info("imputed %d single-quarter gaps", len(gaps))
    return HoldingsPanel(filled, panel.funds, panel.imputed | frozenset(gaps))


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class QuarterUniverse:
    """Eligible assets for one quarter and why the others were excluded."""

    quarter: pd.Period
    eligible: tuple
    reasons: Mapping[str, str]
    esg: pd.Series
    esg_fallback: frozenset
    window: tuple

    @property
    def empty(self):
        return len(self.eligible) == 0


def esg_for_year(esg: pd.DataFrame, year: int, assets: Iterable, column="esg_score"):
    """Score per asset for ``year``, falling back exactly one year.

    Returns ``(values, fallback_assets)``; assets with neither year missing are
    absent from ``values``.
    """
    assets = list(assets)
    values, fallback = {}, set()
    cur = esg.xs(year, level="year")[column] if year in esg.index.get_level_values("year") else pd.Series(dtype=float)
    prev = esg.xs(year - 1, level="year")[column] if (year - 1) in esg.index.get_level_values("year") else pd.Series(dtype=float)
    cur = cur.dropna()
    prev = prev.dropna()
    for a in assets:
        if a in cur.index:
            values[a] = float(cur[a])
        elif a in prev.index:
            values[a] = float(prev[a])
            fallback.add(a)
    return pd.Series(values, dtype=float).sort_index(), frozenset(fallback)


def price_window(prices: pd.DataFrame, start, end, lookback_days=0) -> pd.DataFrame | None:
    """Rows of ``prices`` between ``start`` and ``end`` inclusive plus ``lookback_days`` earlier rows.

    Returns ``None`` when the calendar has too little history for the lookback
    or no trading day in the window.
    """
    idx = prices.index
    lo = idx.searchsorted(pd.Timestamp(start), side="left")
    hi = idx.searchsorted(pd.Timestamp(end), side="right")
    if hi <= lo or lo - lookback_days < 0:
        return None
    return prices.iloc[lo - lookback_days:hi]


def resolve_universe(panel: HoldingsPanel, prices: pd.DataFrame, esg: pd.DataFrame, *,
                     quarter, holdings_quarter=None, esg_year=None, start=None, end=None,
                     lookback_days=0) -> QuarterUniverse:
    """Apply the three eligibility rules (holding, ESG, complete prices).

    Defaults: holdings and ESG from ``quarter`` itself, price window = the
    calendar quarter. Exclusion reasons are reported for every asset that is
    referenced by a holding or has a price column.
    """
    q = parse_quarter(quarter)
    hq = q if holdings_quarter is None else parse_quarter(holdings_quarter)
    year = q.year if esg_year is None else int(esg_year)
    start = q.start_time if start is None else pd.Timestamp(start)
    end = q.end_time if end is None else pd.Timestamp(end)

    held = panel.held_assets(hq)
    candidates = sorted(held | set(prices.columns))
    reasons = {a: "no holding" for a in candidates if a not in held}

    esg_vals, fallback = esg_for_year(esg, year, sorted(held))
    for a in sorted(held):
        if a not in esg_vals.index:
            reasons[a] = "no esg"

    window = price_window(prices, start, end, lookback_days)
    remaining = [a for a in sorted(held) if a not in reasons]
    if window is None:
        for a in remaining:
            reasons[a] = "insufficient history"
        remaining = []
    else:
        cols = [a for a in remaining if a in window.columns]
        complete = set(np.asarray(cols)[window[cols].notna().all(axis=0).to_numpy()]) if cols else set()
        for a in remaining:
            if a not in complete:
                reasons[a] = "incomplete series"
        remaining = [a for a in remaining if a in complete]

    eligible = tuple(remaining)
    return QuarterUniverse(q, eligible, reasons, esg_vals.reindex(list(eligible)),
                           frozenset(fallback & set(eligible)), (start, end, lookback_days))


@dataclass(frozen=True)
class AlignedDataset:
    """Panel, prices, ESG and optional share counts with per-quarter universes."""

    panel: HoldingsPanel
    prices: pd.DataFrame
    esg: pd.DataFrame
    shares: pd.Series | None = None
    universes: Mapping = field(default_factory=dict)

    @property
    def empty_quarters(self) -> list:
        return [q for q, u in self.universes.items() if u.empty]

    def universe(self, quarter) -> QuarterUniverse:
        q = parse_quarter(quarter)
        u = self.universes.get(q)
        if u is None:
            u = resolve_universe(self.panel, self.prices, self.esg, quarter=q)
        if u.empty:
            raise EmptyUniverseError(f"no eligible assets in {q}")
        return u


def align_dataset(panel, prices, esg, *, shares=None, quarters=None, lookback_days=0,
                  esg_lag_years=0) -> AlignedDataset:
    """Bundle the inputs and resolve each quarter's eligible universe.

    Quarters with no eligible asset are kept (``QuarterUniverse.empty``) and
    listed in ``AlignedDataset.empty_quarters``; :meth:`AlignedDataset.universe`
    raises :class:`EmptyUniverseError` for them.
    """
    quarters = panel.quarters if quarters is None else [parse_quarter(q) for q in quarters]
    universes = {}
    for q in quarters:
        u = resolve_universe(panel, prices, esg, quarter=q, esg_year=q.year - esg_lag_years,
                             lookback_days=lookback_days)
        if u.empty:
            logger.warning("empty eligible universe in %s", q)
        universes[q] = u
    return AlignedDataset(panel, prices, esg, shares, universes)


def load_dataset(directory, *, impute=True, **align_kwargs) -> AlignedDataset:
    """Load the standard file set from ``directory`` (shares.csv optional)."""
    d = Path(directory)
    panel = load_panel(d / "holdings.csv", d / "funds.csv")
    if impute:
        panel = impute_single_gaps(panel)
    prices = load_prices(d / "prices.csv")
    esg = load_esg(d / "esg.csv")
    shares = load_shares(d / "shares.csv") if (d / "shares.csv").exists() else None
    return align_dataset(panel, prices, esg, shares=shares, **align_kwargs)
