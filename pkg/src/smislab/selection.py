"""Preselection of assets to over- and under-weight.

Corner names read the (SMIS, ESG) plane with SMIS on the horizontal axis and
ESG on the vertical one: *upper* means high ESG, *right* means high SMIS. So
``UPPER_LEFT`` is high ESG / low SMIS and ``LOWER_RIGHT`` low ESG / high SMIS.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np
import pandas as pd

from ._validation import check_positive_int, stable_ceil
from .exceptions import InfeasibleCornerError, InsufficientUniverseError

DEFAULT_GRID_STEP = 0.005


class Corner(Enum):
    # (esg side, smis side)
    LOWER_LEFT = ("low", "low")
    UPPER_RIGHT = ("high", "high")
    UPPER_LEFT = ("high", "low")
    LOWER_RIGHT = ("low", "high")

    @property
    def opposite(self):
        esg, smis = self.value
        flip = {"low": "high", "high": "low"}
        return Corner((flip[esg], flip[smis]))


class StrategyKind(str, Enum):
    TOP_ESG = "esg"
    TOP_SMIS = "smis"
    CORNERS_TT = "tt"
    CORNERS_TB = "tb"
    CORNERS_BT = "bt"
    RANDOM = "random"


STRATEGY_LABELS = {
    StrategyKind.TOP_ESG: "Top ESG",
    StrategyKind.TOP_SMIS: "Top SMIS",
    StrategyKind.CORNERS_TT: "Top-Top",
    StrategyKind.CORNERS_TB: "Top ESG-Bottom SMIS",
    StrategyKind.CORNERS_BT: "Bottom ESG-Top SMIS",
    StrategyKind.RANDOM: "Random",
}

# (over corner, under corner) for the bivariate strategies
_CORNERS = {
    StrategyKind.CORNERS_TT: (Corner.UPPER_RIGHT, Corner.LOWER_LEFT),
    StrategyKind.CORNERS_TB: (Corner.UPPER_LEFT, Corner.LOWER_RIGHT),
    StrategyKind.CORNERS_BT: (Corner.LOWER_RIGHT, Corner.UPPER_LEFT),
}


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    k: int = 100
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        check_positive_int(self.k, "k")
        if (self.seed is not None) != (self.kind is StrategyKind.RANDOM):
            raise ValueError("seed must be given for the random strategy and only for it")

    @property
    def label(self):
        return STRATEGY_LABELS[self.kind]


@dataclass(frozen=True)
class SelectionResult:
    over: frozenset
    under: frozenset

    def __post_init__(self):
        object.__setattr__(self, "over", frozenset(self.over))
        object.__setattr__(self, "under", frozenset(self.under))
        if self.over & self.under:
            raise ValueError(f"over and under sets overlap: {sorted(self.over & self.under)[:5]}")
        if len(self.over) != len(self.under):
            raise ValueError("over and under sets differ in size")

    @property
    def k(self):
        return len(self.over)

    def to_frame(self, quarter, strategy) -> pd.DataFrame:
        rows = [(str(quarter), strategy, "over", a) for a in sorted(self.over)]
        rows += [(str(quarter), strategy, "under", a) for a in sorted(self.under)]
        return pd.DataFrame(rows, columns=["quarter", "strategy", "side", "asset_id"])


def _finite_series(scores) -> pd.Series:
    s = scores if isinstance(scores, pd.Series) else pd.Series(dict(scores), dtype=float)
    s = s.astype(float)
    return s[np.isfinite(s.to_numpy())]


def rank_select(scores: Mapping | pd.Series, k: int, direction: str = "top") -> frozenset:
    """The ``k`` highest (``top``) or lowest (``bottom``) scores; ties go to the smaller id."""
    k = check_positive_int(k, "k")
    if direction not in ("top", "bottom"):
        raise ValueError("direction must be 'top' or 'bottom'")
    s = _finite_series(scores)
    if len(s) < 2 * k:
        raise InsufficientUniverseError(f"need at least {2 * k} scored assets, got {len(s)}")
    sign = -1.0 if direction == "top" else 1.0
    order = sorted(s.index, key=lambda a: (sign * s[a], a))
    return frozenset(order[:k])


def default_grid(step=DEFAULT_GRID_STEP):
    m = int(round(1.0 / step)) - 1
    return np.round(np.arange(1, m + 1) * step, 12)


def _oriented(values, side):
    return values if side == "low" else -values


def corner_counts(a, b, grid):
    """Joint lower-tail counts ``#{a < Q_a(pi) and b < Q_b(pi)}`` for each ``pi`` in ``grid``."""
    n = len(a)
    idx = np.array([max(stable_ceil(n * p), 1) - 1 for p in grid])
    qa = np.sort(a)[idx]
    qb = np.sort(b)[idx]
    inside = (a[None, :] < qa[:, None]) & (b[None, :] < qb[:, None])
    return inside.sum(axis=1), inside


def corner_depth_keys(ids, a, b):
    """Sort keys for trimming: assets with the smallest key are the deepest in the corner.

    With equal normalized thresholds on both scores, the distance of a member
    to the corner boundary is the threshold minus the larger of its two
    normalized ranks, so the larger rank decides; the smaller rank and then the
    asset id break ties.
    """
    n = len(a)
    ra = pd.Series(a).rank(method="min").to_numpy() / n
    rb = pd.Series(b).rank(method="min").to_numpy() / n
    return [(max(x, y), min(x, y), i) for x, y, i in zip(ra, rb, ids)]


def quadrant_select(esg, smis, k: int, corner: Corner, grid=None) -> frozenset:
    """Exactly ``k`` assets from one corner of the joint (ESG, SMIS) distribution.

    Walks the probability grid, takes the first point whose joint corner count
    reaches ``k`` and, on overshoot, keeps the ``k`` members deepest in the
    corner (see :func:`corner_depth_keys`).
    """
    k = check_positive_int(k, "k")
    corner = Corner(corner)
    e = _finite_series(esg)
    s = _finite_series(smis)
    if set(e.index) != set(s.index):
        raise ValueError("ESG and SMIS scores must cover the same assets")
    ids = sorted(e.index)
    if len(ids) < 2 * k:
        raise InsufficientUniverseError(f"need at least {2 * k} scored assets, got {len(ids)}")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)

    esg_side, smis_side = corner.value
    a = _oriented(e[ids].to_numpy(), esg_side)
    b = _oriented(s[ids].to_numpy(), smis_side)
    counts, inside = corner_counts(a, b, grid)
    hit = np.flatnonzero(counts >= k)
    if hit.size == 0:
        raise InfeasibleCornerError(corner.name, k, int(counts.max()))
    members = np.flatnonzero(inside[hit[0]])
    if len(members) > k:
        keys = corner_depth_keys(ids, a, b)
        members = sorted(members, key=lambda j: keys[j])[:k]
    return frozenset(ids[j] for j in members)


def build_selection(strategy: StrategySpec, cross_section: pd.DataFrame, *, rng=None,
                    grid=None) -> SelectionResult:
    """Over/under sets for one quarter.

    ``cross_section`` is indexed by asset id with columns ``esg`` and ``smis``.
    For the random strategy ``rng`` (a numpy Generator) is used when given,
    otherwise a fresh generator seeded with ``strategy.seed``.
    """
    kind, k = strategy.kind, strategy.k
    cs = cross_section[["esg", "smis"]].astype(float)
    cs = cs[np.isfinite(cs.to_numpy()).all(axis=1)]

    if kind is StrategyKind.TOP_ESG:
        return SelectionResult(rank_select(cs["esg"], k, "top"), rank_select(cs["esg"], k, "bottom"))
    if kind is StrategyKind.TOP_SMIS:
        return SelectionResult(rank_select(cs["smis"], k, "top"), rank_select(cs["smis"], k, "bottom"))
    if kind is StrategyKind.RANDOM:
        ids = np.array(sorted(cs.index))
        if len(ids) < 2 * k:
            raise InsufficientUniverseError(f"need at least {2 * k} assets, got {len(ids)}")
        rng = np.random.default_rng(strategy.seed) if rng is None else rng
        pick = rng.choice(len(ids), size=2 * k, replace=False)
        return SelectionResult(ids[pick[:k]].tolist(), ids[pick[k:]].tolist())

    over_c, under_c = _CORNERS[kind]
    over = quadrant_select(cs["esg"], cs["smis"], k, over_c, grid)
    under = quadrant_select(cs["esg"], cs["smis"], k, under_c, grid)
    if over & under:
        raise InsufficientUniverseError(
            f"{over_c.name} and {under_c.name} corners share {len(over & under)} assets at k={k}")
    return SelectionResult(over, under)
