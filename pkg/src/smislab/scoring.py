"""SMIS (holder-count) and SMISw (mean-weight) scores with significance tests.

For each asset the two fund groups are Article 9 funds and the union of
Article 6 and Article 8 funds; unlabeled funds take no part. Only funds with a
snapshot in the quarter enter the denominators.

The matrix-level functions :func:`smis_score_func` and :func:`smisw_score_func`
follow the ``score_func(X, y) -> (scores, pvalues)`` protocol of
:mod:`sklearn.feature_selection`, with ``X`` a funds x assets weight matrix and
``y`` a boolean "is Article 9" vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .data import AlignedDataset, HoldingsPanel, SfdrLabel, parse_quarter
from .exceptions import DegenerateTestError, DegreesOfFreedomError, EmptyGroupError

logger = logging.getLogger(__name__)

SIGNIFICANCE = 0.10

SCORES_CSV_COLUMNS = ["asset_id", "quarter", "smis", "p9", "p_other", "z", "p_value",
                      "smisw", "w9", "w_other", "t", "p_value_w"]


def smis_test(s1, n1, s2, n2):
    """Two-proportion z-test with pooled proportion; returns ``(z, two_sided_p)``."""
    if n1 < 1 or n2 < 1:
        raise ValueError("group sizes must be >= 1")
    if not (0 <= s1 <= n1 and 0 <= s2 <= n2):
        raise ValueError(f"holder counts out of range: s1={s1}/{n1}, s2={s2}/{n2}")
    pooled = (s1 + s2) / (n1 + n2)
    if pooled <= 0.0 or pooled >= 1.0:
        raise DegenerateTestError(f"pooled proportion is {pooled}; z-test undefined")
    z = (s1 / n1 - s2 / n2) / np.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    return float(z), float(2 * stats.norm.sf(abs(z)))


def _smis_arrays(held9, held_o):
    n1, n2 = held9.shape[0], held_o.shape[0]
    s1 = held9.sum(axis=0)
    s2 = held_o.sum(axis=0)
    p9 = s1 / n1
    po = s2 / n2
    pooled = (s1 + s2) / (n1 + n2)
    ok = (pooled > 0) & (pooled < 1)
    denom = np.sqrt(np.where(ok, pooled * (1 - pooled), 1.0) * (1 / n1 + 1 / n2))
    z = np.where(ok, (p9 - po) / denom, np.nan)
    p = np.where(ok, 2 * stats.norm.sf(np.abs(z)), np.nan)
    return dict(smis=p9 - po, p9=p9, p_other=po, n1=n1, n2=n2, s1=s1, s2=s2, z=z, p_value=p)


def _smisw_arrays(w9, wo):
    n1, n2 = w9.shape[0], wo.shape[0]
    dof = n1 + n2 - 2
    if dof < 1:
        raise DegreesOfFreedomError(f"n1 + n2 - 2 = {dof}; need at least one degree of freedom")
    m9 = w9.mean(axis=0)
    mo = wo.mean(axis=0)
    ss9 = ((w9 - m9) ** 2).sum(axis=0)
    sso = ((wo - mo) ** 2).sum(axis=0)
    v9 = ss9 / (n1 - 1) if n1 > 1 else np.full_like(m9, np.nan)
    vo = sso / (n2 - 1) if n2 > 1 else np.full_like(mo, np.nan)
    sp = np.sqrt((ss9 + sso) / dof)
    ok = sp > 0
    t = np.where(ok, (m9 - mo) / np.where(ok, sp, 1.0) / np.sqrt(1 / n1 + 1 / n2), np.nan)
    p = np.where(ok, 2 * stats.t.sf(np.abs(t), dof), np.nan)
    return dict(smisw=m9 - mo, w9=m9, w_other=mo, s1_var=v9, s2_var=vo, t=t, dof=dof, p_value_w=p)


def smisw_test(w9, w_other):
    """Pooled-variance t-test on two weight samples; returns ``(t, dof, two_sided_p)``."""
    w9 = np.asarray(w9, dtype=float).reshape(-1, 1)
    wo = np.asarray(w_other, dtype=float).reshape(-1, 1)
    if w9.shape[0] < 1 or wo.shape[0] < 1:
        raise ValueError("both groups need at least one fund")
    r = _smisw_arrays(w9, wo)
    if np.isnan(r["t"][0]):
        raise DegenerateTestError("pooled standard deviation is zero; t-test undefined")
    return float(r["t"][0]), int(r["dof"]), float(r["p_value_w"][0])


def _split(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be funds x assets and y one flag per fund")
    if not y.any():
        raise EmptyGroupError("Art9", "<matrix>")
    if y.all():
        raise EmptyGroupError("Art6/Art8", "<matrix>")
    return X[y], X[~y]


def smis_score_func(X, y):
    """``(smis, p_values)`` per column of a funds x assets weight matrix."""
    X9, Xo = _split(X, y)
    r = _smis_arrays(X9 > 0, Xo > 0)
    return r["smis"], r["p_value"]


def smisw_score_func(X, y):
    """``(smisw, p_values)`` per column of a funds x assets weight matrix."""
    X9, Xo = _split(X, y)
    r = _smisw_arrays(X9, Xo)
    return r["smisw"], r["p_value_w"]


# ---------------------------------------------------------------------------
# panel level


def _panel(dataset):
    return dataset.panel if isinstance(dataset, AlignedDataset) else dataset


def _group_matrices(panel: HoldingsPanel, quarter):
    q = parse_quarter(quarter)
    W = panel.weight_matrix(q)
    if W.empty:
        raise EmptyGroupError("Art9", q)
    labels = panel.funds.loc[W.index, "sfdr_label"]
    is9 = (labels == SfdrLabel.ART9).to_numpy()
    is_other = labels.isin([SfdrLabel.ART6, SfdrLabel.ART8]).to_numpy()
    if not is9.any():
        raise EmptyGroupError("Art9", q)
    if not is_other.any():
        raise EmptyGroupError("Art6/Art8", q)
    W9 = W.to_numpy()[is9]
    Wo = W.to_numpy()[is_other]
    held_any = ((W9 > 0).any(axis=0)) | ((Wo > 0).any(axis=0))
    assets = W.columns[held_any]
    return q, assets, W9[:, held_any], Wo[:, held_any]


def compute_smis(dataset, quarter) -> pd.DataFrame:
    """SMIS per asset held by at least one fund of either group in ``quarter``.

    Returns a frame indexed by ``asset_id`` with ``smis, p9, p_other, n1, n2,
    s1, s2, z, p_value, test_available, significant_90``. Where the pooled
    proportion is 0 or 1 the score is kept and ``z``/``p_value`` are NaN.
    """
    q, assets, W9, Wo = _group_matrices(_panel(dataset), quarter)
    r = _smis_arrays(W9 > 0, Wo > 0)
    out = pd.DataFrame({k: r[k] for k in ("smis", "p9", "p_other", "z", "p_value")},
                       index=pd.Index(assets, name="asset_id"))
    out.insert(3, "n1", r["n1"])
    out.insert(4, "n2", r["n2"])
    out.insert(5, "s1", r["s1"].astype(int))
    out.insert(6, "s2", r["s2"].astype(int))
    out["test_available"] = out["z"].notna()
    out["significant_90"] = out["p_value"] < SIGNIFICANCE
    return out


def compute_smisw(dataset, quarter) -> pd.DataFrame:
    """SMISw per asset; non-holders count as zero weight in each group mean."""
    q, assets, W9, Wo = _group_matrices(_panel(dataset), quarter)
    r = _smisw_arrays(W9, Wo)
    out = pd.DataFrame({k: r[k] for k in ("smisw", "w9", "w_other", "s1_var", "s2_var", "t", "p_value_w")},
                       index=pd.Index(assets, name="asset_id"))
    out.insert(7, "dof", r["dof"])
    out["test_available_w"] = out["t"].notna()
    out["significant_90_w"] = out["p_value_w"] < SIGNIFICANCE
    return out


@dataclass
class ScoreTable:
    """Stacked per-quarter scores. ``gaps`` maps skipped quarters to the reason."""

    frame: pd.DataFrame
    gaps: dict = field(default_factory=dict)

    @property
    def quarters(self):
        return sorted(self.frame["quarter"].unique()) if len(self.frame) else []

    def for_quarter(self, quarter) -> pd.DataFrame:
        q = parse_quarter(quarter)
        f = self.frame[self.frame["quarter"] == q]
        return f.set_index("asset_id")

    def to_csv(self, path):
        out = self.frame[SCORES_CSV_COLUMNS].copy()
        out["quarter"] = out["quarter"].astype(str)
        out.to_csv(path, index=False)
        return Path(path)

    @classmethod
    def read_csv(cls, path):
        df = pd.read_csv(path, dtype={"asset_id": str, "quarter": str})
        df["quarter"] = pd.PeriodIndex(df["quarter"], freq="Q-DEC")
        return cls(df)


def score_quarter(dataset, quarter) -> pd.DataFrame:
    q = parse_quarter(quarter)
    a = compute_smis(dataset, q)
    b = compute_smisw(dataset, q)
    df = a.join(b, how="outer")
    df.insert(0, "quarter", q)
    return df.reset_index()


def score_history(dataset, quarters) -> ScoreTable:
    """Scores for every quarter; quarters that cannot be scored become gaps."""
    frames, gaps = [], {}
    for quarter in quarters:
        q = parse_quarter(quarter)
        try:
            frames.append(score_quarter(dataset, q))
        except (EmptyGroupError, DegreesOfFreedomError) as exc:
            logger.warning("no scores for %s: %s", q, exc)
            gaps[q] = str(exc)
    if frames:
        frame = pd.concat(frames, ignore_index=True)
    else:
        frame = pd.DataFrame(columns=["quarter", "asset_id"] + SCORES_CSV_COLUMNS[2:])
    return ScoreTable(frame, gaps)


__all__ = [
    "ScoreTable", "compute_smis", "compute_smisw", "score_history", "score_quarter",
    "smis_score_func", "smis_test", "smisw_score_func", "smisw_test",
]
