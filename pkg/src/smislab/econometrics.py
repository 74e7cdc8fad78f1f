"""Location-scale quantile regression by the method of moments, VIF and the SMIS panel.

The model is ``y = X beta + (X gamma) u``. Least squares of ``y`` on ``X``
gives ``beta`` and residuals ``r``; least squares of ``|r|`` on ``X`` gives
``gamma`` and fitted scales ``s``; ``q(tau)`` is the ``tau``-quantile of
``r / s``. The conditional quantile coefficients are ``beta + q(tau) gamma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_design
from .data import ESG_COVARIATES, AlignedDataset
from .exceptions import RankDeficientError, ScaleClipError
from .risk import type1_quantile

logger = logging.getLogger(__name__)

DEFAULT_TAUS = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)
SCALE_FLOOR = 1e-6
MAX_CLIP_FRACTION = 0.05


def _names(X, n_cols):
    if isinstance(X, pd.DataFrame):
        return [str(c) for c in X.columns]
    return [f"x{j}" for j in range(n_cols)]


@dataclass(frozen=True)
class OlsResult:
    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray


def ols(X, y, names=None) -> OlsResult:
    """Least squares through a column-pivoted QR factorization.

    Raises :class:`RankDeficientError` naming the columns that the pivoting
    found to be linear combinations of the others.
    """
    names = names or _names(X, np.shape(X)[1])
    X, y = check_design(X, y)
    n, p = X.shape
    if n < p:
        raise RankDeficientError(names)
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < p:
        raise RankDeficientError([names[j] for j in sorted(piv[rank:])])
    z = linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(p)
    coef[piv] = z
    fitted = X @ coef
    return OlsResult(coef, y - fitted, fitted)


def vif(X, names=None) -> pd.Series:
    """Variance inflation factors ``1 / (1 - R^2_j)``, each column on the others plus a constant.

    Perfectly collinear columns get ``inf``.
    """
    names = names or _names(X, np.shape(X)[1])
    X = check_design(X)
    n, p = X.shape
    if p < 2:
        raise ValueError("vif needs at least two regressors")
    if np.any(X.std(axis=0) == 0):
        raise ValueError("every regressor needs positive variance")
    out = {}
    for j in range(p):
        others = np.column_stack((np.ones(n), np.delete(X, j, axis=1)))
        y = X[:, j]
        try:
            res = ols(others, y)
        except RankDeficientError:
            # the others are collinear among themselves; drop to a basis first
            Q, R, piv = linalg.qr(others, mode="economic", pivoting=True)
            d = np.abs(np.diag(R))
            keep = np.sort(piv[: int((d > max(others.shape) * np.finfo(float).eps * d[0]).sum())])
            res = ols(others[:, keep], y)
        sst = float(((y - y.mean()) ** 2).sum())
        ssr = float((res.residuals ** 2).sum())
        r2 = 1.0 - ssr / sst
        out[names[j]] = np.inf if ssr <= 1e-12 * sst else 1.0 / (1.0 - r2)
    return pd.Series(out, name="vif")


class MMQR(RegressorMixin, BaseEstimator):
    """Method-of-moments location-scale quantile regression.

    Parameters
    ----------
    taus : sequence of float
        Quantile levels in (0, 1).
    fit_intercept : bool
        Prepend a constant column named ``const``.
    max_clip_fraction : float
        Share of non-positive fitted scales tolerated before failing.

    Attributes
    ----------
    location_, scale_ : ndarray
        ``beta`` and ``gamma``.
    q_ : ndarray
        Standardized-residual quantile per tau.
    coef_ : ndarray of shape (n_taus, n_coef)
        ``beta + q(tau) gamma``.
    n_clipped_ : int
        Fitted scales raised to the positive floor.
    """

    def __init__(self, taus=DEFAULT_TAUS, fit_intercept=True, max_clip_fraction=MAX_CLIP_FRACTION):
        self.taus = taus
        self.fit_intercept = fit_intercept
        self.max_clip_fraction = max_clip_fraction

    def _design(self, X):
        A = check_design(X)
        if self.fit_intercept:
            A = np.column_stack((np.ones(A.shape[0]), A))
        return A

    def fit(self, X, y):
        taus = np.asarray(self.taus, dtype=float).ravel()
        if taus.size == 0 or np.any((taus <= 0) | (taus >= 1)):
            raise ValueError("taus must lie in (0, 1)")
        names = _names(X, np.shape(X)[1])
        if self.fit_intercept:
            names = ["const"] + names
        A = self._design(X)
        _, y = check_design(A, y)

        loc = ols(A, y, names)
        sc = ols(A, np.abs(loc.residuals), names)
        s = sc.fitted
        bad = s <= 0
        n_bad = int(bad.sum())
        if n_bad:
            frac = n_bad / len(s)
            if frac > self.max_clip_fraction:
                raise ScaleClipError(f"{n_bad} of {len(s)} fitted scales are non-positive ({frac:.1%})")
            floor = SCALE_FLOOR * float(np.mean(np.abs(s)))
            logger.warning("clipping %d non-positive fitted scales to %.3g", n_bad, floor)
            s = np.where(bad, floor, s)
        z = loc.residuals / s
        q = np.array([type1_quantile(z, t) for t in taus])

        self.taus_ = taus
        self.feature_names_ = names
        self.location_ = loc.coef
        self.scale_ = sc.coef
        self.q_ = q
        self.coef_ = loc.coef[None, :] + q[:, None] * sc.coef[None, :]
        self.n_clipped_ = n_bad
        self.n_features_in_ = A.shape[1] - int(self.fit_intercept)
        self.n_obs_ = A.shape[0]
        return self

    def predict(self, X):
        """Conditional quantiles, one column per tau (1-D when a single tau was fitted)."""
        check_is_fitted(self, "coef_")
        pred = self._design(X) @ self.coef_.T
        return pred[:, 0] if pred.shape[1] == 1 else pred

    def score(self, X, y, sample_weight=None):
        # RegressorMixin's R^2 is not meaningful for several quantiles at once
        if len(self.taus_) != 1:
            raise ValueError("score is defined for a single tau only")
        return super().score(X, y, sample_weight)


@dataclass
class MmqrFit:
    taus: np.ndarray
    names: list
    location_beta: np.ndarray
    scale_gamma: np.ndarray
    q_values: np.ndarray
    coefficients: np.ndarray
    n_obs: int
    n_clipped: int = 0
    std_errors: np.ndarray | None = None
    n_bootstrap: int = 0

    def table(self) -> pd.DataFrame:
        """Long layout: one row per (regressor, stat), one column per tau."""
        cols = [f"tau_{t:g}" for t in self.taus]
        parts = [pd.DataFrame(self.coefficients.T, columns=cols).assign(regressor=self.names, stat="coef")]
        if self.std_errors is not None:
            parts.append(pd.DataFrame(self.std_errors.T, columns=cols).assign(regressor=self.names, stat="se"))
        df = pd.concat(parts, ignore_index=True)
        order = {n: i for i, n in enumerate(self.names)}
        df["_o"] = df["regressor"].map(order)
        df = df.sort_values(["_o", "stat"], kind="mergesort").drop(columns="_o")
        return df[["regressor", "stat"] + cols].reset_index(drop=True)

    def to_csv(self, path):
        self.table().to_csv(path, index=False, float_format="%.10g")
        return Path(path)


@dataclass
class RegressionPanel:
    """Rows keyed by ``(asset_id, quarter)``; ``y`` is SMIS in percent."""

    y: pd.Series
    X: pd.DataFrame
    dropped: dict = field(default_factory=dict)

    @property
    def groups(self):
        return self.X.index.get_level_values("asset_id")


def standardized_emission(total_emission, total_assets):
    """``log(1 + emission / assets)``."""
    e = np.asarray(total_emission, dtype=float)
    a = np.asarray(total_assets, dtype=float)
    if np.any(a <= 0):
        raise ValueError("total assets must be positive")
    if np.any(e < 0):
        raise ValueError("emissions must be non-negative")
    return np.log1p(e / a)


def build_regression_panel(dataset: AlignedDataset, scores, *, regressors=("esg_score",) + ESG_COVARIATES,
                           sector_dummies=True) -> RegressionPanel:
    """SMIS of quarter ``Q`` (in percent) against annual characteristics as of ``Q-1``.

    Annual records are broadcast to quarters by calendar year, so the regressors
    of quarter ``Q`` are the records of ``year(Q-1)``. When the ESG frame has raw
    ``total_emission`` and ``total_assets`` columns the standardized emission is
    recomputed from them. Incomplete rows are dropped and counted by reason.
    """
    frame = scores.frame if hasattr(scores, "frame") else scores
    esg = dataset.esg.copy()
    if {"total_emission", "total_assets"} <= set(esg.columns):
        ok = esg["total_emission"].notna() & esg["total_assets"].notna()
        esg.loc[ok, "std_total_emission"] = standardized_emission(esg.loc[ok, "total_emission"],
                                                                  esg.loc[ok, "total_assets"])
    df = frame[["asset_id", "quarter", "smis"]].copy()
    df["year"] = [(q - 1).year for q in df["quarter"]]
    rec = esg.reset_index()[["asset_id", "year", *regressors, "gics_sector"]]
    df = df.merge(rec, on=["asset_id", "year"], how="left")

    dropped = {}
    no_sector = df["gics_sector"].isna()
    if no_sector.any():
        dropped["missing gics_sector"] = int(no_sector.sum())
    missing = df[list(regressors)].isna().any(axis=1) & ~no_sector
    if missing.any():
        dropped["missing regressor"] = int(missing.sum())
    nan_y = df["smis"].isna() & ~no_sector & ~missing
    if nan_y.any():
        dropped["missing smis"] = int(nan_y.sum())
    df = df[~(no_sector | missing | nan_y)]
    if dropped:
        logger.info("regression panel dropped rows: %s", dropped)

    df = df.sort_values(["quarter", "asset_id"], kind="mergesort")
    X = df[list(regressors)].astype(float)
    if sector_dummies:
        dummies = pd.get_dummies(df["gics_sector"], prefix="sector", drop_first=True, dtype=float)
        X = pd.concat([X, dummies], axis=1)
    idx = pd.MultiIndex.from_arrays([df["asset_id"], df["quarter"]], names=["asset_id", "quarter"])
    X.index = idx
    y = pd.Series(100.0 * df["smis"].to_numpy(), index=idx, name="smis_pct")
    return RegressionPanel(y, X, dropped)


def _cluster_draw(groups, rng):
    uniq = np.unique(groups)
    pick = rng.choice(uniq, size=uniq.size, replace=True)
    pos = {g: np.flatnonzero(groups == g) for g in uniq}
    return np.concatenate([pos[g] for g in pick])


def mmqr_fit(panel: RegressionPanel | tuple, taus=DEFAULT_TAUS, *, bootstrap=0, seed=0) -> MmqrFit:
    """Fit :class:`MMQR` on a panel, optionally with asset-clustered bootstrap errors."""
    if isinstance(panel, RegressionPanel):
        X, y, groups = panel.X, panel.y.to_numpy(), np.asarray(panel.groups)
    else:
        X, y = panel
        y = np.asarray(y, dtype=float)
        groups = np.arange(len(y))
    est = MMQR(taus=tuple(taus)).fit(X, y)
    se = None
    if bootstrap:
        streams = np.random.SeedSequence(seed).spawn(bootstrap)
        Xa = np.asarray(X, dtype=float)
        draws = []
        for ss in streams:
            rows = _cluster_draw(groups, np.random.default_rng(ss))
            try:
                draws.append(MMQR(taus=tuple(taus)).fit(Xa[rows], y[rows]).coef_)
            except (RankDeficientError, ScaleClipError) as exc:
                logger.debug("bootstrap draw skipped: %s", exc)
        if len(draws) < 2:
            raise ScaleClipError("fewer than two bootstrap draws could be fitted")
        se = np.std(np.stack(draws), axis=0, ddof=1)
    return MmqrFit(est.taus_, est.feature_names_, est.location_, est.scale_, est.q_, est.coef_,
                   est.n_obs_, est.n_clipped_, se, bootstrap)
