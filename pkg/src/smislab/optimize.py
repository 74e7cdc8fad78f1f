"""Benchmark-relative portfolio optimizers.

The two tail-risk problems (CVaR, expectile EVaR) are linear programs solved
with HiGHS through :func:`scipy.optimize.linprog`. Minimum variance and the
homogenized maximum-Sharpe problem are quadratic programs handed to Clarabel
through cvxpy. Every problem is solved on internally rescaled returns so that
the solver sees numbers of order one; weights are scale free and objectives
are recomputed from the unscaled scenarios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import cvxpy as cp
import numpy as np
import pandas as pd
from scipy.optimize import linprog
from sklearn.base import BaseEstimator

from ._validation import check_open_unit, check_scenarios
from .exceptions import AssumptionViolatedError
from .risk import cvar_alpha, evar_alpha, tail_count

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-8
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
_CLARABEL = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10, "max_iter": 500}


class SolverStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class ScenarioSet:
    """Equally likely return scenarios: rows are scenarios, columns assets."""

    returns: np.ndarray
    asset_ids: tuple = ()

    def __post_init__(self):
        R = check_scenarios(self.returns, min_rows=2, min_cols=1)
        object.__setattr__(self, "returns", R)
        ids = tuple(self.asset_ids) or tuple(range(R.shape[1]))
        if len(ids) != R.shape[1]:
            raise ValueError(f"{len(ids)} asset ids for {R.shape[1]} columns")
        object.__setattr__(self, "asset_ids", ids)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame):
        return cls(frame.to_numpy(dtype=float), tuple(frame.columns))

    @property
    def T(self):
        return self.returns.shape[0]

    @property
    def n(self):
        return self.returns.shape[1]

    @property
    def probabilities(self):
        return np.full(self.T, 1.0 / self.T)

    @property
    def mean(self):
        return self.returns.mean(axis=0)

    @property
    def covariance(self):
        return np.atleast_2d(np.cov(self.returns, rowvar=False, ddof=1))


@dataclass(frozen=True)
class BoundSpec:
    """Per-asset weight bounds. The budget condition ``sum(lb) <= 1 <= sum(ub)``
    is not enforced here; solvers report it as ``Infeasible``."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=float).ravel()
        ub = np.asarray(self.ub, dtype=float).ravel()
        if lb.shape != ub.shape:
            raise ValueError("lb and ub differ in length")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("bounds must be finite")
        if np.any(lb < 0) or np.any(ub > 1) or np.any(lb > ub):
            raise ValueError("bounds must satisfy 0 <= lb <= ub <= 1")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def slack(cls, n):
        return cls(np.zeros(n), np.ones(n))

    @property
    def budget_feasible(self):
        return self.lb.sum() <= 1.0 + BOUND_TOL and self.ub.sum() >= 1.0 - BOUND_TOL


@dataclass(frozen=True)
class OptimalPortfolio:
    weights: np.ndarray
    objective_value: float
    solver_status: SolverStatus
    asset_ids: tuple = ()

    @property
    def ok(self):
        return self.solver_status is SolverStatus.OPTIMAL

    def as_series(self) -> pd.Series:
        ids = self.asset_ids or range(len(self.weights))
        return pd.Series(self.weights, index=list(ids), name="weight")


def bounds_from_sets(benchmark_weights: pd.Series, over_set=(), under_set=()) -> BoundSpec:
    """Over-set assets may not fall below their benchmark weight, under-set
    assets may not rise above it; all other assets are free in [0, 1]."""
    over, under = set(over_set), set(under_set)
    both = over & under
    if both:
        raise ValueError(f"assets in both sets: {sorted(both)[:5]}")
    missing = (over | under) - set(benchmark_weights.index)
    if missing:
        raise ValueError(f"set members without a benchmark weight: {sorted(missing)[:5]}")
    w = benchmark_weights.astype(float)
    lb = np.where(w.index.isin(list(over)), w.to_numpy(), 0.0)
    ub = np.where(w.index.isin(list(under)), w.to_numpy(), 1.0)
    return BoundSpec(lb, ub)


# ---------------------------------------------------------------------------
# helpers


def _prepare(scenarios, bounds):
    if not isinstance(scenarios, ScenarioSet):
        scenarios = ScenarioSet(scenarios)
    if bounds is None:
        bounds = BoundSpec.slack(scenarios.n)
    if len(bounds.lb) != scenarios.n:
        raise ValueError(f"bounds cover {len(bounds.lb)} assets, scenarios {scenarios.n}")
    return scenarios, bounds


def _scale(R):
    s = float(np.std(R))
    if not s > 0:
        s = float(np.max(np.abs(R)))
    return 1.0 / s if s > 0 else 1.0


def _max_linear(c, bounds, mean=None, mean_floor=None):
    """``max c'w`` over the budget/bounds/mean-floor polytope; None if empty."""
    n = len(c)
    A_ub = b_ub = None
    if mean_floor is not None:
        A_ub, b_ub = -mean[None, :], [-mean_floor]
    res = linprog(-np.asarray(c, dtype=float), A_ub=A_ub, b_ub=b_ub, A_eq=np.ones((1, n)), b_eq=[1.0],
                  bounds=list(zip(bounds.lb, bounds.ub)), method="highs", options=_HIGHS)
    if res.status != 0:
        return None
    return float(-res.fun), res.x


def _feasible(scen, bounds, mean_floor, scale):
    if not bounds.budget_feasible:
        return False
    if mean_floor is None:
        return _max_linear(np.zeros(scen.n), bounds) is not None
    mu = scen.mean * scale
    best = _max_linear(mu, bounds)
    return best is not None and best[0] >= mean_floor * scale - 1e-12 * max(1.0, abs(mean_floor * scale))


def polish(w, bounds):
    """Clip to bounds and spread the budget residual over the available room."""
    w = np.clip(np.asarray(w, dtype=float), bounds.lb, bounds.ub)
    for _ in range(5):
        resid = 1.0 - w.sum()
        if abs(resid) <= 1e-15:
            break
        room = (bounds.ub - w) if resid > 0 else (w - bounds.lb)
        total = room.sum()
        if total <= 0:
            break
        w = np.clip(w + resid * room / total, bounds.lb, bounds.ub)
    return w


def _infeasible(scen):
    return OptimalPortfolio(np.full(scen.n, np.nan), float("nan"), SolverStatus.INFEASIBLE, scen.asset_ids)


def _linprog_status(res):
    if res.status == 0:
        return SolverStatus.OPTIMAL
    if res.status == 1:
        return SolverStatus.MAX_ITER
    return SolverStatus.INFEASIBLE


def _cvx_status(problem):
    if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return SolverStatus.OPTIMAL
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolverStatus.INFEASIBLE
    return SolverStatus.MAX_ITER


def _psd_factor(cov):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.all(np.isfinite(cov)):
        raise ValueError("covariance must be a finite square matrix")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise ValueError("covariance is not symmetric")
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    if vals.min() < 0:
        logger.info("clipping %d negative covariance eigenvalues (min %.3g)", (vals < 0).sum(), vals.min())
        vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)).T


# ---------------------------------------------------------------------------
# problems


def min_variance(scenarios, bounds: BoundSpec | None = None, mean_floor: float | None = None,
                 *, covariance=None) -> OptimalPortfolio:
    """Minimize ``w' S w`` under budget, bounds and an optional mean floor.

    ``S`` is the sample covariance of the scenarios unless ``covariance`` is
    given; a supplied matrix has negative eigenvalues clipped to zero.
    """
    scen, bounds = _prepare(scenarios, bounds)
    c = _scale(scen.returns)
    if not _feasible(scen, bounds, mean_floor, c):
        return _infeasible(scen)
    if covariance is None:
        A = (scen.returns - scen.mean) * c / np.sqrt(scen.T - 1)
        cov = scen.covariance
    else:
        A = _psd_factor(np.asarray(covariance) * c * c)
        cov = np.asarray(covariance, dtype=float)
    w = cp.Variable(scen.n)
    cons = [cp.sum(w) == 1, w >= bounds.lb, w <= bounds.ub]
    if mean_floor is not None:
        cons.append((scen.mean * c) @ w >= mean_floor * c)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(A @ w)), cons)
    prob.solve(solver=cp.CLARABEL, **_CLARABEL)
    status = _cvx_status(prob)
    if w.value is None:
        return OptimalPortfolio(np.full(scen.n, np.nan), float("nan"), status, scen.asset_ids)
    x = polish(w.value, bounds)
    return OptimalPortfolio(x, float(x @ cov @ x), status, scen.asset_ids)


def min_cvar(scenarios, bounds: BoundSpec | None = None, mean_floor: float | None = None,
             alpha: float = 0.95) -> OptimalPortfolio:
    """Minimize the discrete CVaR (mean of the worst ``ceil((1-alpha)T)`` losses).

    Linear program over ``(w, zeta, u)``: ``zeta + sum(u) / m`` with
    ``u_t >= -r_t'w - zeta``, ``u >= 0`` and ``m`` the tail count, so the
    optimum equals :func:`smislab.risk.cvar_alpha` of the optimal returns.
    """
    alpha = check_open_unit(alpha, "alpha")
    scen, bounds = _prepare(scenarios, bounds)
    c = _scale(scen.returns)
    if not _feasible(scen, bounds, mean_floor, c):
        return _infeasible(scen)
    R = scen.returns * c
    T, n = R.shape
    m = tail_count(T, alpha)
    cost = np.concatenate((np.zeros(n), [1.0], np.full(T, 1.0 / m)))
    # -R w - zeta - u <= 0
    A_ub = np.hstack((-R, -np.ones((T, 1)), -np.eye(T)))
    b_ub = np.zeros(T)
    if mean_floor is not None:
        row = np.concatenate((-R.mean(axis=0), [0.0], np.zeros(T)))
        A_ub = np.vstack((A_ub, row))
        b_ub = np.append(b_ub, -mean_floor * c)
    A_eq = np.concatenate((np.ones(n), [0.0], np.zeros(T)))[None, :]
    bnds = list(zip(bounds.lb, bounds.ub)) + [(None, None)] + [(0, None)] * T
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bnds,
                  method="highs", options=_HIGHS)
    status = _linprog_status(res)
    if res.x is None:
        return OptimalPortfolio(np.full(n, np.nan), float("nan"), status, scen.asset_ids)
    w = polish(res.x[:n], bounds)
    return OptimalPortfolio(w, cvar_alpha(scen.returns @ w, alpha), status, scen.asset_ids)


def min_evar(scenarios, bounds: BoundSpec | None = None, mean_floor: float | None = None,
             alpha: float = 0.95) -> OptimalPortfolio:
    """Minimize the expectile risk ``-e_tau(Rw)`` with ``tau = 1 - alpha``.

    For ``tau <= 1/2`` a level ``e`` lies below the ``tau``-expectile of ``X``
    exactly when ``(1 - 2 tau) E[(e - X)_+] <= tau (E[X] - e)``, a convex
    condition. Maximizing ``e`` under it (with an epigraph vector for the
    positive part) is a linear program.
    """
    alpha = check_open_unit(alpha, "alpha")
    if alpha < 0.5:
        raise ValueError(f"expectile risk is convex only for alpha >= 0.5, got {alpha}")
    tau = 1.0 - alpha
    scen, bounds = _prepare(scenarios, bounds)
    c = _scale(scen.returns)
    if not _feasible(scen, bounds, mean_floor, c):
        return _infeasible(scen)
    R = scen.returns * c
    T, n = R.shape
    mu = R.mean(axis=0)
    # variables (w, e, u); minimize -e
    cost = np.concatenate((np.zeros(n), [-1.0], np.zeros(T)))
    # e - r_t'w - u_t <= 0
    A_ub = np.hstack((-R, np.ones((T, 1)), -np.eye(T)))
    b_ub = np.zeros(T)
    # (1 - 2 tau) mean(u) - tau mu'w + tau e <= 0
    row = np.concatenate((-tau * mu, [tau], np.full(T, (1 - 2 * tau) / T)))
    A_ub = np.vstack((A_ub, row))
    b_ub = np.append(b_ub, 0.0)
    if mean_floor is not None:
        A_ub = np.vstack((A_ub, np.concatenate((-mu, [0.0], np.zeros(T)))))
        b_ub = np.append(b_ub, -mean_floor * c)
    A_eq = np.concatenate((np.ones(n), [0.0], np.zeros(T)))[None, :]
    bnds = list(zip(bounds.lb, bounds.ub)) + [(None, None)] + [(0, None)] * T
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bnds,
                  method="highs", options=_HIGHS)
    status = _linprog_status(res)
    if res.x is None:
        return OptimalPortfolio(np.full(n, np.nan), float("nan"), status, scen.asset_ids)
    w = polish(res.x[:n], bounds)
    return OptimalPortfolio(w, evar_alpha(scen.returns @ w, alpha), status, scen.asset_ids)


def sharpe_ratio(returns, risk_free=0.0):
    r = np.asarray(returns, dtype=float)
    sd = r.std(ddof=1)
    return float((r.mean() - risk_free) / sd) if sd > 0 else float("nan")


def max_sharpe(scenarios, bounds: BoundSpec | None = None, risk_free: float = 0.0,
               mean_floor: float | None = None) -> OptimalPortfolio:
    """Tangency portfolio under bounds, via the homogenized quadratic program.

    Solves ``min x' S x`` subject to ``(mu - rf)'x = 1``, ``sum(x) = y``,
    ``y lb <= x <= y ub`` and ``y >= 0``, then returns ``w = x / y``. The
    objective value is the per-scenario Sharpe ratio of ``w``.
    """
    scen, bounds = _prepare(scenarios, bounds)
    c = _scale(scen.returns)
    if not _feasible(scen, bounds, mean_floor, c):
        return _infeasible(scen)
    excess = scen.mean - risk_free
    best = _max_linear(excess * c, bounds, scen.mean * c,
                       None if mean_floor is None else mean_floor * c)
    if best is None or best[0] <= 0:
        raise AssumptionViolatedError("no feasible portfolio earns more than the risk-free rate")
    if scen.n == 1:
        w = np.ones(1)
        return OptimalPortfolio(w, sharpe_ratio(scen.returns @ w, risk_free), SolverStatus.OPTIMAL,
                                scen.asset_ids)
    A = (scen.returns - scen.mean) * c / np.sqrt(scen.T - 1)
    x = cp.Variable(scen.n)
    y = cp.Variable(nonneg=True)
    cons = [(excess * c) @ x == 1, cp.sum(x) == y, x >= y * bounds.lb, x <= y * bounds.ub]
    if mean_floor is not None:
        cons.append((scen.mean * c) @ x >= (mean_floor * c) * y)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(A @ x)), cons)
    prob.solve(solver=cp.CLARABEL, **_CLARABEL)
    status = _cvx_status(prob)
    if x.value is None or y.value is None or y.value <= 0:
        return OptimalPortfolio(np.full(scen.n, np.nan), float("nan"),
                                SolverStatus.MAX_ITER if status is SolverStatus.OPTIMAL else status,
                                scen.asset_ids)
    w = polish(x.value / y.value, bounds)
    return OptimalPortfolio(w, sharpe_ratio(scen.returns @ w, risk_free), status, scen.asset_ids)


OBJECTIVES = ("variance", "cvar", "evar", "sharpe")


class PortfolioOptimizer(BaseEstimator):
    """Estimator wrapper around the four problems.

    ``fit(R)`` solves on the scenario matrix ``R``; ``predict(R)`` returns the
    scenario returns of the fitted weights.
    """

    def __init__(self, objective="cvar", alpha=0.95, risk_free=0.0):
        self.objective = objective
        self.alpha = alpha
        self.risk_free = risk_free

    def fit(self, X, y=None, *, lb=None, ub=None, mean_floor=None):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        ids = tuple(X.columns) if isinstance(X, pd.DataFrame) else ()
        scen = ScenarioSet(np.asarray(X, dtype=float), ids)
        n = scen.n
        bounds = BoundSpec(np.zeros(n) if lb is None else lb, np.ones(n) if ub is None else ub)
        if self.objective == "variance":
            res = min_variance(scen, bounds, mean_floor)
        elif self.objective == "cvar":
            res = min_cvar(scen, bounds, mean_floor, self.alpha)
        elif self.objective == "evar":
            res = min_evar(scen, bounds, mean_floor, self.alpha)
        else:
            res = max_sharpe(scen, bounds, self.risk_free, mean_floor)
        self.result_ = res
        self.weights_ = res.weights
        self.objective_value_ = res.objective_value
        self.status_ = res.solver_status
        self.n_features_in_ = n
        return self

    def predict(self, X):
        if not hasattr(self, "weights_"):
            raise AttributeError("call fit before predict")
        R = check_scenarios(X, min_rows=1)
        if R.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {R.shape[1]}")
        return R @ self.weights_
