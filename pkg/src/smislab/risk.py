"""Return series and the performance/risk metric panel.

Conventions:

* empirical quantiles are inverse-CDF (type 1): the ``p``-quantile of a sorted
  sample ``x_(1) <= ... <= x_(T)`` is ``x_(ceil(T p))`` (``x_(1)`` for ``p = 0``);
* VaR, CVaR and EVaR are reported as positive losses at the daily horizon;
* CVaR averages the worst ``ceil((1 - alpha) T)`` scenarios;
* EVaR at level ``alpha`` is minus the ``(1 - alpha)``-expectile.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from ._validation import check_open_unit, check_sample, stable_ceil

ANNUALIZATION = 250
HELD_EPS = 1e-8

METRIC_NAMES = ("mean", "VaR", "EVaR", "CVaR", "std", "Sharpe", "maxDD", "turnover",
                "n_assets", "max_w", "HHI")


def simple_returns(prices) -> pd.Series | np.ndarray:
    """``r_t = p_t / p_{t-1} - 1``; keeps the index when given a Series."""
    if isinstance(prices, pd.Series):
        if len(prices) < 2:
            raise ValueError("need at least two prices")
        return (prices / prices.shift(1) - 1.0).iloc[1:]
    if hasattr(prices, "prices") and hasattr(prices, "dates"):
        s = pd.Series(np.asarray(prices.prices, dtype=float), index=prices.dates)
        return simple_returns(s)
    p = np.asarray(prices, dtype=float)
    if p.shape[0] < 2:
        raise ValueError("need at least two prices")
    return p[1:] / p[:-1] - 1.0


def type1_quantile(x, p):
    """Inverse-CDF empirical quantile of a 1-D sample."""
    x = np.sort(check_sample(x))
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    k = max(stable_ceil(len(x) * p), 1)
    return float(x[k - 1])


def var_alpha(returns, alpha=0.95):
    """Historical Value-at-Risk: minus the ``(1 - alpha)`` type-1 quantile."""
    alpha = check_open_unit(alpha, "alpha")
    return -type1_quantile(returns, 1.0 - alpha)


def tail_count(n, alpha):
    """Number of scenarios in the discrete ``(1 - alpha)`` tail."""
    return max(stable_ceil((1.0 - alpha) * n), 1)


def cvar_alpha(returns, alpha=0.95):
    """Mean loss over the worst ``ceil((1 - alpha) T)`` observations."""
    alpha = check_open_unit(alpha, "alpha", low_closed=True)
    x = np.sort(check_sample(returns))
    m = tail_count(len(x), alpha)
    return float(-x[:m].mean())


def expectile(sample, tau):
    """The ``tau``-expectile of an equally weighted sample.

    Solves ``tau E[(X - e)_+] = (1 - tau) E[(e - X)_+]``. The balance function
    is piecewise linear and strictly decreasing in ``e``, so the root is located
    between consecutive order statistics and solved for in closed form.
    """
    tau = check_open_unit(tau, "tau")
    x = np.sort(check_sample(sample, "sample"))
    n = len(x)
    if x[0] == x[-1]:
        return float(x[0])
    # at e = x_(j) (0-based j): below = #{x <= e}, sums split at j
    csum = np.concatenate(([0.0], np.cumsum(x)))
    total = csum[-1]
    j = np.arange(n)
    below_cnt = j + 1
    below_sum = csum[1:]
    above_sum = total - below_sum
    above_cnt = n - below_cnt
    # f(x_j) = tau*(above_sum - above_cnt*x_j) - (1-tau)*(below_cnt*x_j - below_sum)
    f = tau * (above_sum - above_cnt * x) - (1 - tau) * (below_cnt * x - below_sum)
    # f decreases; the root lies in [x_k, x_{k+1}] where f(x_k) >= 0 > f(x_{k+1})
    k = int(np.searchsorted(-f, 0.0, side="right")) - 1
    k = min(max(k, 0), n - 1)
    a_cnt, a_sum = above_cnt[k], above_sum[k]
    b_cnt, b_sum = below_cnt[k], below_sum[k]
    # linear on the segment: tau*(a_sum - a_cnt e) = (1-tau)*(b_cnt e - b_sum)
    e = (tau * a_sum + (1 - tau) * b_sum) / (tau * a_cnt + (1 - tau) * b_cnt)
    return float(np.clip(e, x[0], x[-1]))


def evar_alpha(returns, alpha=0.95):
    """Expectile-based risk: ``-expectile(returns, 1 - alpha)``."""
    alpha = check_open_unit(alpha, "alpha")
    return -expectile(returns, 1.0 - alpha)


def max_drawdown(returns):
    """Largest peak-to-trough fall of the wealth curve started at 1."""
    r = check_sample(returns)
    wealth = np.concatenate(([1.0], np.cumprod(1.0 + r)))
    return wealth_drawdown(wealth)


def wealth_drawdown(wealth):
    w = np.asarray(wealth, dtype=float)
    peak = np.maximum.accumulate(w)
    return float(np.max(1.0 - w / peak))


@dataclass(frozen=True)
class Rebalance:
    """Target weights set at ``date``; ``drifted`` is the pre-trade book (None at inception)."""

    date: pd.Timestamp
    target: pd.Series
    drifted: pd.Series | None = None


@dataclass(frozen=True)
class MetricPanel:
    mean_ann: float
    var95: float
    evar95: float
    cvar95: float
    std_ann: float
    sharpe: float
    max_dd: float
    avg_turnover: float
    avg_n_assets: float
    max_weight: float
    hhi: float

    def as_row(self) -> dict:
        """Values keyed by the report column names, in report order."""
        return dict(zip(METRIC_NAMES, asdict(self).values()))


def turnover(target, drifted):
    """One-sided turnover ``0.5 * sum |target - drifted|`` over the union of assets."""
    t, d = target.align(drifted, fill_value=0.0)
    return 0.5 * float(np.abs(t - d).sum())


def metric_panel(portfolio_returns, rebalances, *, alpha=0.95) -> MetricPanel:
    """The full metric row for one strategy.

    ``portfolio_returns`` is the daily out-of-sample return series (a Series
    with a DatetimeIndex); ``rebalances`` the list of :class:`Rebalance`
    records. Turnover averages over rebalances that have a drifted book, i.e.
    the inception trade is not counted.
    """
    r = pd.Series(portfolio_returns, dtype=float)
    x = check_sample(r.to_numpy(), "portfolio_returns")
    if not rebalances:
        raise ValueError("at least one rebalance is required")
    if isinstance(r.index, pd.DatetimeIndex) and len(r):
        first, last = r.index[0], r.index[-1]
        if pd.Timestamp(rebalances[0].date) >= first:
            raise ValueError(f"first rebalance {rebalances[0].date} is not before the first return {first}")
        for rb in rebalances[1:]:
            if not first <= pd.Timestamp(rb.date) <= last:
                raise ValueError(f"rebalance {rb.date} lies outside the return coverage {first}..{last}")

    mean_d = float(x.mean())
    std_d = float(x.std(ddof=1)) if len(x) > 1 else 0.0
    mean_ann = ANNUALIZATION * mean_d
    std_ann = np.sqrt(ANNUALIZATION) * std_d
    sharpe = mean_ann / std_ann if std_ann > 0 else float("nan")

    tos = [turnover(rb.target, rb.drifted) for rb in rebalances if rb.drifted is not None]
    n_assets = [int((rb.target.abs() > HELD_EPS).sum()) for rb in rebalances]
    max_w = max(float(rb.target.max()) for rb in rebalances)
    hhi = [float((rb.target ** 2).sum()) for rb in rebalances]

    return MetricPanel(
        mean_ann=mean_ann,
        var95=var_alpha(x, alpha),
        evar95=evar_alpha(x, alpha),
        cvar95=cvar_alpha(x, alpha),
        std_ann=std_ann,
        sharpe=sharpe,
        max_dd=max_drawdown(x),
        avg_turnover=float(np.mean(tos)) if tos else 0.0,
        avg_n_assets=float(np.mean(n_assets)),
        max_weight=max_w,
        hhi=float(np.mean(hhi)),
    )
