"""Input validation helpers shared by the estimators and functional APIs."""

from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.utils import check_array


def check_open_unit(value, name, *, low_closed=False):
    """Return ``value`` as float after checking it lies in (0, 1) (or [0, 1))."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    ok = (0.0 <= value < 1.0) if low_closed else (0.0 < value < 1.0)
    if not ok:
        interval = "[0, 1)" if low_closed else "(0, 1)"
        raise ValueError(f"{name} must lie in {interval}, got {value}")
    return value


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_sample(x, name="returns"):
    """1-D finite float array with at least one element."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scenarios(R, *, min_rows=2, min_cols=1):
    """2-D finite scenario matrix (rows = scenarios, columns = assets)."""
    R = check_array(R, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_rows,
                    ensure_min_features=min_cols)
    return R


def check_design(X, y=None):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if y is None:
        return X
    y = check_array(y, dtype=np.float64, ensure_2d=False)
    if y.ndim != 1:
        y = y.ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    return X, y


def stable_ceil(x):
    """Ceiling that ignores floating-point dust, so ``ceil(20 * (1 - 0.95)) == 1``."""
    return int(math.ceil(round(x, 9)))
