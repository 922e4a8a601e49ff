"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d

from .errors import ConfigurationError, FitError


def check_fringe_data(phis, pops, n_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Validate a phase scan: ≥ 5 finite points covering one period 2π/n."""
    if int(n_order) != n_order or n_order < 1:
        raise ConfigurationError("n_order must be a positive integer")
    phis = column_or_1d(check_array(np.asarray(phis, float).reshape(-1, 1)))
    pops = column_or_1d(check_array(np.asarray(pops, float).reshape(-1, 1)))
    if phis.shape != pops.shape:
        raise FitError("phases and populations differ in length")
    if len(phis) < 5:
        raise FitError(f"need at least 5 scan points, got {len(phis)}")
    period = 2 * math.pi / n_order
    # uniform scans of N points cover the period with span period·(N−1)/N
    span = float(np.ptp(phis)) * len(phis) / (len(phis) - 1)
    if span < period * (1 - 1e-9):
        raise FitError("scan does not cover one fringe period")
    return phis, pops


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (math.isfinite(v) and v > 0):
        raise ConfigurationError(f"{name} must be positive and finite", name)
    return v


def check_bracket(bracket, name: str = "bracket") -> tuple[float, float]:
    lo, hi = (float(b) for b in bracket)
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 <= lo < hi):
        raise ConfigurationError("bracket must satisfy 0 <= lo < hi", name)
    return lo, hi
