"""Fit and prediction accuracy measures for crash models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mape: float  # nan when every observed count is zero
    r2: float  # nan when the observed counts have zero variance
    n_used: int  # sites contributing to MAPE
    n_excluded: int  # zero-count sites left out of MAPE


def evaluate(y_true, y_pred) -> MetricReport:
    """MAE, MAPE (over sites with y > 0) and R^2."""
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-d and of equal length")
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    err = np.abs(y - p)
    pos = y > 0
    mape = float(np.mean(err[pos] / y[pos])) if pos.any() else float("nan")
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - p) ** 2)) / sst if sst > 0 else float("nan")
    return MetricReport(float(err.mean()), mape, r2, int(pos.sum()), int((~pos).sum()))
