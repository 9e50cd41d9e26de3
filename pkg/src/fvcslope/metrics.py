"""Modified Laplace log-likelihood and RMSE for FVC predictions.

The log-likelihood clips the predictive deviation at 70 ml (instrument
noise floor) and the absolute error at 1000 ml. Scores are negative and
bounded above by -ln(sqrt(2)*70); higher (less negative) is better, which
every report states explicitly to avoid the usual sign confusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "SIGMA_FLOOR_ML",
    "ERROR_CEILING_ML",
    "LLL_M_MAX",
    "Prediction",
    "ScorePair",
    "lll_m_single",
    "lll_m_aggregate",
    "rmse",
]

SIGMA_FLOOR_ML = 70.0
ERROR_CEILING_ML = 1000.0
#: analytic maximum of the per-row score, attained at zero error
LLL_M_MAX = -math.log(math.sqrt(2.0) * SIGMA_FLOOR_ML)


@dataclass(frozen=True)
class Prediction:
    """A predicted FVC value with its claimed uncertainty, both in ml."""

    fvc_pred_ml: float
    sigma_ml: float

    def __post_init__(self):
        if not self.sigma_ml > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma_ml}")


@dataclass(frozen=True)
class ScorePair:
    """Log-likelihood (higher is better) and RMSE (lower is better)."""

    lll_m: float
    rmse: float

    def __post_init__(self):
        if self.lll_m > LLL_M_MAX + 1e-12:
            raise ValueError(
                f"lll_m {self.lll_m} exceeds the analytic maximum {LLL_M_MAX}"
            )
        if self.rmse < 0:
            raise ValueError(f"rmse must be nonnegative, got {self.rmse}")


def lll_m_single(fvc_true: float, pred: Prediction) -> float:
    """Score one measurement: -(sqrt(2)*delta)/sigma_c - ln(sqrt(2)*sigma_c)."""
    if not (math.isfinite(fvc_true) and math.isfinite(pred.fvc_pred_ml)
            and math.isfinite(pred.sigma_ml)):
        raise ValueError("non-finite inputs to lll_m_single")
    sigma_c = max(pred.sigma_ml, SIGMA_FLOOR_ML)
    delta = min(abs(fvc_true - pred.fvc_pred_ml), ERROR_CEILING_ML)
    return -(math.sqrt(2.0) * delta) / sigma_c - math.log(math.sqrt(2.0) * sigma_c)


def lll_m_aggregate(rows) -> float:
    """Arithmetic mean of per-row scores over (fvc_true, Prediction) pairs."""
    rows = list(rows)
    if not rows:
        raise ValueError("lll_m_aggregate on an empty row set")
    return sum(lll_m_single(t, p) for t, p in rows) / len(rows)


def rmse(rows) -> float:
    """Root mean square error over (true, predicted) pairs; no clipping."""
    rows = list(rows)
    if not rows:
        raise ValueError("rmse on an empty row set")
    return math.sqrt(sum((t - p) ** 2 for t, p in rows) / len(rows))
