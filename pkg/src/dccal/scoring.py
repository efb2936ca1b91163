"""Quantile loss and the asymmetric-Laplace (AL) log-score for (VaR, ES).

Both functions accept scalars or arrays and broadcast.  The AL score is the
negative log of the AL quasi-density, a strictly consistent joint loss for
the pair (VaR, ES) when ES < 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimError, DomainError

__all__ = [
    "RiskLevel",
    "JointForecast",
    "quantile_loss",
    "al_log_score",
    "al_loss_total",
    "sum_scores",
]


@dataclass(frozen=True)
class RiskLevel:
    alpha: float

    def __post_init__(self):
        if not 0.0 < float(self.alpha) < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha!r}")
        object.__setattr__(self, "alpha", float(self.alpha))

    def __float__(self) -> float:
        return self.alpha


def _alpha(alpha) -> float:
    return RiskLevel(float(alpha)).alpha


@dataclass(frozen=True)
class JointForecast:
    """One-step (VaR, ES) pair; both typically negative with ``es <= var``."""

    var: float
    es: float


def quantile_loss(r, q, alpha):
    """``(r - q) * (alpha - 1{r <= q})``; nonnegative, zero iff ``r == q``."""
    a = _alpha(alpha)
    r = np.asarray(r, dtype=float)
    q = np.asarray(q, dtype=float)
    out = (r - q) * (a - (r <= q))
    return float(out) if out.ndim == 0 else out


def al_log_score(r, var, es, alpha):
    """AL log-score ``-log((alpha-1)/ES) - (r-Q)(alpha-1{r<=Q}) / (alpha ES)``.

    Raises
    ------
    DomainError
        If any ES is not strictly negative.
    """
    a = _alpha(alpha)
    r = np.asarray(r, dtype=float)
    var = np.asarray(var, dtype=float)
    es = np.asarray(es, dtype=float)
    if np.any(~(es < 0.0)):
        raise DomainError("AL score requires ES < 0")
    out = -np.log((a - 1.0) / es) - (r - var) * (a - (r <= var)) / (a * es)
    return float(out) if out.ndim == 0 else out


def al_loss_total(r: np.ndarray, var: np.ndarray, es: np.ndarray, alpha: float) -> float:
    """Sum of AL scores; ``+inf`` when any ES is non-negative.

    Estimation objective: rejects instead of raising so that an optimizer can
    treat out-of-domain candidates as infeasible.
    """
    if not np.all(es < 0.0):
        return np.inf
    s = -np.log((alpha - 1.0) / es) - (r - var) * (alpha - (r <= var)) / (alpha * es)
    total = float(np.sum(s))
    return total if np.isfinite(total) else np.inf


def sum_scores(returns, forecasts, alpha) -> tuple[float, float]:
    """Totals ``(sum of quantile losses, sum of AL scores)`` over a forecast path."""
    r = np.asarray(returns, dtype=float).ravel()
    forecasts = list(forecasts)
    if r.size != len(forecasts):
        raise DimError(f"{r.size} returns for {len(forecasts)} forecasts")
    if r.size == 0:
        return 0.0, 0.0
    var = np.array([f.var for f in forecasts], dtype=float)
    es = np.array([f.es for f in forecasts], dtype=float)
    return (
        float(np.sum(quantile_loss(r, var, alpha))),
        float(np.sum(al_log_score(r, var, es, alpha))),
    )
