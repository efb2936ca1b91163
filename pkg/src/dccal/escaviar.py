"""Per-asset first stage: ES-CAViaR with Indirect-GARCH quantile dynamics.

The squared VaR follows a variance-targeted GARCH-type recursion

    Q2[t] = (q^2 (1 - beta) - alpha_q) * V + alpha_q * r[t-1]^2 + beta * Q2[t-1]

with ``V`` the sample variance of the (demeaned) series, ``Q = -sqrt(Q2)``
and ``ES = sqrt(1 + exp(gamma0)) * Q``.  The implied volatility is
``h = Q / q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import _kernels
from .errors import FitError, InfeasibleError, InfeasibleParams
from .optimizer import BoundedProblem, MultistartConfig, minimize
from .scoring import RiskLevel, al_loss_total

__all__ = [
    "AssetRiskParams",
    "AssetRiskFit",
    "STAGE1_LOWER",
    "STAGE1_UPPER",
    "init_window",
    "quantile_recursion",
    "filter_asset",
    "fit_asset",
    "implied_volatility",
    "informed_start",
]

log = logging.getLogger(__name__)

MIN_FILTER_LENGTH = 50
MIN_FIT_LENGTH = 250

# (alpha_q, beta, q, gamma0)
STAGE1_LOWER = np.array([0.0, 0.0, -10.0, -5.0])
STAGE1_UPPER = np.array([10.0, 0.999, -0.1, 5.0])


@dataclass(frozen=True)
class AssetRiskParams:
    alpha_q: float
    beta: float
    q: float
    gamma0: float

    @classmethod
    def from_vector(cls, x) -> "AssetRiskParams":
        return cls(*(float(v) for v in x))

    def to_vector(self) -> np.ndarray:
        return np.array([self.alpha_q, self.beta, self.q, self.gamma0])

    @property
    def es_ratio(self) -> float:
        """``ES / Q = sqrt(1 + exp(gamma0))``."""
        return float(np.sqrt(1.0 + np.exp(self.gamma0)))

    def intercept(self, sample_var: float) -> float:
        return (self.q ** 2 * (1.0 - self.beta) - self.alpha_q) * sample_var

    def implied_garch(self, sample_var: float) -> tuple[float, float, float]:
        """``(omega, alpha, beta)`` of the volatility recursion ``h2 = Q2 / q^2``."""
        q2 = self.q ** 2
        return self.intercept(sample_var) / q2, self.alpha_q / q2, self.beta

    def check(self) -> None:
        if self.alpha_q < 0 or not 0 <= self.beta < 1 or not self.q < 0:
            raise InfeasibleParams(f"parameters out of range: {self}")
        if self.alpha_q / self.q ** 2 + self.beta >= 1.0:
            raise InfeasibleParams(f"implied GARCH is not stationary: {self}")


@dataclass(frozen=True)
class AssetRiskFit:
    """Fitted (or filtered) first-stage model for one asset.

    Paths have length T; ``q2_next`` is the squared VaR one step beyond the
    sample.
    """

    params: AssetRiskParams
    alpha: float
    var_path: np.ndarray
    es_path: np.ndarray
    vol_path: np.ndarray
    loss: float
    sample_var: float
    q2_next: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def var_next(self) -> float:
        return -float(np.sqrt(self.q2_next))

    @property
    def es_next(self) -> float:
        return self.params.es_ratio * self.var_next

    @property
    def vol_next(self) -> float:
        return self.var_next / self.params.q


def init_window(T: int) -> int:
    return min(T, max(MIN_FILTER_LENGTH, T // 10))


def quantile_recursion(r, alpha_q: float, beta: float, q: float, sample_var: float,
                       q2_init: float) -> np.ndarray:
    """Squared-VaR path of length ``T + 1`` (last entry is the one-step forecast)."""
    r = np.asarray(r, dtype=float)
    omega = (q * q * (1.0 - beta) - alpha_q) * sample_var
    x = omega + alpha_q * r * r
    out = np.empty(r.size + 1)
    out[0] = q2_init
    out[1:], _ = lfilter([1.0], [1.0, -beta], x, zi=[beta * q2_init])
    return out


def _initial_var(r: np.ndarray) -> float:
    return float(np.var(r[: init_window(r.size)]))


def stage1_loss(theta, r: np.ndarray, alpha: float, V: float, v0: float) -> float:
    """AL loss of one asset; ``+inf`` outside the admissible region.

    ``V`` is the sample variance used for targeting and ``v0`` the variance
    of the initialization window.
    """
    alpha_q, beta, q, gamma0 = (float(v) for v in theta)
    return float(_kernels.stage1_loss(alpha_q, beta, q, gamma0, r, alpha, V, v0))


def filter_asset(r, params: AssetRiskParams, alpha, q2_init: float | None = None) -> AssetRiskFit:
    """Run the recursion for given parameters and return all fitted paths.

    Parameters
    ----------
    r : array_like
        Demeaned returns, length >= 50.
    params : AssetRiskParams
    alpha : float or RiskLevel
    q2_init : float, optional
        Initial squared VaR.  Defaults to ``q^2`` times the variance of the
        first ``max(50, T // 10)`` observations.

    Raises
    ------
    InfeasibleParams
        If the intercept or any squared VaR is not positive.
    """
    a = RiskLevel(float(alpha)).alpha
    r = np.asarray(r, dtype=float).ravel()
    if r.size < MIN_FILTER_LENGTH:
        raise ValueError(f"series too short to filter: {r.size} < {MIN_FILTER_LENGTH}")
    V = float(np.var(r))
    if q2_init is None:
        q2_init = params.q ** 2 * _initial_var(r)
    if params.intercept(V) <= 0.0:
        raise InfeasibleParams(f"non-positive recursion intercept for {params}")
    q2 = quantile_recursion(r, params.alpha_q, params.beta, params.q, V, q2_init)
    if not np.all(q2 > 0.0):
        raise InfeasibleParams("recursion produced a non-positive squared VaR")
    Q = -np.sqrt(q2[:-1])
    es = params.es_ratio * Q
    return AssetRiskFit(
        params=params,
        alpha=a,
        var_path=Q,
        es_path=es,
        vol_path=Q / params.q,
        loss=al_loss_total(r, Q, es, a),
        sample_var=V,
        q2_next=float(q2[-1]),
    )


def informed_start(r: np.ndarray, alpha: float) -> np.ndarray:
    sd = np.std(r)
    q0 = float(np.quantile(r / sd, alpha)) if sd > 0 else -2.0
    q0 = float(np.clip(q0, STAGE1_LOWER[2] + 1e-3, STAGE1_UPPER[2] - 1e-3))
    return np.array([0.1 * q0 * q0, 0.85, q0, -0.86])


def fit_asset(r, alpha, cfg: MultistartConfig | None = None) -> AssetRiskFit:
    """Minimize the AL loss over ``(alpha_q, beta, q, gamma0)``.

    The first start is a data-informed point; the rest are random draws in
    the parameter box.

    Raises
    ------
    FitError
        Series shorter than 250 observations or no feasible start.
    """
    a = RiskLevel(float(alpha)).alpha
    r = np.asarray(r, dtype=float).ravel()
    if r.size < MIN_FIT_LENGTH:
        raise FitError(f"series too short to fit: {r.size} < {MIN_FIT_LENGTH}", stage="stage1")
    cfg = cfg or MultistartConfig()
    V = float(np.var(r))
    v0 = _initial_var(r)
    problem = BoundedProblem(lambda th: stage1_loss(th, r, a, V, v0), STAGE1_LOWER, STAGE1_UPPER)
    try:
        res = minimize(problem, cfg, starts=[informed_start(r, a)])
    except InfeasibleError as exc:
        raise FitError(str(exc), stage="stage1") from exc
    params = AssetRiskParams.from_vector(res.x)
    fit = filter_asset(r, params, a)
    object.__setattr__(fit, "diagnostics", {
        "best_start": res.best_start,
        "start_losses": [s.f for s in res.starts],
        "n_eval": sum(s.n_eval for s in res.starts),
    })
    return fit


def implied_volatility(fit: AssetRiskFit) -> np.ndarray:
    """``h = Q / q``, strictly positive."""
    return fit.var_path / fit.params.q
