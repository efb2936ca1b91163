"""Second stage: marginalized DCC with correlation targeting.

Given first-stage volatilities ``h[t, i]``, standardized returns
``eps = r / h`` drive

    R[t] = (1 - a - b) * S + a * eps[t-1] eps[t-1]' + b * R[t-1],   R[0] = S
    P[t] = diag(R[t])^{-1/2} R[t] diag(R[t])^{-1/2}

with ``S`` the sample second-moment matrix of ``eps``.  Portfolio risk is

    Q[t]  = w'mu + q * sqrt(w' D[t] P[t] D[t] w)
    ES[t] = w'mu + c * sqrt(w' D[t] P[t] D[t] w),   c = -sqrt(q^2 (1 + exp(gamma0)))

and ``(a, b, q, gamma0)`` minimize the AL loss of the portfolio returns.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from . import _kernels, escaviar
from .errors import FitError, InfeasibleError, InfeasibleParams, InitError, InternalError, RankWarning
from .escaviar import AssetRiskFit, AssetRiskParams
from .linalg import cholesky, to_correlation
from .optimizer import BoundedProblem, MultistartConfig, minimize
from .scoring import JointForecast, RiskLevel, al_loss_total
from .timeseries import ReturnPanel, demean

__all__ = [
    "DccParams",
    "CorrelationState",
    "DccFit",
    "STAGE2_LOWER",
    "STAGE2_UPPER",
    "MAX_PERSISTENCE",
    "standardize",
    "correlation_target",
    "filter_correlations",
    "portfolio_risk_paths",
    "covariance_path",
    "fit_dcc",
    "refilter_dcc",
    "forecast_one_step",
]

log = logging.getLogger(__name__)

MIN_FIT_LENGTH = 500
MAX_PERSISTENCE = 0.9999

# (a, b, q, gamma0)
STAGE2_LOWER = np.array([0.0, 0.0, -10.0, -5.0])
STAGE2_UPPER = np.array([0.5, 0.999, -0.1, 5.0])


@dataclass(frozen=True)
class DccParams:
    a: float
    b: float
    q: float
    gamma0: float

    @classmethod
    def from_vector(cls, x) -> "DccParams":
        return cls(*(float(v) for v in x))

    def to_vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.q, self.gamma0])

    @property
    def c(self) -> float:
        """ES factor, ``-sqrt(q^2 (1 + exp(gamma0)))``."""
        return -float(np.sqrt(self.q ** 2 * (1.0 + np.exp(self.gamma0))))


@dataclass(frozen=True)
class CorrelationState:
    sigma_eps_hat: np.ndarray
    R_path: np.ndarray
    P_path: np.ndarray
    R_next: np.ndarray
    P_next: np.ndarray


@dataclass(frozen=True)
class DccFit:
    """Two-stage fit on one estimation window.

    ``eps``, ``vol`` and the path arrays have T rows.  ``returns`` holds the
    demeaned asset returns and ``mu`` the removed means.
    """

    params: DccParams
    corr: CorrelationState
    port_var_path: np.ndarray
    port_es_path: np.ndarray
    loss: float
    stage1: tuple
    weights: np.ndarray
    alpha: float
    mu: np.ndarray
    returns: np.ndarray
    eps: np.ndarray
    vol: np.ndarray
    vol_next: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def T(self) -> int:
        return self.eps.shape[0]


def standardize(panel, stage1: Sequence[AssetRiskFit]) -> np.ndarray:
    """``eps[t, i] = r[t, i] / h[t, i]``."""
    values = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    if len(stage1) != values.shape[1]:
        raise ValueError(f"{len(stage1)} stage-1 fits for {values.shape[1]} assets")
    h = np.column_stack([escaviar.implied_volatility(f) for f in stage1])
    if h.shape != values.shape:
        raise ValueError("stage-1 paths are not aligned with the panel")
    if np.any(~(h > 0.0)):
        raise InternalError("non-positive first-stage volatility")
    return values / h


def correlation_target(eps) -> np.ndarray:
    """``S = T^-1 sum eps_t eps_t'``."""
    eps = np.asarray(eps, dtype=float)
    T, n = eps.shape
    if T <= n:
        warnings.warn(f"T={T} <= n={n}: correlation target may be singular", RankWarning, stacklevel=2)
    S = eps.T @ eps / T
    return 0.5 * (S + S.T)


class _PairFilter:
    """Correlation recursion on the upper-triangular entries, vectorized over time."""

    def __init__(self, eps: np.ndarray, S: np.ndarray, R0: np.ndarray):
        n = eps.shape[1]
        self.n = n
        self.iu, self.ju = np.triu_indices(n)
        self.diag_pos = np.flatnonzero(self.iu == self.ju)
        self.outer = eps[:, self.iu] * eps[:, self.ju]
        self.S = S[self.iu, self.ju]
        self.R0 = R0[self.iu, self.ju]
        self.coef = np.where(self.iu == self.ju, 1.0, 2.0)

    def run(self, a: float, b: float) -> np.ndarray:
        """Pair path with T + 1 rows; the last row is the one-step forecast."""
        x = (1.0 - a - b) * self.S + a * self.outer
        out = np.empty((x.shape[0] + 1, x.shape[1]))
        out[0] = self.R0
        out[1:], _ = lfilter([1.0], [1.0, -b], x, axis=0, zi=(b * self.R0)[None, :])
        return out

    def portfolio_variance(self, pairs: np.ndarray, wh: np.ndarray) -> np.ndarray:
        """``w' D P D w`` for every row, given ``wh[t, i] = w_i h[t, i]``."""
        g = wh / np.sqrt(pairs[:, self.diag_pos])
        return np.sum(self.coef * pairs * g[:, self.iu] * g[:, self.ju], axis=1)

    def to_matrices(self, pairs: np.ndarray) -> np.ndarray:
        R = np.empty((pairs.shape[0], self.n, self.n))
        R[:, self.iu, self.ju] = pairs
        R[:, self.ju, self.iu] = pairs
        return R


def filter_correlations(eps, p: DccParams, sigma_eps_hat, R0=None) -> CorrelationState:
    """Run the targeted correlation recursion.

    Raises
    ------
    InitError
        If ``R0`` is not symmetric positive definite.
    """
    eps = np.asarray(eps, dtype=float)
    S = np.asarray(sigma_eps_hat, dtype=float)
    R0 = S if R0 is None else np.asarray(R0, dtype=float)
    if not np.allclose(R0, R0.T) or cholesky(R0) is None:
        raise InitError("R0 must be symmetric positive definite")
    if p.a < 0 or p.b < 0 or p.a + p.b >= 1:
        raise InfeasibleParams(f"need a, b >= 0 and a + b < 1, got {p}")
    pf = _PairFilter(eps, S, R0)
    R = pf.to_matrices(pf.run(p.a, p.b))
    P = to_correlation(R)
    return CorrelationState(sigma_eps_hat=S, R_path=R[:-1], P_path=P[:-1], R_next=R[-1], P_next=P[-1])


def _portfolio_sd(P: np.ndarray, vol: np.ndarray, w: np.ndarray) -> np.ndarray:
    wh = vol * w
    v = np.einsum("ti,tij,tj->t", wh, P, wh)
    if np.any(~(v > 0.0)):
        raise InternalError("non-positive portfolio variance")
    return np.sqrt(v)


def portfolio_risk_paths(corr: CorrelationState, vol, w, p: DccParams, mu: float = 0.0):
    """Portfolio ``(Q, ES)`` paths from correlations and first-stage volatilities.

    ``vol`` is the T x n matrix of ``h[t, i]``; ``mu`` is the portfolio mean ``w'mu``.
    """
    P = np.asarray(corr.P_path)
    vol = np.asarray(vol, dtype=float)
    if vol.ndim == 1:
        vol = vol[:, None]
    if vol.shape != P.shape[:2]:
        raise ValueError(f"volatility shape {vol.shape} does not match correlations {P.shape}")
    sd = _portfolio_sd(P, vol, np.asarray(w, dtype=float).ravel())
    return mu + p.q * sd, mu + p.c * sd


def covariance_path(fit: DccFit, include_next: bool = True) -> np.ndarray:
    """``H[t] = D[t] P[t] D[t]``; with ``include_next`` the one-step forecast is appended."""
    P, vol = fit.corr.P_path, fit.vol
    if include_next:
        P = np.concatenate([P, fit.corr.P_next[None]], axis=0)
        vol = np.vstack([vol, fit.vol_next[None]])
    return vol[:, :, None] * P * vol[:, None, :]


def _stage2_loss(theta, pf: _PairFilter, wh: np.ndarray, r: np.ndarray, alpha: float) -> float:
    a, b, q, gamma0 = (float(v) for v in theta)
    if a + b > MAX_PERSISTENCE:
        return np.inf
    return float(_kernels.stage2_loss(a, b, q, gamma0, pf.outer, pf.S, pf.R0, wh, pf.iu, pf.ju, r, alpha))


def _assemble(values, mu, w, alpha, stage1, params: DccParams, diagnostics=None) -> DccFit:
    vol = np.column_stack([escaviar.implied_volatility(f) for f in stage1])
    vol_next = np.array([f.vol_next for f in stage1])
    eps = values / vol
    S = correlation_target(eps)
    corr = filter_correlations(eps, params, S, S)
    port_mu = float(w @ mu)
    Q, ES = portfolio_risk_paths(corr, vol, w, params, mu=0.0)
    loss = al_loss_total(values @ w, Q, ES, alpha)
    for arr in (eps, vol, vol_next):
        arr.setflags(write=False)
    return DccFit(
        params=params, corr=corr, port_var_path=Q + port_mu, port_es_path=ES + port_mu,
        loss=loss, stage1=tuple(stage1), weights=w, alpha=alpha, mu=mu, returns=values,
        eps=eps, vol=vol, vol_next=vol_next, diagnostics=diagnostics or {},
    )


def informed_start(r: np.ndarray, alpha: float) -> np.ndarray:
    sd = np.std(r)
    q0 = float(np.quantile(r / sd, alpha)) if sd > 0 else -2.0
    q0 = float(np.clip(q0, STAGE2_LOWER[2] + 1e-3, STAGE2_UPPER[2] - 1e-3))
    return np.array([0.05, 0.90, q0, -0.86])


def fit_dcc(panel: ReturnPanel, w, alpha, cfg: MultistartConfig | None = None,
            stage1_cfg: MultistartConfig | None = None) -> DccFit:
    """Two-stage AL estimation on one window.

    Parameters
    ----------
    panel : ReturnPanel
        Raw returns (demeaned internally), T >= 500.
    w : array_like
        Portfolio weights.
    alpha : float
    cfg : MultistartConfig
        Second-stage multistart settings.
    stage1_cfg : MultistartConfig, optional
        First-stage settings.  Defaults to ``cfg`` with a single (informed)
        start per asset.

    Raises
    ------
    FitError
        With ``stage`` set to ``"stage1"`` or ``"stage2"``.
    """
    a_level = RiskLevel(float(alpha)).alpha
    w = np.asarray(w, dtype=float).ravel()
    if w.size != panel.n:
        raise ValueError(f"{w.size} weights for {panel.n} assets")
    if panel.T < MIN_FIT_LENGTH:
        raise FitError(f"panel too short: T={panel.T} < {MIN_FIT_LENGTH}", stage="input")
    cfg = cfg or MultistartConfig()
    stage1_cfg = stage1_cfg or replace(cfg, n_starts=1)

    centered, mu = demean(panel)
    values = centered.values
    stage1 = []
    for i in range(panel.n):
        try:
            stage1.append(escaviar.fit_asset(values[:, i], a_level, stage1_cfg))
        except (FitError, InfeasibleParams) as exc:
            raise FitError(f"asset {panel.assets[i]}: {exc}", stage="stage1") from exc

    vol = np.column_stack([escaviar.implied_volatility(f) for f in stage1])
    eps = values / vol
    S = correlation_target(eps)
    if cholesky(S) is None:
        raise FitError("correlation target is not positive definite", stage="stage2")
    r = values @ w
    pf = _PairFilter(eps, S, S)
    problem = BoundedProblem(lambda th: _stage2_loss(th, pf, vol * w, r, a_level),
                             STAGE2_LOWER, STAGE2_UPPER)
    try:
        res = minimize(problem, cfg, starts=[informed_start(r, a_level)])
    except InfeasibleError as exc:
        raise FitError(str(exc), stage="stage2") from exc
    diagnostics = {
        "best_start": res.best_start,
        "start_losses": [s.f for s in res.starts],
        "start_initial_losses": [s.f0 for s in res.starts],
        "n_eval": sum(s.n_eval for s in res.starts),
    }
    return _assemble(values, mu, w, a_level, stage1, DccParams.from_vector(res.x), diagnostics)


def refilter_dcc(panel: ReturnPanel, w, params: DccParams, stage1_params: Sequence[AssetRiskParams],
                 alpha) -> DccFit:
    """Re-run both recursions on a new window with fixed parameters.

    Means, sample variances and the correlation target are recomputed from
    the window; only the parameters are held fixed.
    """
    a_level = RiskLevel(float(alpha)).alpha
    w = np.asarray(w, dtype=float).ravel()
    centered, mu = demean(panel)
    values = centered.values
    stage1 = [escaviar.filter_asset(values[:, i], p, a_level) for i, p in enumerate(stage1_params)]
    return _assemble(values, mu, w, a_level, stage1, params, {"refiltered": True})


def forecast_one_step(fit: DccFit, last_returns=None) -> JointForecast:
    """One-step-ahead portfolio (VaR, ES).

    Advances each first-stage recursion and the correlation recursion by one
    step from the end of the sample.  ``last_returns`` (raw, not demeaned)
    defaults to the last row of the estimation window.
    """
    w, p = fit.weights, fit.params
    if last_returns is None:
        r_last = fit.returns[-1]
    else:
        r_last = np.asarray(last_returns, dtype=float).ravel() - fit.mu
    vol_next = np.empty(fit.n)
    for i, f in enumerate(fit.stage1):
        sp = f.params
        q2_last = f.var_path[-1] ** 2
        q2 = sp.intercept(f.sample_var) + sp.alpha_q * r_last[i] ** 2 + sp.beta * q2_last
        vol_next[i] = np.sqrt(q2) / abs(sp.q)
    eps_last = r_last / fit.vol[-1]
    S = fit.corr.sigma_eps_hat
    R = (1.0 - p.a - p.b) * S + p.a * np.outer(eps_last, eps_last) + p.b * fit.corr.R_path[-1]
    P = to_correlation(R)
    wh = w * vol_next
    sd = float(np.sqrt(wh @ P @ wh))
    m = float(w @ fit.mu)
    return JointForecast(var=m + p.q * sd, es=m + p.c * sd)
