"""Minimum-variance and minimum-VaR/ES portfolios.

Risk factors for arbitrary weights are obtained by simulation: random simplex
weights are drawn, the standardized portfolio returns
``z = w'(r - mu) / sqrt(w'H w)`` are formed over the fitted covariance path,
and their empirical alpha-quantile and tail mean are regressed (without
intercept) on the weights.  The fitted coefficients then predict the factors
for any candidate portfolio.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dcc import DccFit, covariance_path, fit_dcc, refilter_dcc
from .errors import DimError, InfeasibleError, RankError
from .linalg import ols_solve
from .optimizer import BoundedProblem, MultistartConfig, minimize
from .scoring import RiskLevel
from .timeseries import PortfolioWeights, ReturnPanel, WindowSpec, equal_weights

__all__ = [
    "OBJECTIVES",
    "FactorRegression",
    "PortfolioSolution",
    "simulate_factors",
    "fit_factor_regression",
    "predict_risk",
    "predict_risk_from_cov",
    "optimize_portfolio",
    "optimize_from_cov",
    "reestimate_at_optimum",
    "empirical_risk",
    "hedging_summary",
    "RollingPortfolios",
    "rolling_optimize",
    "write_solutions_csv",
    "write_summary_json",
]

log = logging.getLogger(__name__)

OBJECTIVES = ("variance", "var", "es")
SOFTMAX_BOUND = 20.0
MU_SLACK = 1e-8


@dataclass(frozen=True)
class FactorRegression:
    beta_q: np.ndarray
    beta_c: np.ndarray
    W_sim: np.ndarray
    q_sim: np.ndarray
    c_sim: np.ndarray
    r2_q: float
    r2_c: float

    @property
    def n(self) -> int:
        return self.beta_q.size

    def factors(self, w) -> tuple[float, float]:
        """Predicted ``(q, c)`` for weights ``w``."""
        w = np.asarray(w, dtype=float)
        return float(w @ self.beta_q), float(w @ self.beta_c)


@dataclass(frozen=True)
class PortfolioSolution:
    w_opt: PortfolioWeights
    objective: str
    predicted_factor: float
    objective_value: float
    mu_target: float | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)


def _simplex_draws(rng: np.random.Generator, n_sim: int, n: int) -> np.ndarray:
    u = rng.random((n_sim, n))
    # uniform draws of exactly zero are possible in principle
    while np.any(u == 0.0):
        u[u == 0.0] = rng.random(int(np.sum(u == 0.0)))
    return u / u.sum(axis=1, keepdims=True)


def simulate_factors(panel: ReturnPanel, fit: DccFit, mu_hat=None, n_sim: int = 1000,
                     alpha=None, seed=0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Empirical risk factors of ``n_sim`` random simplex portfolios.

    Parameters
    ----------
    panel : ReturnPanel
        The estimation window of ``fit`` (raw returns).
    fit : DccFit
    mu_hat : array_like, optional
        Mean vector; defaults to the in-sample means of the fit.
    n_sim : int
    alpha : float, optional
        Defaults to the fit's level.
    seed : int or SeedSequence

    Returns
    -------
    W_sim : (n_sim, n) ndarray
    q_sim, c_sim : (n_sim,) ndarray
        Empirical alpha-quantile (linear interpolation) and tail mean of the
        standardized portfolio returns.
    """
    a = RiskLevel(float(fit.alpha if alpha is None else alpha)).alpha
    if panel.T != fit.T or panel.n != fit.n:
        raise DimError(f"panel is {panel.T}x{panel.n} but the fit is {fit.T}x{fit.n}")
    mu = fit.mu if mu_hat is None else np.asarray(mu_hat, dtype=float).ravel()
    W = _simplex_draws(np.random.default_rng(seed), int(n_sim), panel.n)
    H = covariance_path(fit, include_next=False)
    X = panel.values - mu
    sd = np.sqrt(np.einsum("kn,tnm,km->tk", W, H, W, optimize=True))
    z = (X @ W.T) / sd
    q = np.quantile(z, a, axis=0)
    tail = z <= q
    c = np.sum(np.where(tail, z, 0.0), axis=0) / np.sum(tail, axis=0)
    return W, q, c


def _r2(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    ssr = float(np.sum((y - X @ beta) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 1.0 if ssr == 0.0 else float("nan")
    return 1.0 - ssr / sst


def fit_factor_regression(W_sim, q_sim, c_sim) -> FactorRegression:
    """No-intercept OLS of the simulated factors on the weights.

    Raises
    ------
    RankError
        If ``N_sim <= n`` or the weight matrix is rank deficient.
    """
    W = np.asarray(W_sim, dtype=float)
    q = np.asarray(q_sim, dtype=float).ravel()
    c = np.asarray(c_sim, dtype=float).ravel()
    if W.ndim != 2 or q.size != W.shape[0] or c.size != W.shape[0]:
        raise DimError("W_sim must be N x n with matching factor vectors")
    if W.shape[0] <= W.shape[1]:
        raise RankError(f"need more draws than assets: {W.shape[0]} <= {W.shape[1]}")
    beta_q = ols_solve(W, q)
    beta_c = ols_solve(W, c)
    return FactorRegression(beta_q=beta_q, beta_c=beta_c, W_sim=W, q_sim=q, c_sim=c,
                            r2_q=_r2(W, q, beta_q), r2_c=_r2(W, c, beta_c))


def predict_risk_from_cov(w, H, mu_hat, reg: FactorRegression) -> tuple[float, float]:
    """``(w'mu + (w'beta_q) sd, w'mu + (w'beta_c) sd)`` with ``sd = sqrt(w'Hw)``."""
    w = np.asarray(w, dtype=float).ravel()
    sd = float(np.sqrt(w @ H @ w))
    m = float(w @ np.asarray(mu_hat, dtype=float))
    fq, fc = reg.factors(w)
    return m + fq * sd, m + fc * sd


def predict_risk(w, fit: DccFit, reg: FactorRegression, t: int | None = None,
                 mu_hat=None) -> tuple[float, float]:
    """Predicted portfolio (VaR, ES) at step ``t`` of the fit.

    ``t`` indexes the covariance path; ``t = fit.T`` (the default) is the
    one-step-ahead forecast.
    """
    H = covariance_path(fit, include_next=True)[fit.T if t is None else t]
    return predict_risk_from_cov(w, H, fit.mu if mu_hat is None else mu_hat, reg)


class _Parameterization:
    """Maps free coordinates onto the feasible weight set.

    Long-only: softmax of ``n - 1`` free values with the last pinned at 0.
    Short selling: the first ``n - 1`` weights in ``[-1, 1]`` and the last as
    the remainder, rejected when it leaves ``[-1, 1]``.
    """

    def __init__(self, n: int, allow_short: bool):
        self.n = n
        self.allow_short = allow_short
        bound = 1.0 if allow_short else SOFTMAX_BOUND
        self.lower = np.full(n - 1, -bound)
        self.upper = np.full(n - 1, bound)

    def weights(self, x) -> np.ndarray | None:
        x = np.asarray(x, dtype=float)
        if self.allow_short:
            last = 1.0 - x.sum()
            if abs(last) > 1.0:
                return None
            return np.append(x, last)
        y = np.append(x, 0.0)
        e = np.exp(y - y.max())
        return e / e.sum()

    def coords(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.allow_short:
            return w[:-1].copy()
        y = np.log(w[:-1]) - np.log(w[-1])
        return np.clip(y, self.lower + 1e-6, self.upper - 1e-6)


def _feasible_start(mu: np.ndarray, mu_target: float | None) -> np.ndarray:
    n = mu.size
    w = np.full(n, 1.0 / n)
    if mu_target is None or w @ mu >= mu_target:
        return w
    top = np.zeros(n)
    top[int(np.argmax(mu))] = 1.0
    # smallest mix towards the best asset that meets the target, with a margin
    lam = (mu_target - w @ mu) / (top @ mu - w @ mu)
    lam = min(lam + 0.5 * (1.0 - lam), 1.0 - 1e-6)
    return (1.0 - lam) * w + lam * top


def optimize_from_cov(H, mu_hat, reg: FactorRegression | None, objective: str,
                      mu_target: float | None = None, cfg: MultistartConfig | None = None,
                      allow_short: bool = False) -> PortfolioSolution:
    """Minimize portfolio risk for a given covariance forecast ``H``.

    The first start is the equal-weight portfolio (or, when it misses the
    return target, a feasible mix towards the highest-mean asset); the
    remaining starts are random points of the free parameter box.

    Raises
    ------
    InfeasibleError
        If ``mu_target`` exceeds every asset mean.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    if objective != "variance" and reg is None:
        raise ValueError(f"objective {objective!r} needs a factor regression")
    H = np.asarray(H, dtype=float)
    mu = np.asarray(mu_hat, dtype=float).ravel()
    n = mu.size
    if H.shape != (n, n):
        raise DimError(f"covariance is {H.shape} for {n} assets")
    if mu_target is not None and mu_target > mu.max():
        raise InfeasibleError(f"target return {mu_target} exceeds the largest asset mean {mu.max()}")
    cfg = cfg or MultistartConfig()

    def value(w):
        if objective == "variance":
            return float(w @ H @ w)
        var, es = predict_risk_from_cov(w, H, mu, reg)
        return abs(var) if objective == "var" else abs(es)

    if n == 1:
        w = np.ones(1)
        return _solution(w, objective, reg, value(w), mu_target, {})

    par = _Parameterization(n, allow_short)

    def objective_fn(x):
        w = par.weights(x)
        if w is None:
            return np.inf
        if mu_target is not None and w @ mu < mu_target - MU_SLACK:
            return np.inf
        return value(w)

    problem = BoundedProblem(objective_fn, par.lower, par.upper)
    start = par.coords(_feasible_start(mu, mu_target))
    res = minimize(problem, cfg, starts=[start])
    w = par.weights(res.x)
    if not allow_short:
        w = np.clip(w, 0.0, 1.0)
        w = w / w.sum()
    diagnostics = {"best_start": res.best_start,
                   "start_values": [s.f0 for s in res.starts],
                   "end_values": [s.f for s in res.starts]}
    return _solution(w, objective, reg, value(w), mu_target, diagnostics)


def _solution(w, objective, reg, obj_value, mu_target, diagnostics) -> PortfolioSolution:
    if objective == "variance" or reg is None:
        factor = float("nan")
    else:
        fq, fc = reg.factors(w)
        factor = fq if objective == "var" else fc
    w = np.asarray(w, dtype=float)
    return PortfolioSolution(w_opt=PortfolioWeights(w, allow_short=bool(np.any(w < 0.0))), objective=objective,
                             predicted_factor=factor, objective_value=float(obj_value),
                             mu_target=mu_target, diagnostics=diagnostics)


def optimize_portfolio(fit: DccFit, reg: FactorRegression | None, objective: str,
                       mu_target: float | None = None, t: int | None = None,
                       cfg: MultistartConfig | None = None, allow_short: bool = False,
                       mu_hat=None) -> PortfolioSolution:
    """Minimum-risk weights using the fit's covariance at step ``t``.

    ``t = fit.T`` (default) uses the one-step-ahead covariance forecast.
    """
    H = covariance_path(fit, include_next=True)[fit.T if t is None else t]
    mu = fit.mu if mu_hat is None else mu_hat
    return optimize_from_cov(H, mu, reg, objective, mu_target, cfg, allow_short)


def reestimate_at_optimum(panel: ReturnPanel, w_opt, alpha, cfg: MultistartConfig | None = None
                          ) -> tuple[float, float]:
    """Fit the model on the optimized portfolio and return its ``(q, c)``."""
    fit = fit_dcc(panel, np.asarray(w_opt, dtype=float), alpha, cfg)
    return fit.params.q, fit.params.c


def empirical_risk(returns, alpha) -> dict:
    """Sample variance, VaR (linear-interpolation quantile) and ES (tail mean)."""
    a = RiskLevel(float(alpha)).alpha
    r = np.asarray(returns, dtype=float).ravel()
    var = float(np.quantile(r, a))
    return {"n": int(r.size), "mean": float(r.mean()), "variance": float(np.var(r, ddof=1)),
            "var": var, "es": float(r[r <= var].mean())}


def hedging_summary(returns_by_strategy: Mapping[str, Sequence[float]], alpha) -> dict:
    return {name: empirical_risk(r, alpha) for name, r in returns_by_strategy.items()}


@dataclass(frozen=True)
class RollingPortfolios:
    """Out-of-sample results of rolling optimization.

    ``weights[s]`` is ``(out_size, n)`` and ``returns[s]`` the realized
    portfolio returns for strategy ``s``; ``"ew"`` is always included.
    """

    dates: tuple
    weights: dict
    returns: dict
    solutions: dict


def rolling_optimize(panel: ReturnPanel, win: WindowSpec, alpha, objectives: Sequence[str] = OBJECTIVES,
                     mu_target: float | None = None, n_sim: int = 1000, seed: int = 0,
                     cfg: MultistartConfig | None = None, opt_cfg: MultistartConfig | None = None,
                     allow_short: bool = False) -> RollingPortfolios:
    """Optimize portfolios one step ahead over the last ``win.out_size`` rows.

    The model is estimated on equal-weight portfolio returns every
    ``win.step`` steps (and re-filtered in between); the factor regression is
    refit whenever the model is re-estimated.
    """
    a = RiskLevel(float(alpha)).alpha
    win.validate(panel.T)
    for o in objectives:
        if o not in OBJECTIVES:
            raise ValueError(f"unknown objective {o!r}")
    n = panel.n
    ew = np.asarray(equal_weights(n), dtype=float)
    offset = panel.T - win.in_size - win.out_size
    need_reg = any(o != "variance" for o in objectives)
    seeds = np.random.SeedSequence(seed).spawn(win.out_size)
    weights = {o: np.empty((win.out_size, n)) for o in objectives}
    solutions = {o: [] for o in objectives}
    fit = reg = None
    for k in range(win.out_size):
        window = panel.window(offset + k, offset + k + win.in_size)
        if k % win.step == 0:
            fit = fit_dcc(window, ew, a, cfg)
            if need_reg:
                W, q, c = simulate_factors(window, fit, n_sim=n_sim, alpha=a, seed=seeds[k])
                reg = fit_factor_regression(W, q, c)
        else:
            fit = refilter_dcc(window, ew, fit.params, [f.params for f in fit.stage1], a)
        for o in objectives:
            sol = optimize_portfolio(fit, reg if o != "variance" else None, o, mu_target,
                                     cfg=opt_cfg, allow_short=allow_short)
            weights[o][k] = np.asarray(sol.w_opt)
            solutions[o].append(sol)
        log.debug("portfolio step %d of %d done", k + 1, win.out_size)
    target = panel.values[offset + win.in_size:]
    returns = {o: np.einsum("tn,tn->t", weights[o], target) for o in objectives}
    weights["ew"] = np.tile(ew, (win.out_size, 1))
    returns["ew"] = target @ ew
    return RollingPortfolios(dates=panel.dates[offset + win.in_size:], weights=weights,
                             returns=returns, solutions=solutions)


def write_solutions_csv(result: RollingPortfolios, path, assets: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "objective", *(f"w_{a}" for a in assets),
                         "predicted_factor", "objective_value"])
        for o, sols in result.solutions.items():
            for d, sol in zip(result.dates, sols):
                writer.writerow([d.isoformat() if hasattr(d, "isoformat") else str(d), o,
                                 *(format(v, ".17g") for v in sol.w_opt.w),
                                 format(sol.predicted_factor, ".17g"),
                                 format(sol.objective_value, ".17g")])


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
