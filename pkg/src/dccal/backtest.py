"""Rolling out-of-sample forecasting, VaR backtests and loss-based model comparison."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import xlogy

from .dcc import DccFit, DccParams, fit_dcc, forecast_one_step, refilter_dcc
from .errors import DccAlError, DimError, FitError, RankError, TestError
from .escaviar import AssetRiskParams
from .linalg import ols_solve
from .optimizer import MultistartConfig
from .scoring import JointForecast, RiskLevel, al_log_score, quantile_loss
from .timeseries import ReturnPanel, WindowSpec, portfolio_returns

__all__ = [
    "ForecastRecord",
    "BacktestReport",
    "DccAlModel",
    "FixedParamsModel",
    "rolling_forecast",
    "uc_test",
    "cc_test",
    "dq_test",
    "backtest_report",
    "compare_models",
    "write_records_csv",
    "write_report_json",
]

log = logging.getLogger(__name__)

MIN_BACKTEST_LENGTH = 30


@dataclass(frozen=True)
class ForecastRecord:
    date: object
    realized: float
    forecast: JointForecast
    hit: bool
    q_loss: float
    joint_loss: float
    refit: bool = False
    failed: bool = False

    @classmethod
    def build(cls, date, realized: float, forecast: JointForecast, alpha: float,
              refit: bool = False, failed: bool = False) -> "ForecastRecord":
        return cls(
            date=date,
            realized=float(realized),
            forecast=forecast,
            hit=bool(realized <= forecast.var),
            q_loss=quantile_loss(realized, forecast.var, alpha),
            joint_loss=al_log_score(realized, forecast.var, forecast.es, alpha),
            refit=refit,
            failed=failed,
        )


@dataclass(frozen=True)
class BacktestReport:
    n_obs: int
    n_hits: int
    hit_rate: float
    uc_p: float | None
    cc_p: float | None
    dq1_p: float | None
    dq4_p: float | None
    q_loss_total: float
    joint_loss_total: float


@dataclass
class DccAlModel:
    """Two-stage DCC-AL estimation used by the rolling harness."""

    cfg: MultistartConfig | None = None
    stage1_cfg: MultistartConfig | None = None

    def fit(self, panel: ReturnPanel, w, alpha) -> DccFit:
        return fit_dcc(panel, w, alpha, self.cfg, self.stage1_cfg)

    def refilter(self, fit: DccFit, panel: ReturnPanel, w, alpha) -> DccFit:
        return refilter_dcc(panel, w, fit.params, [f.params for f in fit.stage1], alpha)


@dataclass
class FixedParamsModel:
    """Never estimates: every window is filtered with the same parameters."""

    params: DccParams
    stage1_params: Sequence[AssetRiskParams]

    def fit(self, panel: ReturnPanel, w, alpha) -> DccFit:
        return refilter_dcc(panel, w, self.params, self.stage1_params, alpha)

    def refilter(self, fit: DccFit, panel: ReturnPanel, w, alpha) -> DccFit:
        return self.fit(panel, w, alpha)


def _fit_task(args):
    model, panel, w, alpha = args
    try:
        return model.fit(panel, w, alpha)
    except (DccAlError, np.linalg.LinAlgError) as exc:
        return exc


def rolling_forecast(panel: ReturnPanel, w, win: WindowSpec, model, alpha,
                     threads: int = 1) -> list[ForecastRecord]:
    """One-step forecasts over the last ``win.out_size`` rows of ``panel``.

    Forecast ``k`` uses only the ``win.in_size`` rows preceding its target.
    The model is re-estimated every ``win.step`` steps; in between, the last
    parameters are re-filtered on the current window.  A failed estimation is
    logged and replaced by the previous parameters.

    Raises
    ------
    FitError
        If the first estimation fails (no parameters to carry forward).
    """
    a = RiskLevel(float(alpha)).alpha
    win.validate(panel.T)
    w = np.asarray(w, dtype=float).ravel()
    offset = panel.T - win.in_size - win.out_size
    windows = [panel.window(offset + k, offset + k + win.in_size) for k in range(win.out_size)]
    refit_steps = list(range(0, win.out_size, win.step))
    tasks = [(model, windows[k], w, a) for k in refit_steps]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            fitted = dict(zip(refit_steps, pool.map(_fit_task, tasks)))
    else:
        fitted = {k: _fit_task(t) for k, t in zip(refit_steps, tasks)}

    realized = portfolio_returns(panel, w)
    records = []
    last_fit = None
    for k in range(win.out_size):
        failed = False
        refit = k in fitted
        if refit:
            result = fitted[k]
            if isinstance(result, Exception):
                failed = True
                log.warning("estimation failed at step %d: %s", k, result)
                if last_fit is None:
                    raise FitError(f"first estimation failed: {result}") from result
                fit = model.refilter(last_fit, windows[k], w, a)
            else:
                fit = result
        else:
            fit = model.refilter(last_fit, windows[k], w, a)
        last_fit = fit
        target = offset + k + win.in_size
        records.append(ForecastRecord.build(panel.dates[target], realized[target],
                                            forecast_one_step(fit), a, refit=refit, failed=failed))
    return records


def _check_hits(hits) -> np.ndarray:
    h = np.asarray(hits).astype(bool).ravel()
    if h.size < MIN_BACKTEST_LENGTH:
        raise ValueError(f"backtest needs at least {MIN_BACKTEST_LENGTH} observations, got {h.size}")
    return h


def uc_lr(hits, alpha) -> float:
    """Kupiec likelihood-ratio statistic.

    Uses ``0 * log(0) = 0`` so that zero or all hits give the finite limit.
    """
    a = RiskLevel(float(alpha)).alpha
    h = _check_hits(hits)
    T, x = h.size, int(h.sum())
    pi = x / T
    ll0 = xlogy(T - x, 1.0 - a) + xlogy(x, a)
    ll1 = xlogy(T - x, 1.0 - pi) + xlogy(x, pi)
    return float(max(-2.0 * (ll0 - ll1), 0.0))


def uc_test(hits, alpha) -> float:
    """Unconditional coverage p-value (chi-square with 1 dof)."""
    return float(stats.chi2.sf(uc_lr(hits, alpha), 1))


def ind_lr(hits) -> float:
    """First-order Markov independence LR statistic.

    Empty transition rows contribute nothing (``0 * log(0) = 0``).
    """
    h = _check_hits(hits).astype(int)
    prev, cur = h[:-1], h[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    pi01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    pi11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pi = (n01 + n11) / (n00 + n01 + n10 + n11)
    ll_null = xlogy(n00 + n10, 1.0 - pi) + xlogy(n01 + n11, pi)
    ll_alt = (xlogy(n00, 1.0 - pi01) + xlogy(n01, pi01)
              + xlogy(n10, 1.0 - pi11) + xlogy(n11, pi11))
    return float(max(-2.0 * (ll_null - ll_alt), 0.0))


def cc_test(hits, alpha) -> float:
    """Christoffersen conditional coverage p-value, ``LR_uc + LR_ind`` against chi-square(2)."""
    return float(stats.chi2.sf(uc_lr(hits, alpha) + ind_lr(hits), 2))


def dq_statistic(hits, var_forecasts, lags: int, alpha) -> float:
    a = RiskLevel(float(alpha)).alpha
    h = np.asarray(hits).astype(float).ravel()
    v = np.asarray(var_forecasts, dtype=float).ravel()
    if h.size != v.size:
        raise DimError(f"{h.size} hits for {v.size} forecasts")
    if lags < 1:
        raise ValueError("lags must be >= 1")
    if h.size < lags + MIN_BACKTEST_LENGTH:
        raise ValueError(f"DQ test with {lags} lags needs at least {lags + MIN_BACKTEST_LENGTH} observations")
    hit = h - a
    T = hit.size
    X = np.column_stack([np.ones(T - lags)]
                        + [hit[lags - j: T - j] for j in range(1, lags + 1)]
                        + [v[lags:]])
    y = hit[lags:]
    try:
        beta = ols_solve(X, y)
    except RankError as exc:
        raise TestError(f"singular DQ regressors: {exc}") from exc
    return float(beta @ (X.T @ X) @ beta / (a * (1.0 - a)))


def dq_test(hits, var_forecasts, lags: int, alpha) -> float:
    """Dynamic quantile Wald test p-value.

    Regresses ``1{r <= VaR} - alpha`` on a constant, ``lags`` lagged values of
    itself and the contemporaneous VaR forecast; ``lags + 2`` restrictions.

    Raises
    ------
    TestError
        If the regressor matrix is singular.
    """
    return float(stats.chi2.sf(dq_statistic(hits, var_forecasts, lags, alpha), lags + 2))


def _or_none(test, *args):
    try:
        return test(*args)
    except ValueError as exc:
        log.info("%s not available: %s", test.__name__, exc)
        return None


def _dq_or_none(hits, var, lags, alpha):
    try:
        return dq_test(hits, var, lags, alpha)
    except (TestError, ValueError) as exc:
        log.info("DQ(%d) not available: %s", lags, exc)
        return None


def backtest_report(records: Sequence[ForecastRecord], alpha) -> BacktestReport:
    """Hit statistics, test p-values and loss totals.

    A p-value is ``None`` when its test is not defined for the record count or
    its regressors are singular.
    """
    hits = np.array([r.hit for r in records], dtype=bool)
    var = np.array([r.forecast.var for r in records])
    n = len(records)
    return BacktestReport(
        n_obs=n,
        n_hits=int(hits.sum()),
        hit_rate=float(hits.sum() / n) if n else math.nan,
        uc_p=_or_none(uc_test, hits, alpha),
        cc_p=_or_none(cc_test, hits, alpha),
        dq1_p=_dq_or_none(hits, var, 1, alpha),
        dq4_p=_dq_or_none(hits, var, 4, alpha),
        q_loss_total=float(sum(r.q_loss for r in records)),
        joint_loss_total=float(sum(r.joint_loss for r in records)),
    )


def compare_models(records: Mapping[str, Sequence[ForecastRecord]]) -> list[dict]:
    """Per-model loss totals, sorted by joint loss, with the lowest of each flagged."""
    names = list(records)
    if not names:
        return []
    dates = [tuple(r.date for r in records[m]) for m in names]
    if any(d != dates[0] for d in dates[1:]):
        raise DimError("models were evaluated on different out-of-sample dates")
    rows = [{"model": m,
             "q_loss_total": float(sum(r.q_loss for r in records[m])),
             "joint_loss_total": float(sum(r.joint_loss for r in records[m]))}
            for m in names]
    best_q = min(rows, key=lambda r: r["q_loss_total"])["model"]
    best_j = min(rows, key=lambda r: r["joint_loss_total"])["model"]
    for row in rows:
        row["best_q_loss"] = row["model"] == best_q
        row["best_joint_loss"] = row["model"] == best_j
    return sorted(rows, key=lambda r: (r["joint_loss_total"], r["model"]))


def write_records_csv(records: Sequence[ForecastRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "realized", "var", "es", "hit", "q_loss", "joint_loss"])
        for r in records:
            date = r.date.isoformat() if hasattr(r.date, "isoformat") else str(r.date)
            writer.writerow([date, *(format(v, ".17g") for v in
                                     (r.realized, r.forecast.var, r.forecast.es)),
                             int(r.hit), format(r.q_loss, ".17g"), format(r.joint_loss, ".17g")])


def write_report_json(report: BacktestReport, path, extra: dict | None = None) -> None:
    doc = asdict(report)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
