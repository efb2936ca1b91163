"""Monte-Carlo study: DCC-GARCH data generation, true risk factors, bias/RMSE tables.

The data generating process is a DCC model with GARCH(1,1) volatilities:

    h2[t, i] = omega + alpha * r[t-1, i]^2 + beta * h2[t-1, i]
    R[t] = (1 - a - b) * Sigma + a * eps[t-1] eps[t-1]' + b * R[t-1]
    r[t] = D[t] chol(P[t]) z[t]

so that ``H[t] = D[t] P[t] D[t]`` and ``eps[t] = r[t] / h[t]``.  Innovations
``z`` have zero mean and identity covariance under three laws: Gaussian,
multivariate Student t (spherical) and a product of independent standardized
univariate t marginals with different degrees of freedom (non-spherical).

Random streams come from ``numpy.random.SeedSequence``: each replication
owns a child sequence indexed by its replication number, and Gaussian and
chi-square draws use separate grandchildren.  Replication ``k`` therefore
sees the same base Gaussian shocks in every (distribution, T) cell, and the
shorter sample is a prefix of the longer one.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .dcc import MIN_FIT_LENGTH, fit_dcc, forecast_one_step
from .errors import DccAlError, SimError
from .optimizer import MultistartConfig
from .scoring import RiskLevel
from .timeseries import ReturnPanel, equal_weights

__all__ = [
    "DgpSpec",
    "TrueFactors",
    "SimulatedPanel",
    "StudyCell",
    "CellResult",
    "StudyReport",
    "draw_nst_dof",
    "simulate_panel",
    "true_factors_spherical",
    "true_factors_simulated",
    "true_factors",
    "run_replication",
    "run_study",
    "write_study_csv",
]

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("normal", "mvt", "nst")
STAT_COLUMNS = ("a", "b", "gamma0", "q2", "var_fc", "es_fc")


@dataclass(frozen=True)
class DgpSpec:
    """Simulation design.

    ``nu`` is a scalar for ``mvt`` and a length-n vector for ``nst``; it is
    ignored for ``normal``.  ``seed`` is an int or a ``SeedSequence``.
    ``vol_scale`` optionally multiplies each asset's volatility (equivalent to
    scaling its GARCH intercept by the squared factor).
    """

    n: int = 5
    T: int = 2000
    a: float = 0.12
    b: float = 0.78
    rho: float = 0.5
    garch: tuple = (0.1, 0.1, 0.8)
    dist: str = "normal"
    nu: object = 10.0
    seed: object = 0
    burn: int = 500
    vol_scale: tuple | None = None

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"dist must be one of {DISTRIBUTIONS}, got {self.dist!r}")
        if self.n < 1 or self.T < 1 or self.burn < 0:
            raise ValueError("n and T must be positive and burn non-negative")
        if self.a < 0 or self.b < 0 or self.a + self.b >= 1:
            raise ValueError("need a, b >= 0 and a + b < 1")
        omega, alpha, beta = self.garch
        if omega <= 0 or alpha < 0 or beta < 0 or alpha + beta >= 1:
            raise ValueError("need omega > 0 and alpha + beta < 1")
        if self.n > 1 and not -1.0 / (self.n - 1) < self.rho < 1.0:
            raise ValueError("rho outside the positive-definite range")
        if self.dist == "mvt" and not float(self.nu) > 2:
            raise ValueError("mvt needs nu > 2")
        if self.vol_scale is not None:
            s = np.asarray(self.vol_scale, dtype=float)
            if s.shape != (self.n,) or np.any(~(s > 0)):
                raise ValueError("vol_scale needs n positive entries")
        if self.dist == "nst":
            nu = np.asarray(self.nu, dtype=float).ravel()
            if nu.size != self.n or np.any(~(nu > 2)):
                raise ValueError("nst needs a length-n vector of dof > 2")

    @property
    def sigma_eps(self) -> np.ndarray:
        S = np.full((self.n, self.n), self.rho)
        np.fill_diagonal(S, 1.0)
        return S

    def seed_sequence(self) -> np.random.SeedSequence:
        if isinstance(self.seed, np.random.SeedSequence):
            return self.seed
        return np.random.SeedSequence(int(self.seed))


@dataclass(frozen=True)
class TrueFactors:
    q_true: float
    c_true: float
    gamma0_true: float

    @classmethod
    def from_qc(cls, q: float, c: float) -> "TrueFactors":
        return cls(float(q), float(c), float(math.log(c * c / (q * q) - 1.0)))

    @property
    def q2_true(self) -> float:
        return self.q_true ** 2


@dataclass(frozen=True)
class SimulatedPanel:
    """Simulated returns plus the true conditional covariances.

    ``H`` has ``T + 1`` entries: ``H[t]`` is the covariance of ``r[t]`` and
    ``H[T]`` the one-step-ahead covariance.  ``chol_P`` holds the Cholesky
    factors of the true correlations, so ``D[t] chol_P[t]`` is a square
    root of ``H[t]``.
    """

    panel: ReturnPanel
    H: np.ndarray
    vol: np.ndarray
    chol_P: np.ndarray
    z: np.ndarray
    spec: DgpSpec


def draw_nst_dof(n: int, seed, low: float = 5.0, high: float = 15.0) -> np.ndarray:
    """Marginal degrees of freedom ``nu_i ~ U[low, high]``."""
    return np.random.default_rng(seed).uniform(low, high, size=n)


def _innovations(spec: DgpSpec, N: int) -> np.ndarray:
    ss_y, ss_w = spec.seed_sequence().spawn(2)
    y = np.random.default_rng(ss_y).standard_normal((N, spec.n))
    if spec.dist == "normal":
        return y
    rng_w = np.random.default_rng(ss_w)
    if spec.dist == "mvt":
        nu = float(spec.nu)
        w = rng_w.chisquare(nu, size=N)
        return y * np.sqrt((nu - 2.0) / w)[:, None]
    nu = np.asarray(spec.nu, dtype=float)
    w = rng_w.chisquare(nu, size=(N, spec.n))
    return y * np.sqrt((nu - 2.0) / w)


def simulate_panel(spec: DgpSpec) -> SimulatedPanel:
    """Generate ``T`` returns after ``burn`` discarded steps.

    Raises
    ------
    SimError
        If a correlation matrix fails to factorize.
    """
    n, T, burn = spec.n, spec.T, spec.burn
    N = burn + T
    z = _innovations(spec, N)
    omega, ga, gb = spec.garch
    a, b = spec.a, spec.b
    S = spec.sigma_eps
    intercept = (1.0 - a - b) * S

    h2 = np.full(n, omega / (1.0 - ga - gb))
    R = S.copy()
    r_out = np.empty((N, n))
    vol = np.empty((N + 1, n))
    P_out = np.empty((N + 1, n, n))
    L_out = np.empty((N + 1, n, n))
    for t in range(N + 1):
        d = 1.0 / np.sqrt(np.diag(R))
        P = R * np.outer(d, d)
        np.fill_diagonal(P, 1.0)
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise SimError(f"correlation matrix not PD at step {t}") from exc
        h = np.sqrt(h2)
        vol[t], P_out[t], L_out[t] = h, P, L
        if t == N:
            break
        e = L @ z[t]
        r = h * e
        r_out[t] = r
        h2 = omega + ga * r * r + gb * h2
        R = intercept + a * np.outer(e, e) + b * R

    vol, P_out, L_out = vol[burn:], P_out[burn:], L_out[burn:]
    r_out = r_out[burn:]
    if spec.vol_scale is not None:
        scale = np.asarray(spec.vol_scale, dtype=float)
        vol = vol * scale
        r_out = r_out * scale
    H = vol[:, :, None] * P_out * vol[:, None, :]
    panel = ReturnPanel.from_array(r_out, [f"S{i + 1}" for i in range(n)])
    return SimulatedPanel(panel=panel, H=H, vol=vol, chol_P=L_out, z=z[burn:], spec=spec)


def true_factors_spherical(dist: str, alpha, nu: float = 10.0) -> TrueFactors:
    """Quantile and tail mean of a standardized normal or Student t marginal."""
    a = RiskLevel(float(alpha)).alpha
    if dist == "normal":
        q = stats.norm.ppf(a)
        c = -stats.norm.pdf(q) / a
    elif dist == "mvt":
        if not nu > 2:
            raise ValueError("nu must exceed 2")
        s = math.sqrt((nu - 2.0) / nu)
        x = stats.t.ppf(a, nu)
        tail = -(nu + x * x) / (nu - 1.0) * stats.t.pdf(x, nu) / a
        q, c = s * x, s * tail
    else:
        raise ValueError(f"no analytic factors for {dist!r}")
    return TrueFactors.from_qc(q, c)


def _empirical_factors(z: np.ndarray, alpha: float) -> tuple[float, float]:
    q = float(np.quantile(z, alpha))
    return q, float(np.mean(z[z <= q]))


def true_factors_simulated(spec: DgpSpec, w, alpha, T_sim: int = 100_000) -> TrueFactors:
    """Empirical quantile and tail mean of ``w'r / sqrt(w'Hw)`` over a long simulation."""
    a = RiskLevel(float(alpha)).alpha
    w = np.asarray(w, dtype=float).ravel()
    sim = simulate_panel(replace(spec, T=int(T_sim)))
    r = sim.panel.values @ w
    sd = np.sqrt(np.einsum("i,tij,j->t", w, sim.H[:-1], w))
    return TrueFactors.from_qc(*_empirical_factors(r / sd, a))


def true_factors(spec: DgpSpec, w, alpha, T_sim: int = 100_000) -> TrueFactors:
    if spec.dist in ("normal", "mvt"):
        return true_factors_spherical(spec.dist, alpha, float(spec.nu) if spec.dist == "mvt" else 10.0)
    return true_factors_simulated(spec, w, alpha, T_sim)


@dataclass(frozen=True)
class StudyCell:
    dist: str
    T: int

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"dist must be one of {DISTRIBUTIONS}, got {self.dist!r}")
        if int(self.T) < MIN_FIT_LENGTH:
            raise ValueError(f"T must be at least {MIN_FIT_LENGTH}, got {self.T}")


@dataclass
class CellResult:
    cell: StudyCell
    truth: TrueFactors
    estimates: np.ndarray
    failures: int
    n_reps: int
    max_fail_frac: float = 0.10

    @property
    def failed(self) -> bool:
        return self.failures > self.max_fail_frac * self.n_reps

    def _true_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.truth.gamma0_true, self.truth.q2_true])

    def stats(self, a_true: float, b_true: float) -> dict[str, np.ndarray]:
        """``true``/``mean``/``rmse`` rows over the successful replications.

        Estimates columns: a, b, gamma0, q2, var_fc, es_fc, var_true, es_true.
        """
        est = self.estimates
        if est.shape[0] == 0:
            nan = np.full(len(STAT_COLUMNS), np.nan)
            return {"true": nan, "mean": nan, "rmse": nan}
        truth = np.array([a_true, b_true, self.truth.gamma0_true, self.truth.q2_true])
        par = est[:, :4]
        fc, fc_true = est[:, 4:6], est[:, 6:8]
        return {
            "true": np.concatenate([truth, fc_true.mean(axis=0)]),
            "mean": np.concatenate([par.mean(axis=0), fc.mean(axis=0)]),
            "rmse": np.concatenate([
                np.sqrt(np.mean((par - truth) ** 2, axis=0)),
                np.sqrt(np.mean((fc - fc_true) ** 2, axis=0)),
            ]),
        }


@dataclass
class StudyReport:
    cells: list[CellResult]
    a_true: float
    b_true: float
    nu: object = None
    settings: dict = field(default_factory=dict)

    def cell(self, dist: str, T: int) -> CellResult:
        for c in self.cells:
            if c.cell == StudyCell(dist, T):
                return c
        raise KeyError((dist, T))

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            st = c.stats(self.a_true, self.b_true)
            for name in ("true", "mean", "rmse"):
                row = {"dist": c.cell.dist, "T": c.cell.T, "stat": name}
                row.update(dict(zip(STAT_COLUMNS, st[name])))
                row["status"] = "failed" if c.failed else "ok"
                out.append(row)
        return out


def run_replication(spec: DgpSpec, truth: TrueFactors, alpha: float,
                    cfg: MultistartConfig) -> np.ndarray:
    """Simulate, fit the equal-weight portfolio, and forecast one step.

    Returns ``[a, b, gamma0, q2, var_fc, es_fc, var_true, es_true]``.
    """
    sim = simulate_panel(spec)
    w = equal_weights(spec.n).w
    fit = fit_dcc(sim.panel, w, alpha, cfg)
    fc = forecast_one_step(fit)
    sd_true = math.sqrt(float(w @ sim.H[-1] @ w))
    p = fit.params
    return np.array([p.a, p.b, p.gamma0, p.q ** 2, fc.var, fc.es,
                     truth.q_true * sd_true, truth.c_true * sd_true])


def _replication_task(args):
    spec, truth, alpha, cfg = args
    try:
        return run_replication(spec, truth, alpha, cfg)
    except (DccAlError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("replication failed (%s, T=%d): %s", spec.dist, spec.T, exc)
        return None


def run_study(cells: Sequence[StudyCell], n_reps: int, *, n: int = 5, alpha: float = 0.025,
              seed: int = 0, cfg: MultistartConfig | None = None, nu_mvt: float = 10.0,
              nst_seed: int | None = None, T_sim: int = 100_000, threads: int = 1,
              base: DgpSpec | None = None) -> StudyReport:
    """Bias/RMSE experiment over a grid of (distribution, T) cells.

    Replication ``k`` uses the seed sequence ``(seed, k)`` in every cell.
    Failed fits are counted; a cell with more than 10% failures is flagged.
    The ``nst`` degrees of freedom are drawn once per study from
    ``nst_seed`` (default ``seed``) and recorded in the report settings.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    cfg = cfg or MultistartConfig()
    base = base or DgpSpec(n=n)
    w = equal_weights(base.n).w
    nst_seed = seed if nst_seed is None else nst_seed
    nu_nst = draw_nst_dof(base.n, nst_seed)
    truths = {}
    results = []
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for cell in cells:
            nu = nu_mvt if cell.dist == "mvt" else (nu_nst if cell.dist == "nst" else nu_mvt)
            if cell.dist not in truths:
                tspec = replace(base, dist=cell.dist, nu=nu,
                                seed=np.random.SeedSequence(seed, spawn_key=(2 ** 31 - 1,)))
                truths[cell.dist] = true_factors(tspec, w, alpha, T_sim)
            tasks = [
                (replace(base, dist=cell.dist, nu=nu, T=cell.T,
                         seed=np.random.SeedSequence(seed, spawn_key=(k,))),
                 truths[cell.dist], alpha, cfg)
                for k in range(n_reps)
            ]
            outs = list(pool.map(_replication_task, tasks)) if pool else [_replication_task(t) for t in tasks]
            good = [o for o in outs if o is not None]
            est = np.array(good) if good else np.empty((0, 8))
            res = CellResult(cell=cell, truth=truths[cell.dist], estimates=est,
                             failures=n_reps - len(good), n_reps=n_reps)
            if res.failed:
                log.warning("cell %s T=%d failed: %d of %d replications did not fit",
                            cell.dist, cell.T, res.failures, n_reps)
            results.append(res)
    finally:
        if pool is not None:
            pool.shutdown()
    settings = {"n": base.n, "alpha": alpha, "seed": seed, "nst_seed": nst_seed,
                "nu_nst": nu_nst.tolist(), "nu_mvt": nu_mvt, "n_reps": n_reps}
    return StudyReport(cells=results, a_true=base.a, b_true=base.b, nu=nu_nst, settings=settings)


def write_study_csv(report: StudyReport, path) -> None:
    """Table layout: ``dist,T,stat,a,b,gamma0,q2,var_fc,es_fc,status``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dist", "T", "stat", *STAT_COLUMNS, "status"])
        for row in report.rows():
            writer.writerow([row["dist"], row["T"], row["stat"],
                             *(format(float(row[k]), ".17g") for k in STAT_COLUMNS), row["status"]])
