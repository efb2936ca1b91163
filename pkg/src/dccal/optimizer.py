"""Derivative-free bound-constrained minimization with multistart.

The local solver is a Nelder-Mead simplex run in an unconstrained space; the
box is handled by a logistic map ``x = lo + (hi - lo) * sigmoid(y)`` so every
evaluated point lies inside the bounds.  The objective may return ``+inf`` to
reject a candidate (constraint handling by rejection).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import InfeasibleError

__all__ = [
    "BoundedProblem",
    "MultistartConfig",
    "StartResult",
    "MinimizeResult",
    "nelder_mead",
    "minimize",
]

log = logging.getLogger(__name__)


@dataclass
class BoundedProblem:
    objective: Callable[[np.ndarray], float]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(~(self.lower < self.upper)):
            raise ValueError("need lower < upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    def __call__(self, x: np.ndarray) -> float:
        f = float(self.objective(x))
        return f if np.isfinite(f) else np.inf

    def to_box(self, y: np.ndarray) -> np.ndarray:
        span = self.upper - self.lower
        x = self.lower + span * expit(y)
        return np.clip(x, self.lower, self.upper)

    def from_box(self, x: np.ndarray) -> np.ndarray:
        span = self.upper - self.lower
        u = (np.asarray(x, dtype=float) - self.lower) / span
        u = np.clip(u, 1e-9, 1.0 - 1e-9)
        return np.log(u) - np.log1p(-u)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass
class MultistartConfig:
    """Multistart settings.

    ``tol_f`` is relative, ``|f_i - f_best| <= tol_f * (1 + |f_best|)``;
    ``tol_x`` applies to the simplex diameter in the unconstrained space.
    After a local search converges it is restarted from its optimum with a
    fresh simplex up to ``n_restarts`` times while that still improves.
    """

    n_starts: int = 5
    max_iters: int = 2000
    tol_f: float = 1e-8
    tol_x: float = 1e-6
    seed: int = 0
    n_restarts: int = 1
    init_step: float = 0.5

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.tol_f <= 0 or self.tol_x <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class StartResult:
    x0: np.ndarray
    f0: float
    x: np.ndarray
    f: float
    n_iter: int
    n_eval: int
    converged: bool


@dataclass
class MinimizeResult:
    x: np.ndarray
    f: float
    best_start: int
    starts: list[StartResult] = field(default_factory=list)


def nelder_mead(func: Callable[[np.ndarray], float], y0: np.ndarray, *, step: float = 0.5,
                max_iters: int = 2000, tol_f: float = 1e-8, tol_x: float = 1e-6,
                adaptive: bool | None = None) -> tuple[np.ndarray, float, int, int, bool]:
    """Unconstrained Nelder-Mead.

    Returns ``(y_best, f_best, n_iter, n_eval, converged)``.  The best vertex
    value never increases, so ``f_best <= func(y0)``.
    """
    y0 = np.asarray(y0, dtype=float)
    d = y0.size
    if adaptive is None:
        adaptive = d > 4
    if adaptive:
        rho, chi, psi, sigma = 1.0, 1.0 + 2.0 / d, 0.75 - 1.0 / (2.0 * d), 1.0 - 1.0 / d
    else:
        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5

    sim = np.empty((d + 1, d))
    sim[0] = y0
    for i in range(d):
        sim[i + 1] = y0
        sim[i + 1, i] += step
    fsim = np.array([func(v) for v in sim])
    n_eval = d + 1
    n_iter = 0
    converged = False

    while True:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        if not np.isfinite(fsim[0]):
            break
        if (np.max(np.abs(sim[1:] - sim[0])) <= tol_x
                and np.max(np.abs(fsim[1:] - fsim[0])) <= tol_f * (1.0 + abs(fsim[0]))):
            converged = True
            break
        if n_iter >= max_iters:
            break
        n_iter += 1

        xbar = sim[:-1].mean(axis=0)
        xr = (1 + rho) * xbar - rho * sim[-1]
        fr = func(xr)
        n_eval += 1
        shrink = False
        if fr < fsim[0]:
            xe = (1 + rho * chi) * xbar - rho * chi * sim[-1]
            fe = func(xe)
            n_eval += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
        elif fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
        elif fr < fsim[-1]:
            xc = (1 + psi * rho) * xbar - psi * rho * sim[-1]
            fc = func(xc)
            n_eval += 1
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
            else:
                shrink = True
        else:
            xcc = (1 - psi) * xbar + psi * sim[-1]
            fcc = func(xcc)
            n_eval += 1
            if fcc < fsim[-1]:
                sim[-1], fsim[-1] = xcc, fcc
            else:
                shrink = True
        if shrink:
            for j in range(1, d + 1):
                sim[j] = sim[0] + sigma * (sim[j] - sim[0])
                fsim[j] = func(sim[j])
            n_eval += d

    order = np.argsort(fsim, kind="stable")
    return sim[order[0]].copy(), float(fsim[order[0]]), n_iter, n_eval, converged


def _local_search(problem: BoundedProblem, x0: np.ndarray, cfg: MultistartConfig) -> StartResult:
    def g(y):
        return problem(problem.to_box(y))

    y = problem.from_box(x0)
    x_start = problem.to_box(y)
    f0 = problem(x_start)
    f_best, y_best = f0, y
    iters = evals = 0
    converged = False
    for attempt in range(cfg.n_restarts + 1):
        budget = cfg.max_iters - iters
        if budget <= 0:
            break
        yk, fk, it, ev, conv = nelder_mead(
            g, y_best, step=cfg.init_step, max_iters=budget, tol_f=cfg.tol_f, tol_x=cfg.tol_x
        )
        iters += it
        evals += ev
        improved = fk < f_best - cfg.tol_f * (1.0 + abs(f_best))
        if fk <= f_best:
            f_best, y_best = fk, yk
        converged = conv
        if not np.isfinite(f_best) or (attempt > 0 and not improved):
            break
    return StartResult(x0=x_start, f0=f0, x=problem.to_box(y_best), f=f_best,
                       n_iter=iters, n_eval=evals, converged=converged)


def _random_start(problem: BoundedProblem, rng: np.random.Generator, max_draws: int = 200) -> np.ndarray:
    # resample until the objective is finite so the simplex starts inside the feasible set
    x = problem.lower + (problem.upper - problem.lower) * rng.random(problem.dim)
    for _ in range(max_draws - 1):
        if np.isfinite(problem(x)):
            break
        x = problem.lower + (problem.upper - problem.lower) * rng.random(problem.dim)
    return x


def minimize(problem: BoundedProblem, cfg: MultistartConfig | None = None,
             starts: Sequence[Sequence[float]] | str | None = None) -> MinimizeResult:
    """Multistart Nelder-Mead over a box.

    Parameters
    ----------
    problem : BoundedProblem
    cfg : MultistartConfig
    starts : list of vectors, ``"random"`` or None
        Explicit starting points are used first; the remaining
        ``cfg.n_starts - len(starts)`` starts are uniform draws in the box
        (redrawn until the objective is finite).

    Returns
    -------
    MinimizeResult
        Best point over all starts; ties go to the lowest start index.

    Raises
    ------
    InfeasibleError
        If every start ends at ``+inf``.
    """
    cfg = cfg or MultistartConfig()
    explicit = [] if starts is None or isinstance(starts, str) else [np.asarray(s, dtype=float) for s in starts]
    for s in explicit:
        if s.shape != (problem.dim,) or not problem.contains(s):
            raise ValueError(f"start {s} is outside the bounds or has the wrong size")
    rng = np.random.default_rng(cfg.seed)
    n_random = max(cfg.n_starts - len(explicit), 0)
    points = explicit + [_random_start(problem, rng) for _ in range(n_random)]

    results = [_local_search(problem, x0, cfg) for x0 in points]
    fvals = np.array([r.f for r in results])
    if not np.any(np.isfinite(fvals)):
        raise InfeasibleError("objective is +inf at every start")
    best = int(np.argmin(fvals))
    log.debug("multistart: best start %d of %d, f=%.6g", best, len(results), fvals[best])
    return MinimizeResult(x=results[best].x.copy(), f=results[best].f, best_start=best, starts=results)
