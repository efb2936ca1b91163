"""Batch command-line interface.

Usage::

    dccal <command> [--config FILE] [--key value ...]

Commands are ``fit``, ``backtest``, ``study``, ``optimize`` and
``simulate``.  Settings come from built-in defaults, then an optional flat
``key = value`` config file, then command-line flags (flags win).  Logs go
to standard error and results to files in ``out``.  Exit codes: 0 success,
1 numerical failure, 2 input or configuration error; failures also print a
one-line JSON error document on standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import backtest, portopt, simulate
from .dcc import fit_dcc, forecast_one_step
from .errors import DccAlError, DimError, DomainError, IngestError
from .optimizer import MultistartConfig
from .scoring import RiskLevel
from .timeseries import ReturnPanel, WindowSpec, equal_weights, load_panel, write_panel

__all__ = ["RunConfig", "ConfigError", "parse_config_file", "main"]

log = logging.getLogger("dccal")

COMMANDS = ("fit", "backtest", "study", "optimize", "simulate")
SAMPLE_DATA = "sample"


class ConfigError(ValueError):
    """Invalid configuration value or file."""


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    t = str(text).strip().lower()
    return None if t in ("", "none") else float(t)


def _cells(text: str) -> tuple:
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        dist, _, T = item.partition(":")
        out.append((dist.strip(), int(T)))
    return tuple(out)


def _names(text: str) -> tuple:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


@dataclass
class RunConfig:
    """All settings of a run; see the README for the meaning of each key."""

    data: str = SAMPLE_DATA
    prices: bool = False
    out: str = "out"
    alpha: float = 0.025
    weights: str = "ew"
    in_size: int = 500
    out_size: int = 50
    step: int = 1
    n_starts: int = 5
    max_iters: int = 2000
    tol_f: float = 1e-8
    tol_x: float = 1e-6
    seed: int = 0
    threads: int = 0
    n_sim: int = 1000
    objectives: tuple = portopt.OBJECTIVES
    mu_target: float | None = None
    allow_short: bool = False
    cells: tuple = (("normal", 2000), ("normal", 5000))
    n_reps: int = 50
    n: int = 5
    T: int = 2000
    dist: str = "normal"
    nu: float = 10.0
    T_sim: int = 100_000

    _parsers = {
        "prices": _bool, "allow_short": _bool, "alpha": float, "tol_f": float, "tol_x": float,
        "nu": float, "mu_target": _optional_float, "objectives": _names, "cells": _cells,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def update(self, values: dict) -> None:
        for key, raw in values.items():
            if key not in self.keys():
                raise ConfigError(f"unknown configuration key {key!r}")
            default = getattr(type(self), key, None)
            parser = self._parsers.get(key) or (int if isinstance(default, int) else str)
            try:
                setattr(self, key, parser(raw) if isinstance(raw, str) else raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def validate(self, command: str) -> None:
        """Check every setting the command uses before any work starts."""
        try:
            RiskLevel(self.alpha)
            if self.threads < 0:
                raise ValueError("threads must be >= 0")
            self.optimizer_config()
            if command in ("backtest", "optimize"):
                WindowSpec(self.in_size, self.out_size, self.step)
            if command == "optimize":
                for o in self.objectives:
                    if o not in portopt.OBJECTIVES:
                        raise ValueError(f"unknown objective {o!r}")
                if self.n_sim < 2:
                    raise ValueError("n_sim must be >= 2")
            if command == "study":
                if self.n_reps < 1:
                    raise ValueError("n_reps must be >= 1")
                if not self.cells:
                    raise ValueError("cells must name at least one dist:T pair")
                for dist, T in self.cells:
                    simulate.StudyCell(dist, T)
                simulate.DgpSpec(n=self.n, nu=self.nu)
            if command == "simulate":
                self.dgp_spec()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def optimizer_config(self) -> MultistartConfig:
        return MultistartConfig(n_starts=self.n_starts, max_iters=self.max_iters,
                                tol_f=self.tol_f, tol_x=self.tol_x, seed=self.seed)

    def dgp_spec(self) -> simulate.DgpSpec:
        # the non-spherical design draws one dof per asset from the seed
        nu = simulate.draw_nst_dof(self.n, self.seed) if self.dist == "nst" else self.nu
        return simulate.DgpSpec(n=self.n, T=self.T, dist=self.dist, nu=nu, seed=self.seed)

    @property
    def n_threads(self) -> int:
        return self.threads or (os.cpu_count() or 1)


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


def _load_data(cfg: RunConfig) -> ReturnPanel:
    if cfg.data == SAMPLE_DATA:
        with resources.as_file(resources.files("dccal") / "data" / "sample.csv") as p:
            return load_panel(p)
    path = Path(cfg.data)
    if not path.is_file():
        raise IngestError(f"data file not found: {cfg.data}")
    return load_panel(path, prices=cfg.prices)


def _weights(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.weights.strip().lower() == "ew":
        return np.asarray(equal_weights(n), dtype=float)
    try:
        w = np.array([float(v) for v in cfg.weights.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad weights {cfg.weights!r}") from exc
    if w.size != n:
        raise DimError(f"{w.size} weights for {n} assets")
    if abs(w.sum() - 1.0) > 1e-10 or np.any(w < 0):
        raise ConfigError("weights must be non-negative and sum to 1")
    return w


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_fit(cfg: RunConfig) -> list[Path]:
    """Fit the model on the whole panel; writes ``fit.json`` and ``paths.csv``."""
    panel = _load_data(cfg)
    w = _weights(cfg, panel.n)
    fit = fit_dcc(panel, w, cfg.alpha, cfg.optimizer_config())
    fc = forecast_one_step(fit)
    out = Path(cfg.out)
    doc = {
        "alpha": cfg.alpha,
        "assets": list(panel.assets),
        "weights": w.tolist(),
        "T": panel.T,
        "params": {"a": fit.params.a, "b": fit.params.b, "q": fit.params.q,
                   "gamma0": fit.params.gamma0, "c": fit.params.c},
        "loss": fit.loss,
        "stage1": [
            {"asset": name, "alpha_q": f.params.alpha_q, "beta": f.params.beta, "q": f.params.q,
             "gamma0": f.params.gamma0, "loss": f.loss, "sample_var": f.sample_var}
            for name, f in zip(panel.assets, fit.stage1)
        ],
        "mu": fit.mu.tolist(),
        "sigma_eps_hat": fit.corr.sigma_eps_hat.tolist(),
        "forecast": {"var": fc.var, "es": fc.es},
    }
    _write_json(out / "fit.json", doc)
    r = panel.values @ w
    _write_rows(out / "paths.csv", ["date", "realized", "var", "es"],
                ([d.isoformat(), _fmt(x), _fmt(v), _fmt(e)]
                 for d, x, v, e in zip(panel.dates, r, fit.port_var_path, fit.port_es_path)))
    return [out / "fit.json", out / "paths.csv"]


def cmd_backtest(cfg: RunConfig) -> list[Path]:
    """Rolling forecasts; writes ``records.csv`` and ``report.json``."""
    panel = _load_data(cfg)
    w = _weights(cfg, panel.n)
    win = WindowSpec(cfg.in_size, cfg.out_size, cfg.step)
    try:
        win.validate(panel.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = backtest.DccAlModel(cfg.optimizer_config())
    records = backtest.rolling_forecast(panel, w, win, model, cfg.alpha, threads=cfg.n_threads)
    report = backtest.backtest_report(records, cfg.alpha)
    out = Path(cfg.out)
    backtest.write_records_csv(records, out / "records.csv")
    backtest.write_report_json(report, out / "report.json",
                               {"alpha": cfg.alpha, "n_failed": sum(r.failed for r in records)})
    return [out / "records.csv", out / "report.json"]


def cmd_study(cfg: RunConfig) -> list[Path]:
    """Monte Carlo bias/RMSE study; writes ``study.csv`` and ``study.json``."""
    cells = [simulate.StudyCell(d, T) for d, T in cfg.cells]
    base = simulate.DgpSpec(n=cfg.n, nu=cfg.nu)
    report = simulate.run_study(cells, cfg.n_reps, n=cfg.n, alpha=cfg.alpha, seed=cfg.seed,
                                cfg=cfg.optimizer_config(), nu_mvt=cfg.nu, T_sim=cfg.T_sim,
                                threads=cfg.n_threads, base=base)
    out = Path(cfg.out)
    simulate.write_study_csv(report, out / "study.csv")
    failed = [f"{c.cell.dist}:{c.cell.T}" for c in report.cells if c.failed]
    for name in failed:
        log.warning("cell %s exceeded the failure budget", name)
    _write_json(out / "study.json", {**report.settings, "failed_cells": failed,
                                     "failures": {f"{c.cell.dist}:{c.cell.T}": c.failures
                                                  for c in report.cells}})
    return [out / "study.csv", out / "study.json"]


def cmd_optimize(cfg: RunConfig) -> list[Path]:
    """Rolling portfolio optimization; writes ``solutions.csv`` and ``hedging.json``."""
    panel = _load_data(cfg)
    win = WindowSpec(cfg.in_size, cfg.out_size, cfg.step)
    try:
        win.validate(panel.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = portopt.rolling_optimize(
        panel, win, cfg.alpha, objectives=cfg.objectives, mu_target=cfg.mu_target,
        n_sim=cfg.n_sim, seed=cfg.seed, cfg=cfg.optimizer_config(),
        opt_cfg=cfg.optimizer_config(), allow_short=cfg.allow_short)
    out = Path(cfg.out)
    portopt.write_solutions_csv(result, out / "solutions.csv", panel.assets)
    summary = portopt.hedging_summary(result.returns, cfg.alpha)
    portopt.write_summary_json({"alpha": cfg.alpha, "strategies": summary}, out / "hedging.json")
    return [out / "solutions.csv", out / "hedging.json"]


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Simulate a panel from the study DGP; writes ``panel.csv`` and ``truth.csv``."""
    spec = cfg.dgp_spec()
    sim = simulate.simulate_panel(spec)
    out = Path(cfg.out)
    write_panel(sim.panel, out / "panel.csv")
    w = np.asarray(equal_weights(cfg.n), dtype=float)
    sd = np.sqrt(np.einsum("n,tnm,m->t", w, sim.H[:-1], w))
    _write_rows(out / "truth.csv", ["date", *(f"vol_{a}" for a in sim.panel.assets), "ew_sd"],
                ([d.isoformat(), *map(_fmt, v), _fmt(s)]
                 for d, v, s in zip(sim.panel.dates, sim.vol[:sim.panel.T], sd)))
    return [out / "panel.csv", out / "truth.csv"]


HANDLERS = {"fit": cmd_fit, "backtest": cmd_backtest, "study": cmd_study,
            "optimize": cmd_optimize, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dccal", description="DCC-AL portfolio VaR/ES toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0], allow_abbrev=False)
        p.add_argument("--config", help="flat key = value settings file")
        p.add_argument("--verbose", "-v", action="count", default=0)
        for key in RunConfig.keys():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")
    return parser


def _error_doc(exc: BaseException, code: int) -> str:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    stage = getattr(exc, "stage", None)
    if stage:
        doc["stage"] = stage
    return json.dumps(doc, sort_keys=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig()
        if args.config:
            cfg.update(parse_config_file(args.config))
        cfg.update({k: v for k, v in vars(args).items() if k in RunConfig.keys() and v is not None})
        cfg.validate(args.command)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        written = HANDLERS[args.command](cfg)
    except (ConfigError, IngestError, DimError, DomainError, OSError) as exc:
        print(_error_doc(exc, 2), file=sys.stderr)
        return 2
    except (DccAlError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(_error_doc(exc, 1), file=sys.stderr)
        return 1
    for path in written:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
