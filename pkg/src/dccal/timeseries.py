"""Return panels, portfolio weights and rolling-window bookkeeping.

Returns are stored in percent (``100 * log-difference`` of prices).  CSV
files are UTF-8, comma separated, with a header ``date,ASSET1,...,ASSETn``
and ISO-8601 dates in the first column.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimError, IngestError

__all__ = [
    "ReturnPanel",
    "PortfolioWeights",
    "WindowSpec",
    "load_panel",
    "write_panel",
    "demean",
    "portfolio_returns",
    "equal_weights",
]


@dataclass(frozen=True)
class ReturnPanel:
    """Immutable T x n matrix of asset log-returns (percent).

    Parameters
    ----------
    dates : tuple of datetime.date
        Strictly increasing observation dates, length T.
    assets : tuple of str
        Unique asset identifiers, length n.
    values : ndarray
        T x n returns. Stored as a read-only copy.
    """

    dates: tuple
    assets: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise DimError(f"values must be 2-d, got shape {values.shape}")
        T, n = values.shape
        if T < 2 or n < 1:
            raise IngestError(f"panel needs T >= 2 and n >= 1, got T={T}, n={n}")
        dates = tuple(self.dates)
        assets = tuple(str(a) for a in self.assets)
        if len(dates) != T:
            raise DimError(f"{len(dates)} dates for {T} rows")
        if len(assets) != n:
            raise DimError(f"{len(assets)} asset ids for {n} columns")
        if len(set(assets)) != n:
            raise IngestError("asset identifiers must be unique")
        if any(b <= a for a, b in zip(dates[:-1], dates[1:])):
            raise IngestError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise IngestError("panel contains missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "ReturnPanel":
        """Rows ``start:stop`` as a new panel."""
        return ReturnPanel(self.dates[start:stop], self.assets, self.values[start:stop])

    @classmethod
    def from_array(cls, values, assets: Sequence[str] | None = None,
                   start: dt.date = dt.date(2000, 1, 1)) -> "ReturnPanel":
        """Wrap a bare array, using consecutive calendar days as dates."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if assets is None:
            assets = [f"A{i + 1}" for i in range(values.shape[1])]
        dates = [start + dt.timedelta(days=k) for k in range(values.shape[0])]
        return cls(tuple(dates), tuple(assets), values)


@dataclass(frozen=True)
class PortfolioWeights:
    """Fully invested weights summing to one.

    Long-only weights lie in [0, 1]; with ``allow_short`` they may lie in
    [-1, 1].
    """

    w: np.ndarray
    allow_short: bool = False

    def __post_init__(self):
        w = np.array(self.w, dtype=float, copy=True).ravel()
        if w.size == 0:
            raise DimError("empty weight vector")
        lo = -1.0 if self.allow_short else 0.0
        if np.any(w < lo) or np.any(w > 1.0):
            raise ValueError(f"weights must lie in [{lo:g}, 1]")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.w, dtype=dtype)


def equal_weights(n: int) -> PortfolioWeights:
    return PortfolioWeights(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class WindowSpec:
    """Rolling-window layout: in-sample length, number of forecasts, re-fit cadence."""

    in_size: int
    out_size: int
    step: int = 1

    def __post_init__(self):
        for name in ("in_size", "out_size", "step"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def validate(self, T: int) -> None:
        if self.in_size + self.out_size > T:
            raise ValueError(
                f"in_size + out_size = {self.in_size + self.out_size} exceeds T = {T}"
            )


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise IngestError(f"row {row}: invalid ISO-8601 date {text!r}") from exc


def load_panel(path, prices: bool = False) -> ReturnPanel:
    """Read a CSV return panel.

    Parameters
    ----------
    path : str or Path
        CSV file with header ``date,ASSET1,...``.
    prices : bool
        If True the cells are prices and are converted to
        ``100 * diff(log(price))``; the first date is dropped.

    Raises
    ------
    IngestError
        On blank or non-numeric cells (message names row and column), ragged
        rows, non-monotone dates, or non-positive prices.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError("empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise IngestError("header must contain a date column and at least one asset")
    assets = header[1:]
    dates, data = [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"row {i}: expected {len(header)} cells, got {len(row)}")
        dates.append(_parse_date(row[0], i))
        vals = []
        for j, cell in enumerate(row[1:]):
            col = assets[j]
            if not cell.strip():
                raise IngestError(f"row {i}, column {col!r}: missing value")
            try:
                v = float(cell)
            except ValueError:
                raise IngestError(f"row {i}, column {col!r}: non-numeric value {cell!r}") from None
            if not np.isfinite(v):
                raise IngestError(f"row {i}, column {col!r}: non-finite value {cell!r}")
            vals.append(v)
        data.append(vals)
    values = np.array(data, dtype=float).reshape(len(data), len(assets))
    if any(b <= a for a, b in zip(dates[:-1], dates[1:])):
        raise IngestError("dates must be strictly increasing")
    if prices:
        if np.any(values <= 0.0):
            raise IngestError("prices must be strictly positive")
        values = 100.0 * np.diff(np.log(values), axis=0)
        dates = dates[1:]
    return ReturnPanel(tuple(dates), tuple(assets), values)


def write_panel(panel: ReturnPanel, path) -> None:
    """Write a panel in the CSV schema read by :func:`load_panel`."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *panel.assets])
        for d, row in zip(panel.dates, panel.values):
            writer.writerow([d.isoformat(), *(format(v, ".17g") for v in row)])


def demean(panel: ReturnPanel) -> tuple[ReturnPanel, np.ndarray]:
    """Subtract column means; returns the demeaned panel and the means."""
    mu = panel.values.mean(axis=0)
    centered = panel.values - mu
    # second pass removes the rounding left by the first subtraction
    centered = centered - centered.mean(axis=0)
    return ReturnPanel(panel.dates, panel.assets, centered), mu


def portfolio_returns(panel: ReturnPanel | np.ndarray, w) -> np.ndarray:
    """Series ``r_t(w) = w' r_t``."""
    values = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    if values.ndim != 2 or values.shape[1] != w.size:
        raise DimError(f"panel has {values.shape[-1]} assets, weights have {w.size}")
    return values @ w
