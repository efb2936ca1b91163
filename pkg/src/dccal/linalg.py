"""Small dense symmetric linear algebra used by the model.

Matrices are plain symmetric ``ndarray`` objects; LAPACK does the
factorizations, with an explicit relative pivot threshold on top.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimError, DomainError, RankError

__all__ = ["PD_RTOL", "cholesky", "is_pd", "quad_form", "to_correlation", "ols_solve"]

PD_RTOL = 1e-12


def cholesky(m) -> np.ndarray | None:
    """Lower Cholesky factor of ``m``, or ``None`` if ``m`` is not positive definite.

    A squared pivot at or below ``PD_RTOL * max(diag(m))`` counts as not PD.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimError(f"square matrix required, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        return None
    dmax = np.max(np.diag(m)) if m.size else 0.0
    if dmax <= 0.0:
        return None
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) ** 2 <= PD_RTOL * dmax:
        return None
    return L


def is_pd(m) -> bool:
    return cholesky(m) is not None


def quad_form(m, w) -> float:
    """``w' m w``."""
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    if m.ndim != 2 or m.shape != (w.size, w.size):
        raise DimError(f"matrix shape {m.shape} incompatible with vector of length {w.size}")
    return float(w @ m @ w)


def to_correlation(m) -> np.ndarray:
    """Rescale a covariance-like matrix to unit diagonal.

    Works on a single matrix or a stack ``(..., n, n)``.  The diagonal of the
    result is set to exactly one.
    """
    m = np.asarray(m, dtype=float)
    d = np.diagonal(m, axis1=-2, axis2=-1)
    if np.any(~(d > 0.0)):
        raise DomainError("to_correlation needs a strictly positive diagonal")
    s = 1.0 / np.sqrt(d)
    out = m * s[..., :, None] * s[..., None, :]
    idx = np.arange(m.shape[-1])
    out[..., idx, idx] = 1.0
    np.clip(out, -1.0, 1.0, out=out)
    return out


def ols_solve(X, y) -> np.ndarray:
    """Least-squares coefficients via Cholesky of the normal equations.

    ``y`` may be a vector or a matrix of right-hand sides.

    Raises
    ------
    RankError
        If ``X'X`` is numerically singular.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise DimError(f"X has shape {X.shape}, y has shape {y.shape}")
    L = cholesky(X.T @ X)
    if L is None:
        raise RankError("design matrix is rank deficient")
    z = solve_triangular(L, X.T @ y, lower=True)
    return solve_triangular(L.T, z, lower=False)
