"""Correlation, least squares and percentile kernels"""

import dataclasses
from typing import Sequence

import numpy as np
import scipy.linalg

from seqdistill import constants
from seqdistill.exceptions import ShapeError

_TINY = 1e-300


@dataclasses.dataclass(frozen=True)
class RegressionFit:
    """A least-squares fit `y ≈ X·beta + intercept`"""

    beta: np.ndarray
    intercept: float
    fitted: np.ndarray


def _vector(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        x = x.reshape(len(x), -1)
        if x.shape[1] != 1:
            raise ShapeError(f"{what} must be a vector, got shape {x.shape}")
        x = x[:, 0]

    return x


def _matrix(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] != n:
        raise ShapeError(f"Design of shape {X.shape} does not have {n} rows")

    return X


def pearson_corr(x, y) -> float:
    """The Pearson correlation of two vectors.

    A constant vector carries no information, so its correlation with
    anything is 0.
    """
    x = _vector(x, "x")
    y = _vector(y, "y")
    if len(x) != len(y):
        raise ShapeError(f"Cannot correlate vectors of lengths {len(x)} and {len(y)}")
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0

    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom < _TINY:
        return 0.0

    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def zscore(y) -> np.ndarray:
    """Standardize to zero mean and unit variance. Constant input maps to zeros."""
    y = _vector(y, "y")
    std = y.std()
    if std == 0 or not np.isfinite(std):
        return np.zeros_like(y)

    return (y - y.mean()) / std


def ols_fit(X, y) -> RegressionFit:
    """Least squares with an intercept.

    The design is centered and its columns scaled to unit variance before
    the solve. Singular values below `LSTSQ_CUTOFF` times the largest are
    dropped, so collinear designs such as one-hot blocks get the minimum-norm
    solution and constant columns get a zero coefficient.
    """
    y = _vector(y, "y")
    X = _matrix(X, len(y))
    y_mean = y.mean()
    yc = y - y_mean

    if X.shape[1] == 0:
        fitted = np.full_like(y, y_mean)
        return RegressionFit(beta=np.zeros(0), intercept=float(y_mean), fitted=fitted)

    x_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - x_mean) / scale

    coef, *_ = scipy.linalg.lstsq(Xs, yc, cond=constants.LSTSQ_CUTOFF)
    beta = coef / scale
    fitted = Xs @ coef + y_mean
    return RegressionFit(beta=beta, intercept=float(y_mean - x_mean @ beta), fitted=fitted)


def multiple_corr(X, y) -> float:
    """The absolute correlation between y and its least-squares fit on X"""
    return abs(pearson_corr(ols_fit(X, y).fitted, y))


def _design(stats: Sequence[np.ndarray], n: int) -> np.ndarray:
    if not stats:
        return np.zeros((n, 0))

    return np.hstack([_matrix(values, n) for values in stats])


def residualize(y, stats: Sequence[np.ndarray]) -> np.ndarray:
    """The part of y the statistics do not explain.

    All value matrices are fitted jointly, one column per output dimension.
    With no statistics y is returned unchanged.
    """
    y = _vector(y, "y")
    if not stats:
        return y.copy()

    return y - ols_fit(_design(stats, len(y)), y).fitted


def multiple_corr_of_set(stats: Sequence[np.ndarray], y) -> float:
    """The multiple correlation of a whole statistic set against y"""
    y = _vector(y, "y")
    if not stats:
        return 0.0

    return multiple_corr(_design(stats, len(y)), y)


def percentile(x, k: float) -> float:
    """The k-th percentile with linear interpolation between closest ranks"""
    x = _vector(x, "x")
    if len(x) == 0:
        raise ShapeError("Cannot take the percentile of an empty vector")

    return float(np.percentile(x, k, method="linear"))
