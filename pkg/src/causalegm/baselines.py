"""Regression baselines for dose-response estimation.

``OLS`` regresses ``Y`` on ``(1, X, V)`` and averages the fitted plane over
the observed covariates. ``REG`` adds a quadratic treatment term,
``Y ~ (1, x, x^2, V)``, giving a quadratic curve shifted by ``beta' mean(V)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from causalegm.data import Dataset
from causalegm.errors import ContractError, RankDeficientError, ShapeError
from causalegm.estimators import AdrfEstimate


@dataclass
class LinearFit:
    coef: np.ndarray
    columns: tuple[str, ...]

    @property
    def intercept(self) -> float:
        return float(self.coef[self.columns.index("1")]) if "1" in self.columns else 0.0

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=np.float64) @ self.coef


def solve_least_squares(design, response, columns: Sequence[str] | None = None) -> LinearFit:
    """Least squares via column-pivoted Householder QR.

    Raises :class:`RankDeficientError` naming the columns that the pivoting
    found to be linear combinations of the others.
    """
    a = np.asarray(design, dtype=np.float64)
    b = np.asarray(response, dtype=np.float64).reshape(-1)
    if a.ndim != 2 or a.shape[0] != b.size:
        raise ShapeError(f"design {a.shape} incompatible with response of length {b.size}")
    m, k = a.shape
    columns = tuple(columns) if columns is not None else tuple(f"c{j}" for j in range(k))
    if m < k:
        raise RankDeficientError(f"{m} rows cannot determine {k} coefficients")
    q, r, piv = linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(m, k) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < k:
        bad = sorted(columns[j] for j in piv[rank:])
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(bad)}")
    coef = np.empty(k)
    coef[piv] = linalg.solve_triangular(r, q.T @ b)
    return LinearFit(coef, columns)


def _covariate_names(p):
    return tuple(f"v{j + 1}" for j in range(p))


def fit_ols(dataset: Dataset) -> Callable[[np.ndarray], np.ndarray]:
    """Fitted OLS dose-response curve ``x -> mean_i ls(x, v_i)``."""
    if dataset.n <= dataset.p + 2:
        raise ContractError(f"OLS needs n > p + 2, got n={dataset.n}, p={dataset.p}")
    design = np.column_stack([np.ones(dataset.n), dataset.x, dataset.v])
    fit = solve_least_squares(design, dataset.y, ("1", "x") + _covariate_names(dataset.p))
    shift = fit.coef[0] + dataset.v.mean(axis=0) @ fit.coef[2:]
    slope = fit.coef[1]
    return lambda xs: shift + slope * np.asarray(xs, dtype=np.float64)


def fit_reg(dataset: Dataset) -> Callable[[np.ndarray], np.ndarray]:
    """Fitted quadratic dose-response curve with additive covariate adjustment."""
    if dataset.n <= dataset.p + 3:
        raise ContractError(f"REG needs n > p + 3, got n={dataset.n}, p={dataset.p}")
    x = dataset.x
    design = np.column_stack([np.ones(dataset.n), x, x ** 2, dataset.v])
    fit = solve_least_squares(design, dataset.y, ("1", "x", "x^2") + _covariate_names(dataset.p))
    a0, a1, a2 = fit.coef[:3]
    shift = a0 + dataset.v.mean(axis=0) @ fit.coef[3:]

    def curve(xs):
        xs = np.asarray(xs, dtype=np.float64)
        return shift + a1 * xs + a2 * xs ** 2

    return curve


def _adrf(curve, dataset, x_grid):
    grid = dataset.x if x_grid is None else np.asarray(x_grid, dtype=np.float64).reshape(-1)
    grid = np.sort(grid)
    return AdrfEstimate(grid, curve(grid), dataset.n)


def ols_adrf(dataset: Dataset, x_grid=None) -> AdrfEstimate:
    return _adrf(fit_ols(dataset), dataset, x_grid)


def reg_adrf(dataset: Dataset, x_grid=None) -> AdrfEstimate:
    return _adrf(fit_reg(dataset), dataset, x_grid)
