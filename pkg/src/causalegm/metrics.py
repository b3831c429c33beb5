"""Evaluation metrics for dose-response curves and binary treatment effects."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from causalegm.errors import ContractError, ShapeError


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("metrics need at least one value")
    return a, b


def rmse(mu_true, mu_hat) -> float:
    mu_true, mu_hat = _pair(mu_true, mu_hat)
    return float(np.sqrt(np.mean((mu_true - mu_hat) ** 2)))


def mape(mu_true, mu_hat) -> float:
    """Mean absolute percentage error as a fraction (0.1 means 10%)."""
    mu_true, mu_hat = _pair(mu_true, mu_hat)
    if np.any(mu_true == 0.0):
        raise ContractError("MAPE is undefined where the true curve is zero")
    return float(np.mean(np.abs((mu_true - mu_hat) / mu_true)))


def mape_masked(mu_true, mu_hat, tol: float = 1e-6) -> tuple[float, int]:
    """MAPE over points with ``|mu_true| > tol``; also returns how many were dropped."""
    mu_true, mu_hat = _pair(mu_true, mu_hat)
    keep = np.abs(mu_true) > tol
    if not keep.any():
        raise ContractError("no points with a non-zero true curve")
    return mape(mu_true[keep], mu_hat[keep]), int((~keep).sum())


def mtef(mu: Callable, xs, dx: float = 1e-4) -> np.ndarray:
    """Forward-difference marginal treatment effect ``(mu(x + dx) - mu(x)) / dx``."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    both = np.asarray(mu(np.concatenate([xs, xs + dx])), dtype=np.float64)
    return (both[xs.size:] - both[: xs.size]) / dx


def mtef_bias(oracle: Callable, mu_hat_fn: Callable, xs, dx: float = 1e-4) -> float:
    return float(np.mean(np.abs(mtef(oracle, xs, dx) - mtef(mu_hat_fn, xs, dx))))


def eps_ate(y1_true, y0_true, y1_hat, y0_hat) -> float:
    y1_true, y0_true = _pair(y1_true, y0_true)
    y1_hat, y0_hat = _pair(y1_hat, y0_hat)
    _pair(y1_true, y1_hat)
    return float(abs(np.mean(y1_hat - y0_hat) - np.mean(y1_true - y0_true)))


def eps_pehe(y1_true, y0_true, y1_hat, y0_hat, root: bool = False) -> float:
    """Mean squared ITE error; ``root=True`` gives its square root instead."""
    y1_true, y0_true = _pair(y1_true, y0_true)
    y1_hat, y0_hat = _pair(y1_hat, y0_hat)
    _pair(y1_true, y1_hat)
    value = float(np.mean(((y1_hat - y0_hat) - (y1_true - y0_true)) ** 2))
    return float(np.sqrt(value)) if root else value


def trim_mask(xs, lower: float = 0.01, upper: float = 0.99) -> np.ndarray:
    """Boolean mask keeping ``xs`` between its ``lower`` and ``upper`` quantiles."""
    xs = np.asarray(xs, dtype=np.float64)
    lo, hi = np.quantile(xs, [lower, upper])
    return (xs >= lo) & (xs <= hi)


@dataclass
class MetricReport:
    metric: str
    per_seed: np.ndarray

    def __post_init__(self):
        self.per_seed = np.asarray(self.per_seed, dtype=np.float64).reshape(-1)

    @property
    def value(self) -> float:
        return self.mean

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def sd(self) -> float:
        if self.per_seed.size < 2:
            return 0.0
        return float(np.std(self.per_seed, ddof=1))

    @property
    def n_seeds(self) -> int:
        return int(self.per_seed.size)

    def row(self) -> dict:
        return {"metric": self.metric, "mean": self.mean, "sd": self.sd, "n_seeds": self.n_seeds}


def summarize(metric: str, values: Sequence[float]) -> MetricReport:
    return MetricReport(metric, np.asarray(values))
