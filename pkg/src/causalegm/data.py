"""Dataset container shared by generators, training and the CLI."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from causalegm.errors import DataError


@dataclass
class Dataset:
    """Covariates ``v`` (n, p), treatment ``x`` (n,), outcome ``y`` (n,).

    Synthetic data additionally carries its ground truth: ``oracle`` maps
    treatment levels to the true dose response, ``y0``/``y1`` hold both
    potential outcomes for binary designs.
    """

    v: np.ndarray
    x: np.ndarray
    y: np.ndarray
    kind: str = "custom"
    seed: Optional[int] = None
    oracle: Optional[Callable[[np.ndarray], np.ndarray]] = None
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.v.ndim != 2:
            raise DataError(f"covariates must be a matrix, got shape {self.v.shape}")
        n = self.v.shape[0]
        if self.x.shape[0] != n or self.y.shape[0] != n:
            raise DataError(f"row counts disagree: v={n}, x={self.x.shape[0]}, y={self.y.shape[0]}")
        for name in ("v", "x", "y"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in {name}")

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def p(self) -> int:
        return self.v.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.x == 0.0) | (self.x == 1.0)))

    @property
    def true_ite(self) -> np.ndarray:
        if self.y0 is None or self.y1 is None:
            raise DataError("dataset carries no potential outcomes")
        return self.y1 - self.y0

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(
            self.v[order], self.x[order], self.y[order], kind=self.kind, seed=self.seed,
            oracle=self.oracle,
            y0=None if self.y0 is None else self.y0[order],
            y1=None if self.y1 is None else self.y1[order],
        )
