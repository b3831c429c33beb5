"""Causal estimands from a trained model.

The dose response is the sample average of the outcome network over each
unit's own encoded confounders, ``mu_hat(x) = mean_i F(x, z0_i, z1_i)``.
Binary effects impute the missing potential outcome with ``F`` evaluated at
the flipped treatment.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from causalegm import nn
from causalegm.data import Dataset
from causalegm.errors import ContractError, ShapeError
from causalegm.model import CausalEGMModel

# rows of the (grid x sample) evaluation processed per compiled call
_EVAL_BUDGET = 1 << 16


@dataclass
class AdrfEstimate:
    x_grid: np.ndarray
    mu_hat: np.ndarray
    n_used: int

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=np.float64)
        self.mu_hat = np.asarray(self.mu_hat, dtype=np.float64)
        if self.x_grid.shape != self.mu_hat.shape:
            raise ShapeError("x_grid and mu_hat lengths differ")


@dataclass
class BinaryEffects:
    y1_hat: np.ndarray
    y0_hat: np.ndarray

    @property
    def ite(self) -> np.ndarray:
        return self.y1_hat - self.y0_hat

    @property
    def ate(self) -> float:
        return float(np.mean(self.ite))


def _outcome_inputs(model: CausalEGMModel, v, dtype):
    """Encoded ``(z0, z1)`` per unit plus the outcome net, both in ``dtype``."""
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[1] != model.config.p:
        raise ShapeError(f"covariate matrix must have shape (n, {model.config.p}), got {v.shape}")
    enc = nn.cast(model.net("E"), dtype)
    z = nn.forward(enc, jnp.asarray(v, dtype))
    z0, z1, _, _ = model.partition.split(z)
    return jnp.concatenate([z0, z1], axis=1), nn.cast(model.net("F"), dtype)


@partial(jax.jit, static_argnums=0)
def _grid_means(spec, params, zz, grid):
    """``mean_i F(g, zz_i)`` for every ``g`` in ``grid``.

    The covariate part of the first affine layer is shared across grid
    points, so it is computed once.
    """
    first = params[0]
    shared = zz @ first["w"][1:] + first["b"]
    h = shared[None, :, :] + grid[:, None, None] * first["w"][0][None, None, :]
    tail = params[1:]
    if tail:
        h = nn.leaky_relu(h, spec.slope)
    for k, layer in enumerate(tail):
        h = h @ layer["w"] + layer["b"]
        if k < len(tail) - 1:
            h = nn.leaky_relu(h, spec.slope)
    return h[..., 0].mean(axis=1)


def mu_hat_at(model: CausalEGMModel, v, xs, dtype=jnp.float32) -> np.ndarray:
    """Dose-response estimate at each entry of ``xs`` (order preserved)."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    if xs.size == 0:
        raise ContractError("treatment grid is empty")
    zz, F = _outcome_inputs(model, v, dtype)
    step = max(1, _EVAL_BUDGET // zz.shape[0])
    out = np.empty(xs.size)
    for a in range(0, xs.size, step):
        chunk = xs[a:a + step]
        padded = np.pad(chunk, (0, step - chunk.size), mode="edge")
        vals = _grid_means(F.spec, F.params, zz, jnp.asarray(padded, dtype))
        out[a:a + chunk.size] = np.asarray(vals)[: chunk.size]
    return out


def estimate_adrf(model: CausalEGMModel, dataset: Dataset, x_grid=None, dtype=jnp.float32) -> AdrfEstimate:
    """Average dose response on ``x_grid`` (default: the observed treatments), sorted."""
    if model.config.treatment_kind != "continuous":
        raise ContractError("dose-response estimation needs a continuous-treatment model")
    grid = dataset.x if x_grid is None else np.asarray(x_grid, dtype=np.float64).reshape(-1)
    grid = np.sort(grid)
    return AdrfEstimate(grid, mu_hat_at(model, dataset.v, grid, dtype), dataset.n)


def outcome_predictions(model: CausalEGMModel, v, x, dtype=jnp.float64) -> np.ndarray:
    """Per-unit ``F(x_i, z0_i, z1_i)``."""
    zz, F = _outcome_inputs(model, v, dtype)
    x = jnp.asarray(np.asarray(x, dtype=np.float64).reshape(-1, 1), dtype)
    if x.shape[0] != zz.shape[0]:
        raise ShapeError(f"{x.shape[0]} treatments for {zz.shape[0]} units")
    return np.asarray(nn.forward(F, jnp.concatenate([x, zz], axis=1))).reshape(-1)


def _require_binary(model: CausalEGMModel, dataset: Dataset):
    if model.config.treatment_kind != "binary":
        raise ContractError("treatment-effect estimation needs a binary-treatment model")
    if not dataset.is_binary:
        raise ContractError("treatment values must be 0 or 1")


def counterfactual_outcomes(model: CausalEGMModel, dataset: Dataset) -> np.ndarray:
    _require_binary(model, dataset)
    return outcome_predictions(model, dataset.v, 1.0 - dataset.x)


def estimate_binary_effects(model: CausalEGMModel, dataset: Dataset, factual: str = "observed") -> BinaryEffects:
    """Potential outcomes per unit.

    ``factual="observed"`` keeps each unit's observed outcome and imputes only
    the counterfactual; ``"predicted"`` uses ``F`` for both arms.
    """
    _require_binary(model, dataset)
    if factual not in ("observed", "predicted"):
        raise ContractError(f"factual must be 'observed' or 'predicted', got {factual!r}")
    cf = counterfactual_outcomes(model, dataset)
    if factual == "observed":
        f = dataset.y
    else:
        f = outcome_predictions(model, dataset.v, dataset.x)
    treated = dataset.x == 1.0
    return BinaryEffects(y1_hat=np.where(treated, f, cf), y0_hat=np.where(treated, cf, f))
