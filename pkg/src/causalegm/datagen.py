"""Synthetic data with closed-form ground truth.

Every generator is a pure function of ``(n, p, seed)``: the same arguments
produce a bit-identical dataset. Covariates beyond the ones a design uses are
pure noise dimensions.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from causalegm.data import Dataset
from causalegm.errors import ConfigError

KINDS = ("hirano", "sun", "colangelo", "twins", "binary")


def mu_hirano(x):
    x = np.asarray(x, dtype=np.float64)
    return x + 2.0 / (1.0 + x) ** 3


SUN_OFFSET = 0.5 + np.exp(-0.5)


def mu_sun(x):
    return np.asarray(x, dtype=np.float64) + SUN_OFFSET


def mu_colangelo(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.2 * x + x ** 3


def twins_risk_curve(x):
    """Treatment part of the twins risk, ``-2 / (1 + exp(-3x))``."""
    return -2.0 * expit(3.0 * np.asarray(x, dtype=np.float64))


ORACLES: dict[str, Callable] = {"hirano": mu_hirano, "sun": mu_sun, "colangelo": mu_colangelo}


def structural_mean(kind: str, v, x) -> np.ndarray:
    """Noise-free outcome ``E[Y | V = v, do(X = x)]`` of a design.

    Averaging it over ``V`` at a fixed ``x`` gives the dose response, which is
    how the closed-form oracles are checked by simulation.
    """
    v = np.asarray(v, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kind == "hirano":
        t = v[:, 0] + v[:, 2]
        return x + t * np.exp(-x * t)
    if kind == "sun":
        return x + sun_f(3, v[:, 0]) + sun_f(4, v[:, 1]) + sun_f(5, v[:, 4]) + sun_f(6, v[:, 5])
    if kind == "colangelo":
        return 1.2 * x + 1.2 * (v @ colangelo_theta(v.shape[1])) + x ** 3 + x * v[:, 0]
    raise ConfigError(f"no structural outcome for kind {kind!r}")


def _require_p(kind, p, minimum):
    if p < minimum:
        raise ConfigError(f"{kind} design needs p >= {minimum}, got p={p}")


def _require_n(n):
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")


def gen_hirano(n: int, p: int = 200, seed: int = 0) -> Dataset:
    """Unit-exponential covariates; ``X | V ~ Exp(rate = V1 + V2)``;
    ``Y ~ N(x + (V1 + V3) exp(-x (V1 + V3)), 1)``."""
    _require_n(n)
    _require_p("hirano", p, 3)
    rng = np.random.default_rng(seed)
    v = rng.exponential(1.0, size=(n, p))
    x = rng.exponential(1.0 / (v[:, 0] + v[:, 1]))
    y = structural_mean("hirano", v, x) + rng.normal(size=n)
    return Dataset(v, x, y, kind="hirano", seed=seed, oracle=mu_hirano)


def sun_f(k: int, u):
    u = np.asarray(u, dtype=np.float64)
    return {
        1: lambda: -2.0 * np.sin(2.0 * u),
        2: lambda: u ** 2 - 1.0 / 3.0,
        3: lambda: u - 0.5,
        4: lambda: np.cos(u),
        5: lambda: u ** 2,
        6: lambda: u,
    }[k]()


def gen_sun(n: int, p: int = 200, seed: int = 0) -> Dataset:
    _require_n(n)
    _require_p("sun", p, 6)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, p))
    x = sum(sun_f(k, v[:, k - 1]) for k in range(1, 5)) + rng.normal(size=n)
    y = structural_mean("sun", v, x) + rng.normal(size=n)
    return Dataset(v, x, y, kind="sun", seed=seed, oracle=mu_sun)


def colangelo_theta(p: int) -> np.ndarray:
    return 1.0 / np.arange(1, p + 1) ** 2


def colangelo_cov(p: int) -> np.ndarray:
    return np.eye(p) + 0.5 * (np.eye(p, k=1) + np.eye(p, k=-1))


def gen_colangelo(n: int, p: int = 200, seed: int = 0) -> Dataset:
    _require_n(n)
    _require_p("colangelo", p, 1)
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(colangelo_cov(p))
    v = rng.normal(size=(n, p)) @ chol.T
    index = v @ colangelo_theta(p)
    x = norm.cdf(3.0 * index) + 0.75 * rng.normal(size=n) - 0.5
    y = structural_mean("colangelo", v, x) + rng.normal(size=n)
    return Dataset(v, x, y, kind="colangelo", seed=seed, oracle=mu_colangelo)


def gen_twins_style(covariates: Optional[np.ndarray] = None, treatment: Optional[np.ndarray] = None,
                    n: int = 4821, p: int = 50, seed: int = 0) -> Dataset:
    """Simulated mortality risk ``R = -2/(1+exp(-3x)) + v.gamma + eps``.

    ``gamma_j ~ N(0, 0.025^2)``, ``eps ~ N(0, 0.25^2)``. Without real
    covariates a standard-normal stand-in of shape ``(n, p)`` is drawn; without
    a real treatment column a confounded birth-weight-like treatment is
    simulated as ``1.2 + 0.25 v.a / |a| + N(0, 0.2^2)`` with random ``a``.
    """
    rng = np.random.default_rng(seed)
    if covariates is None:
        _require_n(n)
        v = rng.normal(size=(n, p))
    else:
        v = np.asarray(covariates, dtype=np.float64)
        n, p = v.shape
    if treatment is None:
        a = rng.normal(size=p)
        x = 1.2 + 0.25 * (v @ a) / np.linalg.norm(a) + 0.2 * rng.normal(size=n)
    else:
        x = np.asarray(treatment, dtype=np.float64).reshape(-1)
    gamma = rng.normal(0.0, 0.025, size=p)
    shift = v @ gamma
    y = twins_risk_curve(x) + shift + rng.normal(0.0, 0.25, size=n)
    offset = float(np.mean(shift))

    def oracle(xs):
        return twins_risk_curve(xs) + offset

    return Dataset(v, x, y, kind="twins", seed=seed, oracle=oracle)


def gen_constant_effect_binary(n: int, p: int = 20, tau: float = 2.0, seed: int = 0) -> Dataset:
    """``X ~ Bernoulli(sigmoid(V1))``, ``Y = tau X + V1 + N(0, 0.5^2)``; every ITE is ``tau``."""
    _require_n(n)
    _require_p("binary", p, 1)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, p))
    x = (rng.uniform(size=n) < expit(v[:, 0])).astype(np.float64)
    base = v[:, 0] + rng.normal(0.0, 0.5, size=n)
    y0, y1 = base, base + tau
    y = np.where(x == 1.0, y1, y0)
    return Dataset(v, x, y, kind="binary", seed=seed, y0=y0, y1=y1)


def simulate(kind: str, n: int, p: int, seed: int = 0, **kwargs) -> Dataset:
    if kind == "hirano":
        return gen_hirano(n, p, seed)
    if kind == "sun":
        return gen_sun(n, p, seed)
    if kind == "colangelo":
        return gen_colangelo(n, p, seed)
    if kind == "twins":
        return gen_twins_style(n=n, p=p, seed=seed, **kwargs)
    if kind == "binary":
        return gen_constant_effect_binary(n, p, seed=seed, **kwargs)
    raise ConfigError(f"unknown dataset kind {kind!r}; choose from {', '.join(KINDS)}")
