"""Multi-seed benchmark harness.

For each seed: simulate a dataset, fit every requested method, score it
against the ground truth. Seeds are independent, so a run over several
seeds produces the same per-seed rows as separate runs concatenated.
"""

from __future__ import annotations

import concurrent.futures as cf
import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from causalegm import baselines, datagen, io, metrics
from causalegm.config import RunConfig
from causalegm.data import Dataset
from causalegm.errors import ContractError
from causalegm.estimators import estimate_binary_effects, mu_hat_at
from causalegm.model import build, train

logger = logging.getLogger(__name__)

BAND_Z = 1.96
PER_SEED_HEADER = ("dataset", "method", "metric", "seed", "value")
BAND_HEADER = ("method", "x", "mean", "sd", "lower", "upper", "n_seeds")


def method_variants(cfg: RunConfig) -> list[tuple[str, dict | None]]:
    """``(label, model overrides)`` per method; ``None`` marks a regression baseline."""
    out: list[tuple[str, dict | None]] = []
    for m in cfg.methods:
        if m == "causalegm":
            out.append(("CausalEGM", {}))
        elif m == "no_rt":
            out.append(("CausalEGM w/o RT", {"use_roundtrip": False}))
        elif m == "vgan_zrec":
            for a, b in ((1, 1), (0, 1), (1, 0), (0, 0)):
                out.append((f"CausalEGM (V-GAN={a} Z-Rec={b})",
                            {"use_roundtrip": True, "use_v_gan": bool(a), "use_z_rec": bool(b)}))
        else:
            out.append((m.upper(), None))
    return out


def load_or_simulate(cfg: RunConfig, seed: int) -> Dataset:
    """The configured CSV (same data for every seed) or a fresh simulation."""
    if not cfg.data:
        return simulate_for(cfg, seed)
    data = io.read_dataset(cfg.data)
    if cfg.oracle:
        gx, gy = io.read_curve(cfg.oracle, "mu")
        order = np.argsort(gx)
        gx, gy = gx[order], gy[order]
        if data.x.min() < gx[0] or data.x.max() > gx[-1]:
            raise ContractError(f"oracle curve covers [{gx[0]}, {gx[-1]}] but treatments span "
                                f"[{data.x.min()}, {data.x.max()}]")
        data.oracle = lambda xs: np.interp(np.asarray(xs, dtype=np.float64), gx, gy)
    return data


def simulate_for(cfg: RunConfig, seed: int) -> Dataset:
    extra = {"tau": cfg.tau} if cfg.kind == "binary" else {}
    return datagen.simulate(cfg.kind, cfg.n, cfg.p, seed, **extra)


def band_grid(cfg: RunConfig) -> np.ndarray:
    """Seed-independent plotting grid spanning the 1%-99% treatment quantiles
    of the input data or of a fixed reference draw."""
    ref = io.read_dataset(cfg.data) if cfg.data else simulate_for(cfg.replace(n=min(cfg.n, 20000)), 2 ** 31 - 1)
    lo, hi = np.quantile(ref.x, [0.01, 0.99])
    return np.linspace(lo, hi, cfg.band_points)


def _subsample_sorted(xs, k):
    xs = np.sort(xs)
    if k == 0 or k >= xs.size:
        return xs
    return xs[np.linspace(0, xs.size - 1, k).round().astype(int)]


@dataclass
class SeedResult:
    seed: int
    rows: list[tuple[str, str, str, int, float]] = field(default_factory=list)
    curves: dict[str, np.ndarray] = field(default_factory=dict)


def _continuous_scores(cfg, data, curve, mtef_curve, grid):
    truth = data.oracle(grid)
    est = curve(grid)
    out = {"rmse": metrics.rmse(truth, est)}
    if data.kind == "twins":
        out["mape"], _ = metrics.mape_masked(truth, est)
    else:
        out["mape"] = metrics.mape(truth, est)
    xs = _subsample_sorted(grid, cfg.mtef_points)
    out["mtef_bias"] = metrics.mtef_bias(data.oracle, mtef_curve, xs, cfg.mtef_dx)
    return out


def _binary_scores(cfg, data, y1_hat, y0_hat):
    return {"eps_ate": metrics.eps_ate(data.y1, data.y0, y1_hat, y0_hat),
            "eps_pehe": metrics.eps_pehe(data.y1, data.y0, y1_hat, y0_hat, root=cfg.pehe_root)}


def run_seed(cfg: RunConfig, seed: int, grid_for_bands: np.ndarray | None = None) -> SeedResult:
    data = load_or_simulate(cfg, seed)
    binary = cfg.resolve_treatment(data.is_binary) == "binary"
    if not binary and data.oracle is None:
        raise ContractError(f"dataset kind {data.kind!r} has no dose-response oracle (set 'oracle')")
    if binary and data.y1 is None:
        raise ContractError("binary scoring needs both potential outcomes, which only simulated data carries")
    grid = data.x
    if cfg.trim and not binary:
        grid = data.x[metrics.trim_mask(data.x)]
    result = SeedResult(seed)
    trained: dict = {}
    for label, overrides in method_variants(cfg):
        if overrides is None:
            scores, curve = _baseline_scores(cfg, data, label, binary, grid)
        else:
            mcfg = cfg.model_config(data.p, "binary" if binary else "continuous", seed).replace(**overrides)
            if mcfg not in trained:
                model = build(mcfg)
                train(model, data)
                trained[mcfg] = model
            model = trained[mcfg]
            if binary:
                eff = estimate_binary_effects(model, data, factual=cfg.pehe_factual)
                scores, curve = _binary_scores(cfg, data, eff.y1_hat, eff.y0_hat), None
            else:
                curve = lambda xs, m=model: mu_hat_at(m, data.v, xs)  # noqa: E731
                precise = lambda xs, m=model: mu_hat_at(m, data.v, xs, dtype=jnp.float64)  # noqa: E731
                scores = _continuous_scores(cfg, data, curve, precise, grid)
        for metric, value in scores.items():
            result.rows.append((data.kind, label, metric, seed, float(value)))
        if curve is not None and grid_for_bands is not None:
            result.curves[label] = np.asarray(curve(grid_for_bands))
        logger.info("seed %d %s %s", seed, label, " ".join(f"{k}={v:.4g}" for k, v in scores.items()))
    return result


def _baseline_scores(cfg, data, label, binary, grid):
    if binary:
        if label == "REG":
            raise ContractError("REG needs a continuous treatment (x and x^2 coincide for 0/1 data)")
        line = baselines.fit_ols(data)
        # the fitted plane is additive in x, so every unit gets the same effect
        effect = float(line(1.0) - line(0.0))
        return _binary_scores(cfg, data, np.full(data.n, effect), np.zeros(data.n)), None
    curve = baselines.fit_ols(data) if label == "OLS" else baselines.fit_reg(data)
    return _continuous_scores(cfg, data, curve, curve, grid), curve


def aggregate(rows) -> list[tuple[str, str, str, float, float, int]]:
    """Collapse per-seed rows to ``(dataset, method, metric, mean, sd, n_seeds)``."""
    groups: dict[tuple[str, str, str], list[float]] = {}
    for dataset, method, metric, _, value in rows:
        groups.setdefault((dataset, method, metric), []).append(value)
    out = []
    for key, values in groups.items():
        rep = metrics.summarize(key[2], values)
        out.append((*key, rep.mean, rep.sd, rep.n_seeds))
    return out


def bands(curves: list[dict[str, np.ndarray]], grid) -> list[tuple]:
    """Pointwise ``mean +/- 1.96 sd`` across seed replicates for each method."""
    rows = []
    methods = list(dict.fromkeys(m for c in curves for m in c))
    for m in methods:
        stack = np.vstack([c[m] for c in curves if m in c])
        mean = stack.mean(axis=0)
        sd = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.zeros_like(mean)
        for x, a, s in zip(grid, mean, sd):
            rows.append((m, float(x), float(a), float(s), float(a - BAND_Z * s), float(a + BAND_Z * s), stack.shape[0]))
    return rows


def _worker(args):
    cfg, seed, grid = args
    return run_seed(cfg, seed, grid)


def run_benchmark(cfg: RunConfig, out_dir, jobs: int = 1) -> list[tuple]:
    """Run every seed, writing ``per_seed.csv`` as seeds finish, then the
    aggregated ``benchmark.csv``, ``bands.csv`` and ``oracle.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.hash(), "seeds": ",".join(map(str, cfg.seeds))}
    binary = cfg.treatment_kind == "binary" or (cfg.kind == "binary" and not cfg.data)
    grid = None if binary else band_grid(cfg)
    per_seed_path = out / "per_seed.csv"
    io.write_table(per_seed_path, PER_SEED_HEADER, [], meta)
    results = []
    tasks = [(cfg, s, grid) for s in cfg.seeds]
    if jobs <= 1 or len(tasks) == 1:
        for t in tasks:
            res = _worker(t)
            io.write_table(per_seed_path, PER_SEED_HEADER, res.rows, mode="a")
            results.append(res)
    else:
        ctx = multiprocessing.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            futures = [pool.submit(_worker, t) for t in tasks]
            for fut in cf.as_completed(futures):
                res = fut.result()
                io.write_table(per_seed_path, PER_SEED_HEADER, res.rows, mode="a")
                results.append(res)
        results.sort(key=lambda r: cfg.seeds.index(r.seed))
    rows = [r for res in results for r in res.rows]
    table = aggregate(rows)
    io.write_table(out / "benchmark.csv", io.BENCHMARK_HEADER, table, meta)
    if grid is not None:
        io.write_table(out / "bands.csv", BAND_HEADER, bands([r.curves for r in results], grid), meta)
        if not cfg.data and cfg.kind != "twins":
            oracle = datagen.ORACLES[cfg.kind]
            io.write_curve(out / "oracle.csv", grid, oracle(grid), "mu", meta)
    return table
