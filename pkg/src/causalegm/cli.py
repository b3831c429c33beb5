"""Command-line entry point: ``causalegm <command> [options]``.

On failure the last line on stderr is ``error: <category>: <message>`` and
the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from causalegm import appendix_b, benchmark, config, datagen, io, persist
from causalegm.errors import CausalEGMError, ConfigError, ContractError, ShapeError
from causalegm.estimators import estimate_adrf, estimate_binary_effects
from causalegm.model import build, train

EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _run_config(args) -> config.RunConfig:
    cfg = config.load(args.config) if args.config else config.RunConfig()
    changes = {}
    for key in ("kind", "n", "p", "iterations", "data", "model", "grid"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out", None) is not None:
        changes["out"] = args.out
    if getattr(args, "iterations", None) is not None and args.command == "appendix-b":
        changes.pop("iterations")
        changes["ab_iterations"] = args.iterations
    return cfg.replace(**changes) if changes else cfg


def parse_grid(spec: str) -> np.ndarray | None:
    """``"lo:hi:count"`` gives ``count`` evenly spaced points; ``"observed"`` gives ``None``."""
    if spec == "observed":
        return None
    parts = spec.split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"grid must be 'observed' or 'lo:hi:count', got {spec!r}") from None
    if count < 1 or (count > 1 and not hi > lo):
        raise ConfigError(f"grid needs count >= 1 and hi > lo, got {spec!r}")
    return np.linspace(lo, hi, count)


def _model_hash(model) -> str:
    return hashlib.sha256(json.dumps(model.config.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def cmd_simulate(cfg: config.RunConfig) -> Path:
    seed = cfg.seeds[0]
    data = benchmark.simulate_for(cfg, seed)
    out = Path(cfg.out)
    meta = {"config_hash": cfg.hash(), "seed": seed, "kind": cfg.kind}
    io.write_dataset(out / "data.csv", data, meta)
    if data.oracle is not None:
        grid = np.linspace(0.0, float(np.max(data.x)), 201) if cfg.kind == "hirano" else \
            np.linspace(*np.quantile(data.x, [0.01, 0.99]), 201)
        io.write_curve(out / "oracle.csv", grid, data.oracle(grid), "mu", meta)
    if data.y0 is not None:
        io.write_table(out / "truth.csv", ["y0", "y1"], np.column_stack([data.y0, data.y1]).tolist(), meta)
    return out / "data.csv"


def _load_data(cfg: config.RunConfig):
    if cfg.data:
        return io.read_dataset(cfg.data)
    return benchmark.simulate_for(cfg, cfg.seeds[0])


def cmd_train(cfg: config.RunConfig) -> Path:
    seed = cfg.seeds[0]
    data = _load_data(cfg)
    kind = cfg.resolve_treatment(data.is_binary)
    model = build(cfg.model_config(data.p, kind, seed))
    trace = train(model, data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    persist.save(model, out / "model.cegm")
    io.write_trace(out / "trace.csv", trace, {"config_hash": cfg.hash(), "seed": seed})
    return out / "model.cegm"


def cmd_estimate(cfg: config.RunConfig, treatment: str | None = None) -> Path:
    if not cfg.model:
        raise ConfigError("estimate needs a model file (--model or 'model' in the config)")
    model = persist.load(cfg.model)
    data = _load_data(cfg)
    if data.p != model.config.p:
        raise ShapeError(f"data has p={data.p} covariates but the model was trained with p={model.config.p}")
    kind = treatment or model.config.treatment_kind
    if kind != model.config.treatment_kind:
        raise ContractError(f"model was trained for {model.config.treatment_kind} treatment, "
                            f"cannot estimate {kind} effects")
    out = Path(cfg.out)
    meta = {"config_hash": _model_hash(model), "seed": model.config.seed}
    if kind == "continuous":
        est = estimate_adrf(model, data, parse_grid(cfg.grid))
        io.write_curve(out / "adrf.csv", est.x_grid, est.mu_hat, "mu_hat", meta)
        return out / "adrf.csv"
    effects = estimate_binary_effects(model, data, factual=cfg.pehe_factual)
    io.write_effects(out / "effects.csv", effects, meta)
    return out / "effects.csv"


def cmd_benchmark(cfg: config.RunConfig, jobs: int = 1) -> Path:
    benchmark.run_benchmark(cfg, cfg.out, jobs=jobs)
    return Path(cfg.out) / "benchmark.csv"


def cmd_appendix_b(cfg: config.RunConfig) -> Path:
    seed = cfg.seeds[0]
    res = appendix_b.run_appendix_b_experiment(
        n_train=cfg.ab_n_train, n_holdout=cfg.ab_n_holdout, seed=seed, iterations=cfg.ab_iterations,
        batch_size=cfg.ab_batch_size, lr=cfg.ab_lr, eval_every=cfg.ab_eval_every)
    meta = {"config_hash": cfg.hash(), "seed": seed, "theoretical": repr(res.theoretical),
            "constrained_linear_optimum": repr(res.constrained_optimum),
            "reference_min_holdout": appendix_b.REFERENCE_MIN_HOLDOUT,
            "reference_stated_optimum": appendix_b.REFERENCE_STATED_OPTIMUM,
            "reference_delta": appendix_b.REFERENCE_DELTA,
            "best_holdout": repr(res.best), "delta": repr(res.delta)}
    rows = [(int(i), float(e), float(b), res.theoretical, float(b) - res.theoretical)
            for i, e, b in zip(res.checkpoints, res.holdout_error, res.best_so_far)]
    path = Path(cfg.out) / "appendix_b.csv"
    io.write_table(path, ["iteration", "holdout_error", "best_so_far", "theoretical", "delta"], rows, meta)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causalegm", description="Causal effect estimation with encoding generative models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value run configuration")
        p.add_argument("--seed", type=int, help="single seed overriding the config's seed list")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="write a synthetic dataset and its oracle curve")
    common(p)
    p.add_argument("--kind", choices=datagen.KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)

    p = sub.add_parser("train", help="train a model and write it with its loss trace")
    common(p)
    p.add_argument("--data", help="x,y,v1..vp CSV (default: simulate from the config)")
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("estimate", help="dose response or treatment effects from a saved model")
    common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--grid", help="'observed' or 'lo:hi:count'")
    p.add_argument("--treatment", choices=("continuous", "binary"),
                   help="expected treatment kind (default: the model's)")

    p = sub.add_parser("benchmark", help="multi-seed comparison table")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="seeds run concurrently (1 keeps output order fixed)")
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("appendix-b", help="partially fixed encoder reconstruction check")
    common(p)
    p.add_argument("--iterations", type=int)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        cfg = _run_config(args)
        if args.command == "simulate":
            path = cmd_simulate(cfg)
        elif args.command == "train":
            path = cmd_train(cfg)
        elif args.command == "estimate":
            path = cmd_estimate(cfg, args.treatment)
        elif args.command == "benchmark":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            path = cmd_benchmark(cfg, args.jobs)
        else:
            path = cmd_appendix_b(cfg)
    except CausalEGMError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ERROR
    print(path)
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
