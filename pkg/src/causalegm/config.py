"""Flat ``key = value`` run configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored, no sections or nesting. Lists are comma separated and booleans
are ``true``/``false``. Unknown or repeated keys are errors. ``dumps`` writes
every key, so a dumped file reloads to an equal config.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from causalegm.datagen import KINDS
from causalegm.errors import ConfigError
from causalegm.model import TREATMENT_KINDS, LatentPartition, ModelConfig

METHODS = ("causalegm", "no_rt", "vgan_zrec", "ols", "reg")

CONTINUOUS_PARTITION = (1, 1, 1, 7)
BINARY_PARTITION = (3, 3, 6, 6)


@dataclass(frozen=True)
class RunConfig:
    # data
    kind: str = "hirano"
    n: int = 10000
    p: int = 50
    seeds: tuple[int, ...] = (0,)
    tau: float = 2.0
    data: str = ""
    oracle: str = ""
    out: str = "out"
    # model; "auto" picks (1,1,1,7) for continuous and (3,3,6,6) for binary treatment
    partition: str = "auto"
    treatment_kind: str = "auto"
    hidden_width: int = 64
    hidden_layers: int = 4
    critic_widths: tuple[int, ...] = (64, 32, 8)
    critic_batch_norm: bool = True
    leaky_slope: float = 0.2
    lam: float = 10.0
    lr: float = 2e-4
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    iterations: int = 30000
    critic_steps: int = 1
    use_roundtrip: bool = True
    use_v_gan: bool = True
    use_z_rec: bool = True
    # estimation and metrics
    model: str = ""
    grid: str = "observed"
    trim: bool = False
    mtef_dx: float = 1e-4
    mtef_points: int = 500
    pehe_root: bool = False
    pehe_factual: str = "observed"
    band_points: int = 200
    # benchmark
    methods: tuple[str, ...] = ("causalegm", "ols", "reg")
    # dimension-reduction check
    ab_n_train: int = 50000
    ab_n_holdout: int = 10000
    ab_iterations: int = 60000
    ab_batch_size: int = 128
    ab_lr: float = 2e-4
    ab_eval_every: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if self.n < 1 or self.p < 1:
            raise ConfigError("n and p must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.treatment_kind not in ("auto", *TREATMENT_KINDS):
            raise ConfigError(f"treatment_kind must be auto, continuous or binary, got {self.treatment_kind!r}")
        if self.partition != "auto":
            _parse_partition(self.partition)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        if self.pehe_factual not in ("observed", "predicted"):
            raise ConfigError("pehe_factual must be observed or predicted")
        if self.mtef_dx <= 0 or self.mtef_points < 0 or self.band_points < 2:
            raise ConfigError("mtef_dx must be > 0, mtef_points >= 0, band_points >= 2")
        if min(self.ab_n_train, self.ab_n_holdout, self.ab_iterations, self.ab_batch_size, self.ab_eval_every) < 1:
            raise ConfigError("appendix-b sizes must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def resolve_treatment(self, binary_data: bool) -> str:
        if self.treatment_kind != "auto":
            return self.treatment_kind
        return "binary" if binary_data or self.kind == "binary" else "continuous"

    def model_config(self, p: int, treatment_kind: str, seed: int) -> ModelConfig:
        if self.partition == "auto":
            dims = BINARY_PARTITION if treatment_kind == "binary" else CONTINUOUS_PARTITION
        else:
            dims = _parse_partition(self.partition)
        return ModelConfig(
            p=p, partition=LatentPartition(*dims), treatment_kind=treatment_kind,
            hidden_width=self.hidden_width, hidden_layers=self.hidden_layers, critic_widths=self.critic_widths,
            critic_batch_norm=self.critic_batch_norm, leaky_slope=self.leaky_slope, lam=self.lam, lr=self.lr,
            adam_b1=self.adam_b1, adam_b2=self.adam_b2, adam_eps=self.adam_eps, batch_size=self.batch_size,
            iterations=self.iterations, critic_steps=self.critic_steps, use_roundtrip=self.use_roundtrip,
            use_v_gan=self.use_v_gan, use_z_rec=self.use_z_rec, seed=seed)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def hash(self) -> str:
        """Short digest of every setting except the output directory."""
        text = self.replace(out="").dumps()
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_partition(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"partition must be four comma-separated integers, got {text!r}") from None
    if len(dims) != 4:
        raise ConfigError(f"partition must have four entries, got {text!r}")
    LatentPartition(*dims)
    return dims


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str) -> Any:
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(t) for t in raw.split(",") if t.strip())
        if kind == "tuple[str, ...]":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def loads(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return RunConfig(**values)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text, str(path))
