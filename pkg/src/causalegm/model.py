"""The encoding generative model: networks, losses and adversarial training.

Six networks share one latent space ``z = (z0, z1, z2, z3)`` with a standard
normal prior:

* ``E`` encodes covariates into the latent space, ``G`` decodes back;
* ``F(x, z0, z1)`` predicts the outcome, ``H(z0, z2)`` the treatment;
* critics ``Dz`` and ``Dv`` score latent and covariate samples (WGAN-GP).

Training alternates one critic update (``Dz``, ``Dv``) with one update of
``E``, ``G``, ``F``, ``H``. The inner loop runs under ``jax.lax.scan`` in
chunks so a 30k-iteration run costs about a minute on one CPU core.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import jax
import jax.numpy as jnp
import numpy as np

from causalegm import nn
from causalegm.data import Dataset
from causalegm.errors import ConfigError, ContractError, DataError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

TREATMENT_KINDS = ("continuous", "binary")
NET_IDS = {"E": 1, "G": 2, "F": 3, "H": 4, "Dz": 5, "Dv": 6}
GENERATOR_NETS = ("E", "G", "F", "H")
CRITIC_NETS = ("Dz", "Dv")
LOSS_NAMES = ("gan_e", "gan_g", "gan_dz", "gan_dv", "rec_z", "rec_v", "mse_f", "mse_h")

# fold_in tags for the per-iteration random streams
_IDX, _PRIOR, _U_Z, _U_V = 0, 1, 2, 3
_TRAIN_STREAM = 1000


@dataclass(frozen=True)
class LatentPartition:
    q0: int = 1
    q1: int = 1
    q2: int = 1
    q3: int = 7

    def __post_init__(self):
        dims = (self.q0, self.q1, self.q2, self.q3)
        if any(int(d) != d or d < 0 for d in dims):
            raise ConfigError(f"latent dimensions must be non-negative integers, got {dims}")
        if self.q0 < 1:
            raise ConfigError("q0 must be >= 1")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.q0, self.q1, self.q2, self.q3)

    @property
    def q(self) -> int:
        return sum(self.dims)

    def slices(self) -> tuple[slice, slice, slice, slice]:
        edges = np.cumsum((0,) + self.dims)
        return tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    def split(self, z):
        return tuple(z[:, s] for s in self.slices())


@dataclass(frozen=True)
class ModelConfig:
    """Architecture, optimisation and ablation settings.

    Defaults follow the published setup: 5 dense layers of width 64 for
    ``E``, ``G``, ``F``, ``H``; critics with hidden widths (64, 32, 8) and
    batch norm; penalty 10; Adam at 2e-4; batch 32; 30,000 iterations.
    """

    p: int
    partition: LatentPartition = LatentPartition()
    treatment_kind: str = "continuous"
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
    seed: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if isinstance(self.partition, (tuple, list)):
            set_("partition", LatentPartition(*self.partition))
        set_("critic_widths", tuple(int(w) for w in self.critic_widths))
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if self.treatment_kind not in TREATMENT_KINDS:
            raise ConfigError(f"treatment_kind must be one of {TREATMENT_KINDS}, got {self.treatment_kind!r}")
        if not self.lam > 0:
            raise ConfigError(f"lam must be > 0, got {self.lam}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be >= 1, got {self.critic_steps}")
        if self.hidden_width < 1 or self.hidden_layers < 0 or not self.critic_widths:
            raise ConfigError("invalid network widths")
        if not self.use_roundtrip:
            set_("use_v_gan", False)
            set_("use_z_rec", False)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["partition"] = list(self.partition.dims)
        d["critic_widths"] = list(self.critic_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["partition"] = LatentPartition(*d["partition"])
        d["critic_widths"] = tuple(d["critic_widths"])
        return cls(**d)

    @property
    def net_names(self) -> tuple[str, ...]:
        names = ["E", "F", "H"]
        if self.use_roundtrip:
            names[1:1] = ["G"]
            names.append("Dz")
            if self.use_v_gan:
                names.append("Dv")
        return tuple(n for n in NET_IDS if n in names)

    def net_specs(self) -> dict[str, nn.MlpSpec]:
        q0, q1, q2, _ = self.partition.dims
        q = self.partition.q
        hidden = (self.hidden_width,) * self.hidden_layers
        slope = self.leaky_slope
        h_out = "sigmoid" if self.treatment_kind == "binary" else "linear"
        all_specs = {
            "E": nn.MlpSpec((self.p, *hidden, q), slope),
            "G": nn.MlpSpec((q, *hidden, self.p), slope),
            "F": nn.MlpSpec((1 + q0 + q1, *hidden, 1), slope),
            "H": nn.MlpSpec((q0 + q2, *hidden, 1), slope, output_activation=h_out),
            "Dz": nn.MlpSpec((q, *self.critic_widths, 1), slope, batch_norm=self.critic_batch_norm),
            "Dv": nn.MlpSpec((self.p, *self.critic_widths, 1), slope, batch_norm=self.critic_batch_norm),
        }
        return {name: all_specs[name] for name in self.net_names}


@dataclass
class CausalEGMModel:
    config: ModelConfig
    nets: dict[str, nn.Mlp]
    iterations_trained: int = 0

    def net(self, name: str) -> nn.Mlp:
        if name not in self.nets:
            raise ContractError(f"network {name} is disabled by the model configuration")
        return self.nets[name]

    @property
    def partition(self) -> LatentPartition:
        return self.config.partition


@dataclass
class TrainingTrace:
    """Per-iteration loss components; absent terms are recorded as 0."""

    losses: dict[str, np.ndarray] = field(default_factory=lambda: {k: np.zeros(0) for k in LOSS_NAMES})

    def __len__(self) -> int:
        return len(self.losses["mse_f"])

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.losses[k] for k in LOSS_NAMES])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "TrainingTrace":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, len(LOSS_NAMES))
        return cls({k: arr[:, i].copy() for i, k in enumerate(LOSS_NAMES)})

    def generator_loss(self) -> np.ndarray:
        return sum(self.losses[k] for k in ("gan_e", "gan_g", "rec_z", "rec_v", "mse_f", "mse_h"))

    def critic_loss(self) -> np.ndarray:
        return self.losses["gan_dz"] + self.losses["gan_dv"]


def build(config: ModelConfig) -> CausalEGMModel:
    """Initialise every network enabled by ``config``, seeded per network."""
    root = jax.random.PRNGKey(config.seed)
    nets = {
        name: nn.mlp_init(spec, jax.random.fold_in(root, NET_IDS[name]))
        for name, spec in config.net_specs().items()
    }
    return CausalEGMModel(config=config, nets=nets)


def _check_covariates(model: CausalEGMModel, v):
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[1] != model.config.p:
        raise ShapeError(f"covariate matrix must have shape (n, {model.config.p}), got {v.shape}")


def encode(model: CausalEGMModel, v) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Encode covariates and split into ``(z0, z1, z2, z3)``."""
    _check_covariates(model, v)
    z = nn.forward(model.net("E"), v)
    return tuple(np.asarray(part) for part in model.partition.split(z))


# ----------------------------------------------------------------------------
# losses (pure functions over params/state so they run inside jit)


def _critic_losses(spec, params, state, real, fake, lam, u):
    """WGAN-GP critic loss on pre-sigmoid scores.

    With batch norm, real and fake rows go through one train-mode forward so
    both are normalised by the same statistics; the penalty is evaluated in
    eval mode, where rows are independent.
    """
    n = real.shape[0]
    if spec.batch_norm:
        scores, state = nn.apply(spec, params, state, jnp.concatenate([real, fake]), train=True, raw=True)
        s_real, s_fake = scores[:n], scores[n:]
    else:
        s_real = nn.apply(spec, params, state, real, raw=True)[0]
        s_fake = nn.apply(spec, params, state, fake, raw=True)[0]
    interp = u * real + (1.0 - u) * fake
    grads = nn.critic_input_gradient(spec, params, state, interp)
    penalty = jnp.mean((nn.safe_norm(grads) - 1.0) ** 2)
    loss = -jnp.mean(s_real) + jnp.mean(s_fake) + lam * penalty
    return loss, state


def _adversarial_loss(spec, params, state, fake, real=None):
    """``-mean critic(fake)``.

    For batch-norm critics pass the paired ``real`` batch: the critic then
    scores the joint batch in train mode, exactly as during its own update.
    """
    if spec.batch_norm and real is not None:
        n = real.shape[0]
        scores, _ = nn.apply(spec, params, state, jnp.concatenate([real, fake]), train=True, raw=True)
        return -jnp.mean(scores[n:])
    return -jnp.mean(nn.apply(spec, params, state, fake, raw=True)[0])


def _sq_norm_mean(a, b):
    return jnp.mean(jnp.sum((a - b) ** 2, axis=1))


def _generator_terms(cfg: ModelConfig, specs, gparams, cparams, cstates, v, x, y, z):
    """All generator-side loss terms as a dict (absent terms are 0)."""
    run = lambda name, inp: nn.apply(specs[name], gparams[name], [], inp)[0]  # noqa: E731
    zero = jnp.zeros((), v.dtype)
    terms = {k: zero for k in LOSS_NAMES}
    ez = run("E", v)
    z0, z1, z2, _ = cfg.partition.split(ez)
    terms["mse_f"] = jnp.mean((y - run("F", jnp.concatenate([x, z0, z1], axis=1))) ** 2)
    terms["mse_h"] = jnp.mean((x - run("H", jnp.concatenate([z0, z2], axis=1))) ** 2)
    if cfg.use_roundtrip:
        terms["gan_e"] = _adversarial_loss(specs["Dz"], cparams["Dz"], cstates["Dz"], ez, z)
        terms["rec_v"] = _sq_norm_mean(v, run("G", ez))
        gz = run("G", z)
        if cfg.use_z_rec:
            terms["rec_z"] = _sq_norm_mean(z, run("E", gz))
        if cfg.use_v_gan:
            terms["gan_g"] = _adversarial_loss(specs["Dv"], cparams["Dv"], cstates["Dv"], gz, v)
    return terms


def _critic_terms(cfg: ModelConfig, specs, cparams, cstates, gparams, v, z, u_z, u_v):
    run = lambda name, inp: nn.apply(specs[name], gparams[name], [], inp)[0]  # noqa: E731
    zero = jnp.zeros((), v.dtype)
    ez = jax.lax.stop_gradient(run("E", v))
    states = dict(cstates)
    loss_z, states["Dz"] = _critic_losses(specs["Dz"], cparams["Dz"], cstates["Dz"], z, ez, cfg.lam, u_z)
    loss_v = zero
    if cfg.use_v_gan:
        gz = jax.lax.stop_gradient(run("G", z))
        loss_v, states["Dv"] = _critic_losses(specs["Dv"], cparams["Dv"], cstates["Dv"], v, gz, cfg.lam, u_v)
    return loss_z + loss_v, (loss_z, loss_v, states)


# ----------------------------------------------------------------------------
# public loss wrappers


def gan_pair_losses(critic: nn.Mlp, real_batch, fake_batch, lam: float, u=None, seed: int = 0):
    """``(generator_loss, critic_loss)`` of one WGAN-GP pair.

    ``u`` holds the per-pair interpolation weights; drawn from U(0, 1) with
    ``seed`` when omitted.
    """
    real = jnp.asarray(real_batch, critic.dtype)
    fake = jnp.asarray(fake_batch, critic.dtype)
    if real.shape[0] < 1 or fake.shape[0] < 1:
        raise ContractError("gan_pair_losses needs non-empty batches")
    if real.shape != fake.shape:
        raise ShapeError(f"real {real.shape} and fake {fake.shape} batches differ")
    if u is None:
        u = jax.random.uniform(jax.random.PRNGKey(seed), (real.shape[0], 1), critic.dtype)
    u = jnp.asarray(u, critic.dtype).reshape(-1, 1)
    critic_loss, _ = _critic_losses(critic.spec, critic.params, critic.state, real, fake, lam, u)
    gen_loss = _adversarial_loss(critic.spec, critic.params, critic.state, fake, real)
    return gen_loss, critic_loss


def _gparams(model):
    return {k: model.nets[k].params for k in GENERATOR_NETS if k in model.nets}


def _cparams(model):
    return {k: model.nets[k].params for k in CRITIC_NETS if k in model.nets}


def _cstates(model):
    return {k: model.nets[k].state for k in CRITIC_NETS if k in model.nets}


def _col(a, dtype):
    return jnp.asarray(a, dtype).reshape(-1, 1)


def reconstruction_loss(model: CausalEGMModel, v_batch, z_batch) -> float:
    """``mean ||v - G(E(v))||^2`` plus ``mean ||z - E(G(z))||^2`` when enabled."""
    if not model.config.use_roundtrip:
        raise ContractError("reconstruction loss needs the roundtrip networks")
    dtype = model.nets["E"].dtype
    v = jnp.asarray(v_batch, dtype)
    z = jnp.asarray(z_batch, dtype)
    terms = _generator_terms(model.config, model.config.net_specs(), _gparams(model), _cparams(model),
                             _cstates(model), v, jnp.zeros((v.shape[0], 1), dtype),
                             jnp.zeros((v.shape[0], 1), dtype), z)
    return float(terms["rec_v"] + terms["rec_z"])


def supervised_losses(model: CausalEGMModel, x_batch, y_batch, z0, z1, z2) -> tuple[float, float]:
    """``(mean (y - F(x, z0, z1))^2, mean (x - H(z0, z2))^2)``."""
    F, H = model.net("F"), model.net("H")
    dtype = F.dtype
    x, y = _col(x_batch, dtype), _col(y_batch, dtype)
    z0, z1, z2 = (jnp.asarray(a, dtype).reshape(x.shape[0], -1) for a in (z0, z1, z2))
    loss_f = jnp.mean((y - nn.forward(F, jnp.concatenate([x, z0, z1], axis=1))) ** 2)
    loss_h = jnp.mean((x - nn.forward(H, jnp.concatenate([z0, z2], axis=1))) ** 2)
    return float(loss_f), float(loss_h)


# ----------------------------------------------------------------------------
# training


def init_optimizers(model: CausalEGMModel) -> dict:
    cfg = model.config
    kw = dict(lr=cfg.lr, b1=cfg.adam_b1, b2=cfg.adam_b2, eps=cfg.adam_eps)
    opt = {"gen": nn.adam_init(_gparams(model), **kw)}
    opt["critic"] = nn.adam_init(_cparams(model), **kw) if cfg.use_roundtrip else None
    return opt


def _step_core(cfg: ModelConfig, specs, carry, v, x, y, z, key):
    """One alternating update on a fixed (data, prior) batch.

    Returns the new carry and the loss record (values before the update).
    """
    gparams, cparams, cstates, gopt, copt = carry
    zero = jnp.zeros((), v.dtype)
    gan_dz = gan_dv = zero
    if cfg.use_roundtrip:
        for s in range(cfg.critic_steps):
            ks = jax.random.fold_in(key, s)
            u_z = jax.random.uniform(jax.random.fold_in(ks, _U_Z), (v.shape[0], 1), v.dtype)
            u_v = jax.random.uniform(jax.random.fold_in(ks, _U_V), (v.shape[0], 1), v.dtype)

            def critic_total(cp):
                return _critic_terms(cfg, specs, cp, cstates, gparams, v, z, u_z, u_v)

            grads, (lz, lv, new_states) = jax.grad(critic_total, has_aux=True)(cparams)
            if s == 0:
                gan_dz, gan_dv = lz, lv
            cparams, copt = nn.adam_step(copt, cparams, grads)
            cstates = new_states

    def gen_total(gp):
        terms = _generator_terms(cfg, specs, gp, cparams, cstates, v, x, y, z)
        return sum(terms.values()), terms

    grads, terms = jax.grad(gen_total, has_aux=True)(gparams)
    gparams, gopt = nn.adam_step(gopt, gparams, grads)
    terms["gan_dz"], terms["gan_dv"] = gan_dz, gan_dv
    record = jnp.stack([terms[k] for k in LOSS_NAMES])
    return (gparams, cparams, cstates, gopt, copt), record


def _carry(model, opt):
    return (_gparams(model), _cparams(model), _cstates(model), opt["gen"], opt["critic"])


def _unpack(model, carry):
    gparams, cparams, cstates, gopt, copt = carry
    nets = dict(model.nets)
    for k, params in gparams.items():
        nets[k] = nn.with_params(nets[k], params)
    for k, params in cparams.items():
        nets[k] = nn.with_params(nets[k], params, cstates[k])
    return nets, {"gen": gopt, "critic": copt}


def train_step(model: CausalEGMModel, opt_states: dict, data_batch, prior_batch, key=0):
    """Apply one critic/generator round to ``model`` in place.

    ``data_batch`` is ``(v, x, y)``; ``prior_batch`` a latent draw. Returns
    the updated optimizer states and the loss record as a dict.
    """
    cfg = model.config
    dtype = model.nets["E"].dtype
    v, x, y = data_batch
    v = jnp.asarray(v, dtype)
    _check_covariates(model, v)
    x, y = _col(x, dtype), _col(y, dtype)
    z = jnp.asarray(prior_batch, dtype)
    if v.shape[0] != cfg.batch_size or z.shape[0] != cfg.batch_size:
        raise ShapeError(f"batches must have {cfg.batch_size} rows")
    key = nn._as_key(key)
    carry, record = _jit_step(cfg, cfg.net_specs())(_carry(model, opt_states), v, x, y, z, key)
    record = np.asarray(record, dtype=np.float64)
    if not np.all(np.isfinite(record)):
        raise TrainingError(f"non-finite loss at iteration {model.iterations_trained}")
    model.nets, opt = _unpack(model, carry)
    model.iterations_trained += 1
    return opt, dict(zip(LOSS_NAMES, record))


_STEP_CACHE: dict = {}
_CHUNK_CACHE: dict = {}


def _cache_key(cfg, specs):
    # seed and iteration count never enter the traced program
    return (cfg.replace(seed=0, iterations=1), tuple(specs.items()))


def _jit_step(cfg, specs):
    key = _cache_key(cfg, specs)
    if key not in _STEP_CACHE:
        _STEP_CACHE[key] = jax.jit(lambda carry, v, x, y, z, k: _step_core(cfg, specs, carry, v, x, y, z, k))
    return _STEP_CACHE[key]


def _jit_chunk(cfg, specs):
    """Compiled runner for a block of iterations with in-graph sampling."""
    cache_key = _cache_key(cfg, specs)
    if cache_key in _CHUNK_CACHE:
        return _CHUNK_CACHE[cache_key]
    B, q = cfg.batch_size, cfg.partition.q

    def run(carry, v_all, x_all, y_all, stream, its):
        n = v_all.shape[0]

        def body(c, it):
            key = jax.random.fold_in(stream, it)
            idx = jax.random.randint(jax.random.fold_in(key, _IDX), (B,), 0, n)
            z = jax.random.normal(jax.random.fold_in(key, _PRIOR), (B, q), v_all.dtype)
            return _step_core(cfg, specs, c, v_all[idx], x_all[idx], y_all[idx], z, key)

        return jax.lax.scan(body, carry, its)

    _CHUNK_CACHE[cache_key] = jax.jit(run)
    return _CHUNK_CACHE[cache_key]


def _validate_training_data(cfg: ModelConfig, data: Dataset):
    if data.p != cfg.p:
        raise ShapeError(f"dataset has p={data.p} covariates, model expects p={cfg.p}")
    if data.n < cfg.batch_size:
        raise DataError(f"need at least batch_size={cfg.batch_size} rows, got n={data.n}")
    if cfg.treatment_kind == "binary" and not data.is_binary:
        raise DataError("binary model needs treatment values in {0, 1}")


def train(model: CausalEGMModel, dataset: Dataset, iterations: Optional[int] = None, *,
          chunk: int = 1000, callback: Optional[Callable[[int, TrainingTrace], None]] = None) -> TrainingTrace:
    """Train ``model`` in place on uniformly resampled mini-batches.

    Runs ``iterations`` (default: ``config.iterations``) steps with fresh
    prior draws each step and returns the full loss trace. Raises
    :class:`TrainingError` naming the first iteration with a non-finite loss.
    """
    cfg = model.config
    _validate_training_data(cfg, dataset)
    total = cfg.iterations if iterations is None else int(iterations)
    dtype = model.nets["E"].dtype
    v = jnp.asarray(dataset.v, dtype)
    x, y = _col(dataset.x, dtype), _col(dataset.y, dtype)
    stream = jax.random.fold_in(jax.random.PRNGKey(cfg.seed), _TRAIN_STREAM)
    runner = _jit_chunk(cfg, cfg.net_specs())
    carry = _carry(model, init_optimizers(model))
    records = []
    done = 0
    start = model.iterations_trained
    while done < total:
        size = min(chunk, total - done)
        its = jnp.arange(start + done, start + done + size, dtype=jnp.int32)
        carry, rec = runner(carry, v, x, y, stream, its)
        rec = np.asarray(rec, dtype=np.float64)
        bad = ~np.all(np.isfinite(rec), axis=1)
        if bad.any():
            raise TrainingError(f"non-finite loss at iteration {start + done + int(np.argmax(bad))}")
        records.append(rec)
        done += size
        if callback is not None:
            callback(done, TrainingTrace.from_array(np.concatenate(records)))
        logger.debug("iteration %d/%d mse_f=%.4f", done, total, rec[-1, LOSS_NAMES.index("mse_f")])
    model.nets, _ = _unpack(model, carry)
    model.iterations_trained += total
    return TrainingTrace.from_array(np.concatenate(records))
