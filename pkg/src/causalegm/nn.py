"""Minimal fully-connected network layer on top of JAX autodiff.

Networks are plain pytrees: ``params`` is a list with one dict per dense layer
(``w`` of shape ``(fan_in, fan_out)``, ``b``, and ``gamma``/``beta`` for hidden
layers when batch norm is on); ``state`` holds the batch-norm running
statistics. All functions are pure so they compose with ``jax.jit``,
``jax.grad`` and ``jax.lax.scan``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from causalegm.errors import ConfigError, ContractError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.99

OUTPUT_ACTIVATIONS = ("linear", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    slope: float = 0.2
    output_activation: str = "linear"
    batch_norm: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError(f"layer_sizes needs at least 2 entries, got {sizes}")
        if min(sizes) < 1:
            raise ConfigError(f"layer sizes must be >= 1, got {sizes}")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@jax.tree_util.register_dataclass
@dataclass
class Mlp:
    params: list
    state: list
    spec: MlpSpec = field(metadata=dict(static=True))

    @property
    def dtype(self):
        return self.params[0]["w"].dtype

    def __call__(self, batch, mode: str = "eval"):
        return forward(self, batch, mode)


def _as_key(seed):
    if isinstance(seed, (int, np.integer)):
        return jax.random.PRNGKey(int(seed))
    return seed


def mlp_init(spec: MlpSpec, seed, dtype=jnp.float32) -> Mlp:
    """Glorot-uniform weights, zero biases, identity batch-norm affine."""
    key = _as_key(seed)
    params, state = [], []
    keys = jax.random.split(key, spec.n_layers)
    for k, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        layer = {
            "w": jax.random.uniform(keys[k], (fan_in, fan_out), dtype, -limit, limit),
            "b": jnp.zeros((fan_out,), dtype),
        }
        if spec.batch_norm and k < spec.n_layers - 1:
            layer["gamma"] = jnp.ones((fan_out,), dtype)
            layer["beta"] = jnp.zeros((fan_out,), dtype)
            state.append({"mean": jnp.zeros((fan_out,), dtype), "var": jnp.ones((fan_out,), dtype)})
        params.append(layer)
    return Mlp(params=params, state=state, spec=spec)


def n_params(net: Mlp) -> int:
    return int(sum(np.size(a) for a in jax.tree_util.tree_leaves(net.params)))


def leaky_relu(h, slope):
    return jnp.where(h > 0, h, slope * h)


def apply(spec: MlpSpec, params, state, x, train: bool = False, raw: bool = False):
    """Run the network; returns ``(output, new_state)``.

    ``train`` selects batch statistics (and updates the running ones) instead
    of the running statistics. ``raw`` skips the output activation.
    """
    new_state = []
    last = len(params) - 1
    h = x
    for k, layer in enumerate(params):
        h = h @ layer["w"] + layer["b"]
        if k == last:
            break
        if spec.batch_norm:
            run = state[k]
            if train:
                mean = h.mean(axis=0)
                var = h.var(axis=0)
                new_state.append({
                    "mean": BN_MOMENTUM * run["mean"] + (1.0 - BN_MOMENTUM) * mean,
                    "var": BN_MOMENTUM * run["var"] + (1.0 - BN_MOMENTUM) * var,
                })
            else:
                mean, var = run["mean"], run["var"]
            h = (h - mean) / jnp.sqrt(var + BN_EPS) * layer["gamma"] + layer["beta"]
        h = leaky_relu(h, spec.slope)
    if not raw and spec.output_activation == "sigmoid":
        h = jax.nn.sigmoid(h)
    return h, (new_state if train else state)


def _check_width(net: Mlp, batch):
    if batch.ndim != 2 or batch.shape[1] != net.spec.d_in:
        raise ShapeError(f"expected batch of shape (n, {net.spec.d_in}), got {tuple(batch.shape)}")


def forward(net: Mlp, batch, mode: str = "eval"):
    """Network output on ``batch``. Train mode uses batch statistics but
    discards the running-stat update; use :func:`forward_train` to keep it."""
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = jnp.asarray(batch, net.dtype)
    _check_width(net, batch)
    out, _ = apply(net.spec, net.params, net.state, batch, train=mode == "train")
    return out


def forward_train(net: Mlp, batch):
    batch = jnp.asarray(batch, net.dtype)
    _check_width(net, batch)
    out, state = apply(net.spec, net.params, net.state, batch, train=True)
    return out, Mlp(params=net.params, state=state, spec=net.spec)


def param_gradients(objective: Callable[..., Any], *params):
    """Reverse-mode gradient of a scalar ``objective(*params)``.

    Objectives may themselves contain input gradients (the gradient
    penalty); JAX differentiates through them exactly.
    """
    argnums = tuple(range(len(params)))
    grads = jax.grad(objective, argnums=argnums)(*params)
    return grads[0] if len(params) == 1 else grads


def critic_input_gradient(spec: MlpSpec, params, state, batch):
    """Per-row gradient of the pre-activation scalar output, eval mode.

    In eval mode rows do not interact, so the gradient of the summed output
    w.r.t. the batch is the stack of per-sample gradients.
    """
    def total(b):
        out, _ = apply(spec, params, state, b, train=False, raw=True)
        return out.sum()

    return jax.grad(total)(batch)


def input_gradient(net: Mlp, batch):
    if net.spec.d_out != 1:
        raise ContractError(f"input_gradient needs a scalar-output network, got d_out={net.spec.d_out}")
    batch = jnp.asarray(batch, net.dtype)
    _check_width(net, batch)
    return critic_input_gradient(net.spec, net.params, net.state, batch)


def safe_norm(g, axis=-1):
    """Euclidean norm whose gradient at zero is zero instead of NaN."""
    sq = jnp.sum(g * g, axis=axis)
    positive = sq > 0
    return jnp.where(positive, jnp.sqrt(jnp.where(positive, sq, 1.0)), 0.0)


@jax.tree_util.register_dataclass
@dataclass
class AdamState:
    step: Any
    m: Any
    v: Any
    lr: float = field(default=2e-4, metadata=dict(static=True))
    b1: float = field(default=0.9, metadata=dict(static=True))
    b2: float = field(default=0.999, metadata=dict(static=True))
    eps: float = field(default=1e-8, metadata=dict(static=True))


def adam_init(params, lr: float = 2e-4, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(step=jnp.zeros((), jnp.int32), m=zeros, v=jax.tree_util.tree_map(jnp.zeros_like, params),
                     lr=lr, b1=b1, b2=b2, eps=eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update. Returns ``(params, state)``."""
    step = state.step + 1
    b1, b2 = state.b1, state.b2
    m = jax.tree_util.tree_map(lambda m, g: b1 * m + (1.0 - b1) * g, state.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: b2 * v + (1.0 - b2) * g * g, state.v, grads)

    def update(p, m, v):
        t = step.astype(p.dtype)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        return p - state.lr * m_hat / (jnp.sqrt(v_hat) + state.eps)

    params = jax.tree_util.tree_map(update, params, m, v)
    return params, AdamState(step=step, m=m, v=v, lr=state.lr, b1=b1, b2=b2, eps=state.eps)


def with_params(net: Mlp, params, state=None) -> Mlp:
    return Mlp(params=params, state=net.state if state is None else state, spec=net.spec)


def cast(net: Mlp, dtype) -> Mlp:
    return Mlp(
        params=jax.tree_util.tree_map(lambda a: jnp.asarray(a, dtype), net.params),
        state=jax.tree_util.tree_map(lambda a: jnp.asarray(a, dtype), net.state),
        spec=net.spec,
    )


def mlp_spec(sizes: Sequence[int], **kwargs) -> MlpSpec:
    return MlpSpec(tuple(sizes), **kwargs)
