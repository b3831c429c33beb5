import jax
import jax.numpy as jnp
import numpy as np
import pytest
from jax.flatten_util import ravel_pytree

import causalegm  # noqa: F401  (enables float64)
from causalegm import nn
from causalegm.model import ModelConfig, build


def central_fd(fn, tree, h=1e-5):
    """Central finite differences of scalar ``fn(tree)`` in every leaf entry."""
    flat, unravel = ravel_pytree(tree)
    flat = np.asarray(flat, dtype=np.float64)
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (float(fn(unravel(jnp.asarray(up)))) - float(fn(unravel(jnp.asarray(dn))))) / (2 * h)
    return out


def flat(tree):
    return np.asarray(ravel_pytree(tree)[0], dtype=np.float64)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def cast_model(model, dtype=jnp.float64):
    model.nets = {k: nn.cast(v, dtype) for k, v in model.nets.items()}
    return model


def tiny_config(**kw):
    base = dict(p=2, partition=(1, 1, 1, 0), hidden_width=2, hidden_layers=1, critic_widths=(2,),
                batch_size=4, iterations=10)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    return cast_model(build(tiny_config()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    """Record one acceptance verdict; all verdicts are reprinted at the end of the run."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
