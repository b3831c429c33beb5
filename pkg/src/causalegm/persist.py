"""Binary model files.

Layout (all integers little-endian)::

    magic          8 bytes   b"CEGMODEL"
    version        u32       FORMAT_VERSION
    header_len     u32
    header         UTF-8 JSON (sorted keys): model config, partition,
                   treatment kind, ablation flags, iterations trained
    n_nets         u32
    per network:
      name_len u16, name (UTF-8)
      n_sizes u32, layer sizes u32 * n_sizes
      hidden activation u8 (0 = leaky_relu), slope f64
      output activation u8 (0 = linear, 1 = sigmoid)
      batch norm u8, dtype u8 (0 = float32, 1 = float64)
      per dense layer k:
        weights (fan_in x fan_out, row-major), bias
        if batch norm and k is hidden: scale, shift, running mean, running var

Arrays are IEEE-754 in the network's dtype. Trailing bytes are rejected.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from causalegm import nn
from causalegm.errors import FormatError
from causalegm.model import CausalEGMModel, ModelConfig

MAGIC = b"CEGMODEL"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _array_bytes(a, dt) -> bytes:
    return np.ascontiguousarray(np.asarray(a), dtype=dt).tobytes()


def _net_bytes(name: str, net: nn.Mlp) -> bytes:
    spec = net.spec
    code = 1 if np.dtype(net.dtype) == np.float64 else 0
    dt = _DTYPES[code]
    raw = name.encode()
    out = [struct.pack("<H", len(raw)), raw, struct.pack("<I", len(spec.layer_sizes))]
    out.append(struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes))
    out.append(struct.pack("<BdBBB", 0, spec.slope, nn.OUTPUT_ACTIVATIONS.index(spec.output_activation),
                           int(spec.batch_norm), code))
    for k, layer in enumerate(net.params):
        out += [_array_bytes(layer["w"], dt), _array_bytes(layer["b"], dt)]
        if spec.batch_norm and k < spec.n_layers - 1:
            st = net.state[k]
            out += [_array_bytes(layer[f], dt) for f in ("gamma", "beta")]
            out += [_array_bytes(st[f], dt) for f in ("mean", "var")]
    return b"".join(out)


def to_bytes(model: CausalEGMModel) -> bytes:
    header = json.dumps({"config": model.config.to_dict(), "iterations_trained": model.iterations_trained},
                        sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header,
             struct.pack("<I", len(model.nets))]
    parts += [_net_bytes(name, net) for name, net in model.nets.items()]
    return b"".join(parts)


def save(model: CausalEGMModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated model file: needed {n} bytes at offset {self.pos}, "
                              f"file has {len(self.buf)}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape, dt):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(shape)


def _read_net(r: _Reader):
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode()
    (n_sizes,) = r.unpack("<I")
    sizes = r.unpack(f"<{n_sizes}I")
    hidden, slope, out_code, bn, code = r.unpack("<BdBBB")
    if hidden != 0 or out_code >= len(nn.OUTPUT_ACTIVATIONS) or code not in _DTYPES:
        raise FormatError(f"unknown enum value in network {name!r}")
    spec = nn.MlpSpec(tuple(sizes), slope, nn.OUTPUT_ACTIVATIONS[out_code], bool(bn))
    dt = _DTYPES[code]
    jdt = jnp.float64 if code == 1 else jnp.float32
    params, state = [], []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layer = {"w": jnp.asarray(r.array((a, b), dt), jdt), "b": jnp.asarray(r.array((b,), dt), jdt)}
        if spec.batch_norm and k < spec.n_layers - 1:
            layer["gamma"] = jnp.asarray(r.array((b,), dt), jdt)
            layer["beta"] = jnp.asarray(r.array((b,), dt), jdt)
            state.append({"mean": jnp.asarray(r.array((b,), dt), jdt),
                          "var": jnp.asarray(r.array((b,), dt), jdt)})
        params.append(layer)
    return name, nn.Mlp(params=params, state=state, spec=spec)


def from_bytes(buf: bytes) -> CausalEGMModel:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, header_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.take(header_len).decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt model header: {exc}") from exc
    (n_nets,) = r.unpack("<I")
    nets = dict(_read_net(r) for _ in range(n_nets))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} unexpected trailing bytes in model file")
    expected = config.net_specs()
    if set(nets) != set(expected) or any(nets[k].spec != expected[k] for k in expected):
        raise FormatError("network layout does not match the stored configuration")
    return CausalEGMModel(config=config, nets=nets, iterations_trained=int(header["iterations_trained"]))


def load(path) -> CausalEGMModel:
    return from_bytes(Path(path).read_bytes())
