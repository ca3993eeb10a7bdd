"""Dense feed-forward networks with hand-written reverse-mode gradients and Adam.

All arithmetic is float64. Inputs may be a single vector ``(in_dim,)`` or a
batch ``(B, in_dim)``; weights are stored as ``(in_dim, out_dim)`` so a layer
computes ``act(x @ W + b)``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .numerics import RngStream

ACTIVATIONS = ("identity", "relu", "silu")


class CheckpointError(ValueError):
    """Raised when a network checkpoint cannot be decoded."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "silu":
        return z * _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DenseNet needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        for l in self.layers:
            if l.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {l.activation!r}")
            if l.bias.shape != (l.weight.shape[1],):
                raise ValueError("bias shape does not match weight")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def dims(self) -> list[int]:
        return [self.in_dim] + [l.weight.shape[1] for l in self.layers]


def init_net(dims: Sequence[int], hidden_activation: str, rng: RngStream,
             output_activation: str = "identity") -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.gen.uniform(-lim, lim, (fan_in, fan_out))
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


def _check_input(net: DenseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim or x.ndim not in (1, 2):
        raise ValueError(f"input shape {x.shape} does not match in_dim={net.in_dim}")
    return x


def forward(net: DenseNet, x) -> np.ndarray:
    x = _check_input(net, x)
    for l in net.layers:
        x = _act(l.activation, x @ l.weight + l.bias)
    return x


def forward_cached(net: DenseNet, x) -> tuple[np.ndarray, list]:
    """Forward pass that also returns (layer input, pre-activation) pairs for backward."""
    x = _check_input(net, x)
    cache = []
    for l in net.layers:
        z = x @ l.weight + l.bias
        cache.append((x, z))
        x = _act(l.activation, z)
    return x, cache


def backward_cached(net: DenseNet, cache: list, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Return (gradients aligned with ``net.params()``, gradient w.r.t. the input)."""
    g = np.asarray(grad_out, dtype=np.float64)
    grads: list[np.ndarray] = []
    for l, (x, z) in zip(reversed(net.layers), reversed(cache)):
        if g.shape != z.shape:
            raise ValueError(f"output gradient shape {g.shape} != {z.shape}")
        gz = g * _act_grad(l.activation, z)
        if gz.ndim == 1:
            gw, gb = np.outer(x, gz), gz
        else:
            gw, gb = x.T @ gz, gz.sum(axis=0)
        grads += [gb, gw]
        g = gz @ l.weight.T
    grads.reverse()
    return grads, g


def backward(net: DenseNet, x, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    _, cache = forward_cached(net, x)
    return backward_cached(net, cache, grad_out)


@dataclass
class Adam:
    """Bias-corrected adaptive-moment optimizer state for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoints: b"GSNN", u16 version, u32 layer count, per layer (u32 in, u32 out,
# u8 activation), then every parameter as little-endian float64 in params() order.

MAGIC = b"GSNN"
VERSION = 1


def write_net(fh: BinaryIO, net: DenseNet) -> None:
    fh.write(MAGIC + struct.pack("<HI", VERSION, len(net.layers)))
    for l in net.layers:
        fh.write(struct.pack("<IIB", *l.weight.shape, ACTIVATIONS.index(l.activation)))
    for p in net.params():
        fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def read_net(fh: BinaryIO) -> DenseNet:
    if _read_exact(fh, 4, "magic") != MAGIC:
        raise CheckpointError("invalid format: bad network magic")
    version, count = struct.unpack("<HI", _read_exact(fh, 6, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported network checkpoint version {version}")
    shapes = []
    for _ in range(count):
        i, o, a = struct.unpack("<IIB", _read_exact(fh, 9, "layer header"))
        if a >= len(ACTIVATIONS):
            raise CheckpointError(f"unknown activation code {a}")
        shapes.append((i, o, ACTIVATIONS[a]))
    layers = []
    for i, o, act in shapes:
        w = np.frombuffer(_read_exact(fh, 8 * i * o, "weights"), "<f8").reshape(i, o)
        b = np.frombuffer(_read_exact(fh, 8 * o, "biases"), "<f8")
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), act))
    return DenseNet(layers)


def save_net(path, net: DenseNet) -> None:
    with open(path, "wb") as fh:
        write_net(fh, net)


def load_net(path) -> DenseNet:
    with open(path, "rb") as fh:
        return read_net(fh)


def net_to_bytes(net: DenseNet) -> bytes:
    buf = io.BytesIO()
    write_net(buf, net)
    return buf.getvalue()
