"""Masked dense layers, plain feed-forward stacks, and their checkpoint format.

Checkpoint byte layout (little-endian)::

    magic     8 bytes   b"DODNET\\x00\\x01"
    version   uint32    1
    n_layers  uint32
    per layer:
      n_out, n_in      uint32, uint32
      activation       uint8    (0 identity, 1 leaky-relu)
      slope            float64
      weight           n_out*n_in float64, row-major
      bias             n_out float64
      weight mask      ceil(n_out*n_in/8) bytes, numpy packbits (big bit order)
      bias mask        ceil(n_out/8) bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import DEFAULT_SLOPE, Tensor, add, leaky_relu, matmul, transpose

NET_MAGIC = b"DODNET\x00\x01"
NET_VERSION = 1

IDENTITY = "identity"
LEAKY_RELU = "leaky_relu"
_ACT_CODES = {IDENTITY: 0, LEAKY_RELU: 1}


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class DenseLayer:
    weight: Tensor
    bias: Tensor
    weight_mask: np.ndarray
    bias_mask: np.ndarray
    activation: str = LEAKY_RELU
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        self.weight_mask = np.asarray(self.weight_mask, dtype=bool)
        self.bias_mask = np.asarray(self.bias_mask, dtype=bool)
        if self.weight_mask.shape != self.weight.shape or self.bias_mask.shape != self.bias.shape:
            raise ValueError("mask shapes must match parameter shapes")
        self.apply_masks()

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, activation: str = LEAKY_RELU,
             slope: float = DEFAULT_SLOPE) -> "DenseLayer":
        # Glorot-uniform weights, zero bias.
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(n_out), requires_grad=True),
            np.ones((n_out, n_in), dtype=bool),
            np.ones(n_out, dtype=bool),
            activation,
            slope,
        )

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def masks(self) -> list[np.ndarray]:
        return [self.weight_mask, self.bias_mask]

    def apply_masks(self) -> None:
        self.weight.data[~self.weight_mask] = 0.0
        self.bias.data[~self.bias_mask] = 0.0

    def active_weights(self) -> int:
        return int(self.weight_mask.sum() + self.bias_mask.sum())

    def __call__(self, x: Tensor) -> Tensor:
        y = add(matmul(x, transpose(self.weight)), self.bias)
        if self.activation == LEAKY_RELU:
            y = leaky_relu(y, self.slope)
        return y

    def predict(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.weight.data.T
        y += self.bias.data
        if self.activation == LEAKY_RELU:
            # max(y, slope*y) is leaky-relu for slopes in [0, 1]
            y = np.maximum(y, self.slope * y) if 0.0 <= self.slope <= 1.0 else \
                np.where(y >= 0.0, y, self.slope * y)
        return y


@dataclass(eq=False)
class Mlp:
    """Plain feed-forward stack; hidden layers use leaky-ReLU, the last is affine."""

    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer dims do not chain: {a.n_out} -> {b.n_in}")

    @classmethod
    def build(cls, sizes: Sequence[int], rng: np.random.Generator,
              slope: float = DEFAULT_SLOPE) -> "Mlp":
        """``sizes = [in, hidden..., out]``."""
        if len(sizes) < 2:
            raise ValueError("need at least input and output size")
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = IDENTITY if k == len(sizes) - 2 else LEAKY_RELU
            layers.append(DenseLayer.init(n_in, n_out, rng, act, slope))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def masks(self) -> list[np.ndarray]:
        return [m for layer in self.layers for m in layer.masks()]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.predict(x)
        return x

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def load_state(self, state: Sequence[np.ndarray]) -> None:
        for p, s in zip(self.params(), state):
            p.data[...] = s


def count_active_weights(obj) -> int:
    """Number of unmasked weights and biases in a layer, network, or composite.

    Composite objects expose ``networks()`` returning their constituent nets.
    """
    if isinstance(obj, DenseLayer):
        return obj.active_weights()
    if isinstance(obj, Mlp):
        return sum(layer.active_weights() for layer in obj.layers)
    if hasattr(obj, "networks"):
        return sum(count_active_weights(n) for n in obj.networks())
    if isinstance(obj, Iterable):
        return sum(count_active_weights(n) for n in obj)
    raise TypeError(f"cannot count weights of {type(obj).__name__}")


def dumps_mlp(net: Mlp) -> bytes:
    parts = [NET_MAGIC, struct.pack("<II", NET_VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<IIBd", layer.n_out, layer.n_in,
                                 _ACT_CODES[layer.activation], layer.slope))
        parts.append(layer.weight.data.astype("<f8").tobytes())
        parts.append(layer.bias.data.astype("<f8").tobytes())
        parts.append(np.packbits(layer.weight_mask.ravel()).tobytes())
        parts.append(np.packbits(layer.bias_mask.ravel()).tobytes())
    return b"".join(parts)


def loads_mlp(buf: bytes) -> Mlp:
    try:
        return _loads_mlp(buf)
    except (struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt network checkpoint: {exc}") from None


def _loads_mlp(buf: bytes) -> Mlp:
    if buf[:8] != NET_MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<II", buf, 8)
    if version != NET_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    codes = {v: k for k, v in _ACT_CODES.items()}
    off = 16
    layers = []
    for _ in range(n_layers):
        n_out, n_in, act, slope = struct.unpack_from("<IIBd", buf, off)
        off += struct.calcsize("<IIBd")
        nw = n_out * n_in
        w = np.frombuffer(buf, "<f8", nw, off).reshape(n_out, n_in).astype(np.float64)
        off += 8 * nw
        b = np.frombuffer(buf, "<f8", n_out, off).astype(np.float64)
        off += 8 * n_out
        nbw = (nw + 7) // 8
        wm = np.unpackbits(np.frombuffer(buf, np.uint8, nbw, off))[:nw].reshape(n_out, n_in)
        off += nbw
        nbb = (n_out + 7) // 8
        bm = np.unpackbits(np.frombuffer(buf, np.uint8, nbb, off))[:n_out]
        off += nbb
        layers.append(DenseLayer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True),
                                 wm.astype(bool), bm.astype(bool), codes[act], slope))
    if off != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(buf) - off})")
    return Mlp(layers)


def save_mlp(net: Mlp, path: str | Path) -> None:
    Path(path).write_bytes(dumps_mlp(net))


def load_mlp(path: str | Path) -> Mlp:
    return loads_mlp(Path(path).read_bytes())
