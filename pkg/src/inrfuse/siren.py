"""Sine-activated coordinate network: construction, evaluation, gradients, checkpoints.

Hidden layers compute ``sin(omega * (W x + b))``; the last layer is a plain
affine map so the output can cover the whole normalized intensity range.
Parameters are drawn with numpy's PCG64 generator, which is portable and
bit-reproducible for a given seed.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, UsageError
from .nn import affine_backward, affine_forward, affine_sine_backward, affine_sine_forward

CHECKPOINT_MAGIC = b"INRF"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<IIIIddQ")


@dataclass(frozen=True)
class SirenConfig:
    in_dim: int = 2
    out_dim: int = 1
    hidden_width: int = 256
    num_layers: int = 5
    omega_first: float = 30.0
    omega_hidden: float = 30.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_layers < 2:
            raise ConfigError(f"num_layers must be >= 2, got {self.num_layers}")
        if self.hidden_width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dimensions must be positive")
        if not (self.omega_first > 0 and self.omega_hidden > 0):
            raise ConfigError("frequency factors must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(N_i, M_i)`` for each weight matrix, input layer first."""
        dims = [self.in_dim] + [self.hidden_width] * (self.num_layers - 1) + [self.out_dim]
        return [(dims[i + 1], dims[i]) for i in range(self.num_layers)]

    def parameter_count(self) -> int:
        return sum(n * m + n for n, m in self.layer_shapes())

    def omega(self, layer: int) -> float:
        return self.omega_first if layer == 0 else self.omega_hidden


@dataclass
class GradientSet:
    grad_weights: list
    grad_biases: list

    def as_list(self) -> list:
        return list(self.grad_weights) + list(self.grad_biases)


@dataclass
class ForwardCache:
    """Layer inputs and hidden pre-activations retained for :meth:`SirenNetwork.backward`."""

    inputs: list
    pre_activations: list
    token: tuple


class SirenNetwork:
    def __init__(self, config: SirenConfig, weights: list, biases: list):
        config.validate()
        shapes = config.layer_shapes()
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} layers, got {len(weights)} weights and {len(biases)} biases")
        for i, ((n, m), w, b) in enumerate(zip(shapes, weights, biases)):
            if w.shape != (n, m) or b.shape != (n,):
                raise ShapeError(f"layer {i}: expected W {(n, m)} and b {(n,)}, got {w.shape} and {b.shape}")
        self.config = config
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, config: SirenConfig) -> "SirenNetwork":
        """Draw parameters with the standard sine-network initialization."""
        config.validate()
        rng = np.random.Generator(np.random.PCG64(config.seed))
        weights, biases = [], []
        for i, (n, m) in enumerate(config.layer_shapes()):
            if i == 0:
                bound = 1.0 / m
            else:
                bound = np.sqrt(6.0 / m) / config.omega_hidden
            weights.append(rng.uniform(-bound, bound, size=(n, m)))
            bb = np.sqrt(1.0 / m)
            biases.append(rng.uniform(-bb, bb, size=n))
        return cls(config, weights, biases)

    @classmethod
    def zeros(cls, config: SirenConfig) -> "SirenNetwork":
        shapes = config.layer_shapes()
        return cls(config, [np.zeros(s) for s in shapes], [np.zeros(s[0]) for s in shapes])

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        """Weights then biases, as live views usable by the optimizer."""
        return self.weights + self.biases

    def parameter_names(self) -> list[str]:
        n = self.num_layers
        return [f"W{i}" for i in range(n)] + [f"b{i}" for i in range(n)]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "SirenNetwork":
        return SirenNetwork(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _token(self) -> tuple:
        return (id(self),) + tuple(id(p) for p in self.parameters())

    def forward(self, coords) -> tuple[np.ndarray, ForwardCache]:
        """Evaluate at ``coords`` (``in_dim x K``). Returns ``(out_dim x K, cache)``."""
        x = np.asarray(coords, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.config.in_dim:
            raise ShapeError(f"coordinates must be {self.config.in_dim} x K, got {x.shape}")
        inputs, pres = [], []
        last = self.num_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(x)
            if i == last:
                x = affine_forward(w, b, x)
            else:
                z, x = affine_sine_forward(w, b, x, self.config.omega(i))
                pres.append(z)
        return x, ForwardCache(inputs, pres, self._token())

    def __call__(self, coords) -> np.ndarray:
        return self.forward(coords)[0]

    def backward(self, cache: ForwardCache, upstream) -> GradientSet:
        """Parameter gradients given ``dL/d(outputs)``."""
        if cache.token != self._token() or len(cache.inputs) != self.num_layers:
            raise UsageError("cache was not produced by this network's forward pass")
        k = cache.inputs[0].shape[1]
        delta = np.asarray(upstream, dtype=np.float64)
        if delta.shape != (self.config.out_dim, k):
            raise ShapeError(f"upstream must be {(self.config.out_dim, k)}, got {delta.shape}")
        n = self.num_layers
        gw: list = [None] * n
        gb: list = [None] * n
        gw[n - 1], gb[n - 1], delta = affine_backward(delta, self.weights[-1], cache.inputs[-1])
        for i in range(n - 2, -1, -1):
            gw[i], gb[i], delta = affine_sine_backward(
                delta, cache.pre_activations[i], self.weights[i], cache.inputs[i], self.config.omega(i), need_input_grad=i > 0
            )
        return GradientSet(gw, gb)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        c = self.config
        head = CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION])
        head += _HEADER.pack(c.in_dim, c.out_dim, c.hidden_width, c.num_layers, c.omega_first, c.omega_hidden, c.seed)
        body = b"".join(
            w.astype("<f8").tobytes(order="C") + b.astype("<f8").tobytes() for w, b in zip(self.weights, self.biases)
        )
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "SirenNetwork":
        if data[:4] != CHECKPOINT_MAGIC:
            raise FormatError(f"not a checkpoint: magic bytes {data[:4]!r}")
        if len(data) < 5 + _HEADER.size:
            raise FormatError("checkpoint header is truncated")
        if data[4] != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {data[4]}")
        fields = _HEADER.unpack_from(data, 5)
        config = SirenConfig(*fields)
        try:
            config.validate()
        except ConfigError as exc:
            raise FormatError(f"checkpoint holds an invalid config: {exc}") from exc
        offset = 5 + _HEADER.size
        expected = offset + 8 * config.parameter_count()
        if len(data) != expected:
            raise FormatError(f"checkpoint should be {expected} bytes, found {len(data)}")
        weights, biases = [], []
        for n, m in config.layer_shapes():
            weights.append(np.frombuffer(data, "<f8", n * m, offset).reshape(n, m).astype(np.float64))
            offset += 8 * n * m
            biases.append(np.frombuffer(data, "<f8", n, offset).astype(np.float64))
            offset += 8 * n
        return cls(config, weights, biases)

    @classmethod
    def load(cls, path) -> "SirenNetwork":
        return cls.from_bytes(Path(path).read_bytes())

    def config_dict(self) -> dict:
        return asdict(self.config)


def siren_init(config: SirenConfig) -> SirenNetwork:
    return SirenNetwork.init(config)
