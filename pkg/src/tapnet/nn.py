"""Embedding networks built from a handful of differentiable layers."""

from __future__ import annotations

import json
import math

import numpy as np

from .autograd import Tensor, conv2d, max_pool2d, no_grad
from .errors import ConfigError, NumericError, ShapeError


def _glorot(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Tensor(_glorot(rng, (n_in, n_out), n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ShapeError(f"dense layer expects (B, {self.W.shape[0]}), got {x.shape}")
        return x @ self.W + self.b

    def params(self):
        return {"W": self.W, "b": self.b}


class Conv2d:
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, padding: int = 1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        k2 = kernel * kernel
        self.padding = padding
        self.W = Tensor(_glorot(rng, (c_out, c_in, kernel, kernel), c_in * k2, c_out * k2), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.W, self.b, padding=self.padding)

    def params(self):
        return {"W": self.W, "b": self.b}


class ReLU:
    def __call__(self, x: Tensor) -> Tensor:
        return x.relu()

    def params(self):
        return {}


class MaxPool2d:
    def __init__(self, size: int = 2):
        self.size = size

    def __call__(self, x: Tensor) -> Tensor:
        return max_pool2d(x, self.size)

    def params(self):
        return {}


class Flatten:
    def __call__(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)

    def params(self):
        return {}


class EmbeddingNetwork:
    """Sequential stack mapping a batch of samples to (B, L) feature rows.

    ``descriptor`` is the JSON-able recipe that rebuilds the same
    architecture (see :func:`build_network`); it is stored in checkpoints.
    """

    def __init__(self, layers, input_shape, descriptor: dict):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.descriptor = descriptor
        with no_grad():
            probe = self(np.zeros((1,) + self.input_shape))
        self.output_dim = probe.shape[1]

    def __call__(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects (B, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        if x.shape[0] == 0:
            raise ShapeError("empty batch")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite activation after layer {i} ({type(layer).__name__})")
        return x

    def embed(self, batch) -> np.ndarray:
        """Forward pass without recording a graph."""
        with no_grad():
            return self(batch).data

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out[f"layer{i}.{name}"] = p
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    @property
    def arch(self) -> str:
        return json.dumps(self.descriptor, sort_keys=True, separators=(",", ":"))


def mlp(input_dim: int, hidden=(64, 64), output_dim: int = 64, seed: int = 0) -> EmbeddingNetwork:
    """Dense+ReLU hidden layers followed by a linear output layer of width ``output_dim``."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden]
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [Dense(a, b, rng), ReLU()]
    layers.append(Dense(sizes[-1], output_dim, rng))
    desc = {"kind": "mlp", "input_dim": input_dim, "hidden": list(hidden), "output_dim": output_dim}
    return EmbeddingNetwork(layers, (input_dim,), desc)


def conv4(in_shape=(1, 28, 28), channels=(64, 64, 64, 64), seed: int = 0) -> EmbeddingNetwork:
    """Blocks of 3x3 conv, ReLU and 2x2 max-pool, then flatten."""
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_shape[0]
    for c_out in channels:
        layers += [Conv2d(c_in, c_out, 3, 1, rng), ReLU(), MaxPool2d(2)]
        c_in = c_out
    layers.append(Flatten())
    desc = {"kind": "conv4", "in_shape": list(in_shape), "channels": list(channels)}
    return EmbeddingNetwork(layers, tuple(in_shape), desc)


def build_network(descriptor, seed: int = 0) -> EmbeddingNetwork:
    if isinstance(descriptor, str):
        descriptor = json.loads(descriptor)
    kind = descriptor.get("kind")
    if kind == "mlp":
        return mlp(descriptor["input_dim"], tuple(descriptor["hidden"]), descriptor["output_dim"], seed)
    if kind == "conv4":
        return conv4(tuple(descriptor["in_shape"]), tuple(descriptor["channels"]), seed)
    raise ConfigError(f"unknown architecture kind {kind!r}")
