"""Small feed-forward networks on a flat parameter vector, with hand-written backprop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod

CHECKPOINT_VERSION = 1


class TrainingError(ArithmeticError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h * h
    return np.where(z > 0, 1.0, h + 1.0)


@dataclass
class Network:
    """Affine layers with a shared hidden activation and identity output."""

    sizes: tuple[int, ...]
    activation: str = "tanh"
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("network needs an input and an output layer")
        if self.activation not in ("tanh", "elu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def layers(self, params: np.ndarray | None = None):
        """(W, b) views into the flat vector; W has shape (fan_in, fan_out)."""
        p = self.params if params is None else params
        out, i = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = p[i:i + a * b].reshape(a, b)
            i += a * b
            out.append((W, p[i:i + b]))
            i += b
        return out

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input must have shape (B, {self.sizes[0]}), got {x.shape}")
        cache = [x]
        h = x
        layers = self.layers()
        for li, (W, b) in enumerate(layers):
            z = h @ W + b
            if li < len(layers) - 1:
                h = _act(self.activation, z)
                cache.append((z, h))
            else:
                h = z
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backprop(self, cache, upstream: np.ndarray):
        """Gradient of sum(outputs * upstream) w.r.t. parameters and inputs."""
        upstream = np.asarray(upstream, dtype=float)
        x = cache[0]
        if upstream.shape != (x.shape[0], self.sizes[-1]):
            raise ValueError(f"upstream must have shape ({x.shape[0]}, {self.sizes[-1]})")
        layers = self.layers()
        grads = []
        g = upstream
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            h_in = x if li == 0 else cache[li][1]
            grads.append((g.sum(axis=0), h_in.T @ g))
            g = g @ W.T
            if li > 0:
                z, h = cache[li]
                g = g * _act_grad(self.activation, z, h)
        flat = []
        for gb, gW in reversed(grads):
            flat.append(gW.ravel())
            flat.append(gb)
        return np.concatenate(flat), g

    def copy(self) -> "Network":
        return Network(self.sizes, self.activation, self.params.copy())


def init(sizes: Sequence[int], activation: str = "tanh", seed: int = 0,
         component: str = "init") -> Network:
    """Xavier-uniform weights, zero biases, deterministic in ``seed``."""
    net = Network(tuple(sizes), activation)
    gen = rngmod.generator(seed, component)
    for W, b in net.layers():
        bound = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = gen.uniform(-bound, bound, W.shape)
        b[...] = 0.0
    return net


class Optimizer:
    """RMSprop or Nadam over a flat parameter vector."""

    def __init__(self, kind: str, n_params: int, learning_rate: float = 1e-3,
                 rho: float = 0.9, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("rmsprop", "nadam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = learning_rate
        self.rho, self.beta1, self.beta2, self.eps = rho, beta1, beta2, eps
        self.v = np.zeros(n_params)
        self.m = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, ascend: bool = False) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        if grad.shape != self.v.shape:
            raise ValueError("gradient shape does not match optimizer state")
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient")
        sign = 1.0 if ascend else -1.0
        if self.kind == "rmsprop":
            self.v = self.rho * self.v + (1 - self.rho) * grad * grad
            return params + sign * self.lr * grad / np.sqrt(self.v + self.eps)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = b1 * self.m / (1 - b1 ** (self.t + 1)) + (1 - b1) * grad / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        return params + sign * self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def save_checkpoint(net: Network, path, extra: dict | None = None) -> None:
    doc = {
        "format": "tvo-network",
        "version": CHECKPOINT_VERSION,
        "sizes": list(net.sizes),
        "activation": net.activation,
        "params": [float(x) for x in net.params],
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[Network, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "tvo-network" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a supported network checkpoint")
    net = Network(tuple(doc["sizes"]), doc["activation"], np.array(doc["params"], dtype=float))
    return net, doc.get("extra", {})
