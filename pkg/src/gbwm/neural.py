"""Small dense ReLU networks with hand-written backprop and Adam.

Batched convention: inputs are (B, n_in), weights are (n_in, n_out), so a
layer computes ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "gbwm-mlp/1"


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = field(default=0, compare=False)  # bumped on every parameter change

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} do not match")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input size {W.shape[0]} != previous output")
        # all parameters live in one contiguous vector; weights/biases are views
        self.flat = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in self.params()])
        views, pos = [], 0
        for p in self.params():
            views.append(self.flat[pos : pos + p.size].reshape(p.shape))
            pos += p.size
        self.weights = views[0::2]
        self.biases = views[1::2]

    @property
    def topology(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        if np.shape(flat) != self.flat.shape:
            raise ValueError("flat parameter vector has the wrong length")
        self.flat[...] = flat
        self.version += 1


def param_count(topology) -> int:
    return sum(a * b + b for a, b in zip(topology[:-1], topology[1:]))


def init_mlp(topology, rng: np.random.Generator, out_scale: float = 1.0) -> Mlp:
    """Glorot-uniform weights, zero biases; ``out_scale`` shrinks the last layer."""
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(topology[:-1], topology[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if k == len(topology) - 2:
            W *= out_scale
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


@dataclass
class Cache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations of hidden layers
    owner: tuple = ()


def forward(net: Mlp, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[1]} != network input {net.weights[0].shape[0]}")
    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W + b
        if k < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    cache = Cache(inputs, pre, owner=(id(net), net.version))
    return (h[0] if squeeze else h), cache


def backward(net: Mlp, cache: Cache, grad_out) -> list[np.ndarray]:
    """Gradients of sum(grad_out * output) in ``net.params()`` order."""
    if cache.owner != (id(net), net.version):
        raise ValueError("stale forward cache")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = cache.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k:
            g = (g @ net.weights[k].T) * (cache.pre[k - 1] > 0)
    return grads


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def step(self, param: np.ndarray, grad: np.ndarray, lr: float | None = None) -> None:
        """In-place update of the flat vector ``param`` to descend along ``grad``."""
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        param -= (lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)


def flatten(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def sgd_adam_step(net: Mlp, grads, state: Adam, lr: float | None = None) -> Mlp:
    flat = grads if isinstance(grads, np.ndarray) else flatten(grads)
    if flat.shape != net.flat.shape:
        raise ValueError("gradients are not shape-congruent with the network")
    state.step(net.flat, flat, lr)
    net.version += 1
    return net


# -- checkpoints ------------------------------------------------------------
#
# JSON object:
#   {"format": "gbwm-mlp/1", "topology": [2, 6, 6, k], "activation": "relu",
#    "layers": [{"weight": [[...] * n_in], "bias": [...]}, ...]}
# Weights are stored as nested lists of shape (n_in, n_out). Python's float
# repr is shortest-round-trip, so save -> load is bit-exact.


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "topology": net.topology,
        "activation": "relu",
        "layers": [{"weight": W.tolist(), "bias": b.tolist()} for W, b in zip(net.weights, net.biases)],
    }


def mlp_from_dict(d: dict) -> Mlp:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {d.get('format')!r}")
    net = Mlp(
        [np.array(layer["weight"], dtype=np.float64) for layer in d["layers"]],
        [np.array(layer["bias"], dtype=np.float64) for layer in d["layers"]],
    )
    if net.topology != list(d["topology"]):
        raise ValueError("checkpoint topology header does not match its layers")
    return net


def save_mlp(net: Mlp, path) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(net)))


def load_mlp(path) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))
