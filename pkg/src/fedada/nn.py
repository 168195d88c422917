"""Minimal dense-network kernel with manual backpropagation.

Everything the per-group feature extractors, domain discriminators and
scalar aggregators need: fully-connected layers with leaky-ReLU / sigmoid /
identity activations, categorical embedding tables, a gradient-reversal
backward, plain SGD and binary cross entropy.  Layouts are row-major
batches: inputs are ``(batch, in_dim)`` and weights ``(in_dim, out_dim)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

LEAKY_RELU_SLOPE = 0.01
_CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")


class NnError(Exception):
    pass


def leaky_relu(x):
    return np.where(x >= 0, x, LEAKY_RELU_SLOPE * x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activation(name, pre):
    if name == "leaky_relu":
        return leaky_relu(pre)
    if name == "sigmoid":
        return sigmoid(pre)
    if name == "identity":
        return pre
    raise NnError(f"unknown activation {name!r}")


def _activation_grad(name, pre, post):
    if name == "leaky_relu":
        return np.where(pre >= 0, 1.0, LEAKY_RELU_SLOPE)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "identity":
        return np.ones_like(pre)
    raise NnError(f"unknown activation {name!r}")


def he_uniform(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(in_dim, out_dim))


@dataclass
class Dense:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise NnError(f"unknown activation {self.activation!r}")


@dataclass
class Tape:
    """Per-call forward record consumed exactly once by ``backward``."""

    net_id: int
    inputs: list = field(default_factory=list)  # per-layer input
    preacts: list = field(default_factory=list)  # per-layer pre-activation
    outputs: list = field(default_factory=list)  # per-layer post-activation


def parse_arch(text: str) -> list[tuple[int, int]]:
    """Parse architecture strings like ``"FC(28->56)-FC(56->28)"``.

    Both ``->`` and a unicode arrow are accepted.
    """
    dims = []
    for match in re.finditer(r"FC\(\s*(\d+)\s*(?:->|→)\s*(\d+)\s*\)", text):
        dims.append((int(match.group(1)), int(match.group(2))))
    if not dims:
        raise NnError(f"could not parse architecture string {text!r}")
    for (_, out_prev), (in_next, _) in zip(dims, dims[1:]):
        if out_prev != in_next:
            raise NnError(f"layer dimensions do not chain in {text!r}")
    return dims


class DenseNet:
    """A stack of fully-connected layers trained by manual backprop."""

    def __init__(self, layers: list[Dense]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise NnError("consecutive layer dimensions do not chain")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def create(
        cls,
        dims: list[tuple[int, int]] | str,
        rng: np.random.Generator,
        hidden_activation: str = "leaky_relu",
        final_activation: str = "leaky_relu",
    ) -> "DenseNet":
        if isinstance(dims, str):
            dims = parse_arch(dims)
        layers = []
        for i, (d_in, d_out) in enumerate(dims):
            act = final_activation if i == len(dims) - 1 else hidden_activation
            layers.append(Dense(he_uniform(rng, d_in, d_out), np.zeros(d_out), act))
        return cls(layers)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise NnError(f"input dim {x.shape[1]} != expected {self.in_dim}")
        tape = Tape(net_id=id(self))
        out = x
        for layer in self.layers:
            pre = out @ layer.weight + layer.bias
            post = _activation(layer.activation, pre)
            tape.inputs.append(out)
            tape.preacts.append(pre)
            tape.outputs.append(post)
            out = post
        return out, tape

    def backward(self, tape: Tape, upstream: np.ndarray):
        """Return (per-layer (dW, db) list, gradient w.r.t. the input)."""
        if tape.net_id != id(self) or len(tape.inputs) != len(self.layers):
            raise NnError("tape does not match this network")
        upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            dpre = upstream * _activation_grad(
                layer.activation, tape.preacts[i], tape.outputs[i]
            )
            grads[i] = (tape.inputs[i].T @ dpre, dpre.sum(axis=0))
            upstream = dpre @ layer.weight.T
        return grads, upstream

    def apply_gradients(self, grads, eta: float) -> None:
        if len(grads) != len(self.layers):
            raise NnError("gradient list does not match layer count")
        for layer, (dw, db) in zip(self.layers, grads):
            if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
                raise NnError("gradient shape mismatch")
            layer.weight -= eta * dw
            layer.bias -= eta * db
        self.check_finite()

    def check_finite(self) -> None:
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise NnError("non-finite parameters after update")

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def to_dict(self) -> dict:
        return {
            "version": _CHECKPOINT_VERSION,
            "layers": [
                {
                    "shape": list(l.weight.shape),
                    "activation": l.activation,
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DenseNet":
        if obj.get("version") != _CHECKPOINT_VERSION:
            raise NnError(f"unsupported checkpoint version {obj.get('version')!r}")
        layers = []
        for spec in obj["layers"]:
            shape = tuple(spec["shape"])
            layers.append(
                Dense(
                    np.asarray(spec["weight"], dtype=np.float64).reshape(shape),
                    np.asarray(spec["bias"], dtype=np.float64),
                    spec["activation"],
                )
            )
        return cls(layers)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DenseNet":
        return cls.from_dict(json.loads(text))


class EmbeddingTable:
    """Dense embeddings for categorical columns, one matrix per column."""

    def __init__(self, tables: dict[str, np.ndarray]):
        self.tables = tables

    @classmethod
    def create(
        cls,
        vocab_sizes: dict[str, int],
        rng: np.random.Generator,
        dims: dict[str, int] | None = None,
    ) -> "EmbeddingTable":
        dims = dims or {}
        tables = {}
        for col, vocab in vocab_sizes.items():
            dim = dims.get(col, default_embedding_dim(vocab))
            tables[col] = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab, dim))
        return cls(tables)

    def dim(self, col: str) -> int:
        return self.tables[col].shape[1]

    def lookup(self, col: str, indices: np.ndarray) -> np.ndarray:
        table = self.tables[col]
        indices = np.asarray(indices)
        if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
            raise NnError(f"embedding index out of range for column {col!r}")
        return table[indices]

    def backward(self, col: str, indices: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the full table (rows not looked up stay zero)."""
        grad = np.zeros_like(self.tables[col])
        np.add.at(grad, np.asarray(indices), upstream)
        return grad

    def apply_gradient(self, col: str, grad: np.ndarray, eta: float) -> None:
        self.tables[col] -= eta * grad

    def to_dict(self) -> dict:
        return {col: table.tolist() for col, table in self.tables.items()}

    @classmethod
    def from_dict(cls, obj: dict) -> "EmbeddingTable":
        return cls({col: np.asarray(table, dtype=np.float64) for col, table in obj.items()})


def default_embedding_dim(vocab: int) -> int:
    return min(8, max(1, (vocab + 1) // 2))


def grl_backward(upstream: np.ndarray, lam: float) -> np.ndarray:
    """Gradient-reversal backward pass: forward is identity, backward is -lam."""
    return -lam * np.asarray(upstream)


def sgd_step(params: np.ndarray, grads: np.ndarray, eta: float) -> np.ndarray:
    """One plain SGD update, p <- p - eta * g."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise NnError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    return params - eta * grads


def bce_loss(p_hat, y):
    """Binary cross entropy and its gradient w.r.t. the logit.

    Returns the mean loss over the batch and the per-element gradient
    ``p_hat - y`` of the per-sample loss w.r.t. the logit.
    """
    p_hat = np.clip(np.asarray(p_hat, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p_hat) + (1.0 - y) * np.log(1.0 - p_hat))
    return float(np.mean(loss)), p_hat - y
