"""Small dense feed-forward networks with hand-written backpropagation.

Every network in the package (classifier MLPs, VAE encoder/decoder, noise
predictor, perturbation net, MI critic) is a :class:`DenseNet`. Inputs are
row-major batches ``(n, in_dim)``; a 1-D input is treated as a batch of one
and the output is squeezed back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity", "sigmoid", "tanh")


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "identity":
        return z
    if tag == "sigmoid":
        return sigmoid(z)
    if tag == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {tag!r}")


def _act_grad(tag: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0).astype(np.float64)
    if tag == "identity":
        return np.ones_like(z)
    if tag == "sigmoid":
        return out * (1.0 - out)
    if tag == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class Layer:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)
    act: str = "identity"

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")


@dataclass
class Cache:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    squeeze: bool = False


class DenseNet:
    """Chain of affine layers, each followed by an activation."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ShapeError(
                    f"layer dims do not chain: {prev.W.shape} -> {nxt.W.shape}"
                )
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden: str = "relu",
        out: str = "identity",
        out_scale: float = 1.0,
    ) -> "DenseNet":
        """He/Glorot-style initialization for the given layer sizes."""
        layers = []
        n = len(sizes) - 1
        for i in range(n):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            act = out if i == n - 1 else hidden
            gain = 2.0 if act == "relu" else 1.0
            W = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
            if i == n - 1:
                W *= out_scale
            layers.append(Layer(W, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...); views, not copies."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.act) for l in self.layers])

    def to_arrays(self, prefix: str = "") -> dict:
        out = {f"{prefix}acts": np.array([ACTIVATIONS.index(l.act) for l in self.layers])}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}W{i}"] = layer.W
            out[f"{prefix}b{i}"] = layer.b
        return out

    @classmethod
    def from_arrays(cls, arrs: dict, prefix: str = "") -> "DenseNet":
        acts = arrs[f"{prefix}acts"]
        return cls([
            Layer(np.array(arrs[f"{prefix}W{i}"], dtype=np.float64),
                  np.array(arrs[f"{prefix}b{i}"], dtype=np.float64),
                  ACTIVATIONS[int(code)])
            for i, code in enumerate(acts)
        ])

    def _check(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected input dim {self.in_dim}, got shape {x.shape}")
        return x, squeeze

    def __call__(self, x) -> np.ndarray:
        x, squeeze = self._check(x)
        h = x
        for layer in self.layers:
            h = _act(layer.act, h @ layer.W + layer.b)
        return h[0] if squeeze else h

    def forward_cache(self, x) -> tuple[np.ndarray, Cache]:
        x, squeeze = self._check(x)
        cache = Cache(squeeze=squeeze)
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.W + layer.b
            h = _act(layer.act, z)
            cache.pre.append(z)
            cache.post.append(h)
        return (h[0] if squeeze else h), cache

    def backward(self, cache: Cache, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given dL/d(output).

        Returns ``(param_grads, grad_input)`` with ``param_grads`` aligned to
        :meth:`params`.
        """
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        grads: list[np.ndarray] = []
        for layer, h_in, z, h in zip(
            reversed(self.layers),
            reversed(cache.inputs),
            reversed(cache.pre),
            reversed(cache.post),
        ):
            gz = g * _act_grad(layer.act, z, h)
            grads.append(gz.sum(axis=0))
            grads.append(h_in.T @ gz)
            g = gz @ layer.W.T
        grads.reverse()
        return grads, (g[0] if cache.squeeze else g)

    def kink_signs(self, x) -> np.ndarray:
        """Sign pattern of every relu pre-activation; used to detect kink crossings."""
        _, cache = self.forward_cache(x)
        return np.concatenate(
            [
                (z > 0).ravel()
                for z, layer in zip(cache.pre, self.layers)
                if layer.act == "relu"
            ]
            or [np.zeros(0, dtype=bool)]
        )


def forward(net: DenseNet, x) -> np.ndarray:
    return net(x)


def grad(
    net: DenseNet, loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]], x
) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``loss_fn`` on ``net(x)`` and backpropagate.

    ``loss_fn`` maps the network output to ``(loss, dloss/doutput)``.
    """
    out, cache = net.forward_cache(x)
    loss, g_out = loss_fn(out)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads, _ = net.backward(cache, g_out)
    return float(loss), grads


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)
