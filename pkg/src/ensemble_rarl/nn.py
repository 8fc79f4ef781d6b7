"""Small float64 feed-forward networks with hand-written backprop and Adam."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError

ACTIVATIONS = ("relu", "leaky_relu", "elu", "identity")
HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "elu")
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0


def activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if tag == "elu":
        return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if tag == "identity":
        return z
    raise ValueError(f"unknown activation {tag!r}")


def activation_grad(tag: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``z`` (0 at the ReLU kink)."""
    if tag == "relu":
        return (z > 0).astype(z.dtype)
    if tag == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if tag == "elu":
        return np.where(z > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(z, 0.0)))
    if tag == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {tag!r}")


class Mlp:
    """Fully connected network ``y = W_L f(... f(W_1 x + b_1) ...) + b_L``.

    Weights are stored as ``(out, in)`` matrices. ``activations`` has one tag per
    layer; the last one is normally ``"identity"``. Inputs may be a single vector
    or a ``(batch, in)`` matrix.
    """

    def __init__(
        self,
        layer_dims: Sequence[int],
        activations: Sequence[str] | None = None,
        rng: np.random.Generator | None = None,
        param_noise_std: float = 0.0,
    ):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d <= 0 for d in layer_dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive sizes, got {layer_dims}")
        n_layers = len(layer_dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        activations = list(activations)
        if len(activations) != n_layers:
            raise ShapeError(f"need {n_layers} activation tags, got {len(activations)}")
        for tag in activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        self.layer_dims = layer_dims
        self.activations = activations

        rng = rng if rng is not None else np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            if param_noise_std > 0:
                w += rng.normal(0.0, param_noise_std, size=w.shape)
                b += rng.normal(0.0, param_noise_std, size=b.shape)
            self.weights.append(w)
            self.biases.append(b)
        self._cache: tuple[list[np.ndarray], list[np.ndarray], bool] | None = None

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected input width {self.in_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        return x, single

    def _run(self, x: np.ndarray, keep: bool):
        inputs, pre = [], []
        h = x
        for w, b, tag in zip(self.weights, self.biases, self.activations):
            z = h @ w.T + b
            if keep:
                inputs.append(h)
                pre.append(z)
            h = activate(tag, z)
        return h, inputs, pre

    def forward(self, x) -> np.ndarray:
        """Forward pass that caches layer inputs and pre-activations for ``backward``."""
        x, single = self._check_input(x)
        y, inputs, pre = self._run(x, keep=True)
        self._cache = (inputs, pre, single)
        return y[0] if single else y

    def predict(self, x) -> np.ndarray:
        """Forward pass without caching; safe for concurrent readers."""
        x, single = self._check_input(x)
        y, _, _ = self._run(x, keep=False)
        return y[0] if single else y

    __call__ = predict

    def backward(self, grad_out, param_grads: bool = True) -> tuple[list[np.ndarray] | None, np.ndarray]:
        """Backpropagate ``dL/dy`` through the last cached forward pass.

        Returns the parameter gradients (same order as :meth:`params`, or None
        when ``param_grads`` is False) and ``dL/dx`` shaped like the cached input.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        inputs, pre, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != (inputs[0].shape[0], self.out_dim):
            raise ShapeError(f"output gradient shape {g.shape} does not match forward output")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in reversed(range(len(self.weights))):
            tag = self.activations[i]
            dz = g if tag == "identity" else g * activation_grad(tag, pre[i])
            if param_grads:
                grads[2 * i] = dz.T @ inputs[i]
                grads[2 * i + 1] = dz.sum(axis=0)
            g = dz @ self.weights[i]
        return (grads if param_grads else None), (g[0] if single else g)

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.layer_dims = list(self.layer_dims)
        other.activations = list(self.activations)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._cache = None
        return other

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        """Copy values into the existing arrays (keeps optimizer references valid)."""
        mine = self.params()
        if len(params) != len(mine):
            raise ShapeError("parameter count mismatch")
        for dst, src in zip(mine, params):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activations": list(self.activations),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        net = cls(data["layer_dims"], data["activations"], rng=np.random.default_rng(0))
        for w, flat in zip(net.weights, data["weights"]):
            w[...] = np.asarray(flat, dtype=np.float64).reshape(w.shape)
        for b, vals in zip(net.biases, data["biases"]):
            b[...] = np.asarray(vals, dtype=np.float64)
        return net


def save_mlp(net: Mlp, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(net.to_dict()))


def load_mlp(path) -> Mlp:
    return Mlp.from_dict(json.loads(Path(path).read_text()))


class Adam:
    """Adam with bias correction, updating the given arrays in place."""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("gradient count does not match parameter count")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if np.shape(g) != p.shape:
                raise ShapeError(f"gradient block {i} has shape {np.shape(g)}, expected {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter block {i}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p -= (self.lr / c1) * m / denom

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, t: int, arrays: Sequence[np.ndarray]) -> None:
        n = len(self.params)
        if len(arrays) != 2 * n:
            raise ShapeError("optimizer state size mismatch")
        self.t = int(t)
        for dst, src in zip(self.m + self.v, arrays):
            dst[...] = src
