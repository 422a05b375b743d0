"""Dense ReLU network Q(s, .; w) over a flat float64 parameter vector.

Parameters are laid out layer by layer; within a layer the weight matrix of
shape ``(fan_out, fan_in)`` comes first in row-major order, then the bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qnrl.errors import InvalidInputError


@dataclass(frozen=True)
class NetworkSpec:
    """Layer sizes from input to output; hidden layers use ReLU."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(v) for v in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise InvalidInputError("a network needs at least an input and an output layer")
        if any(v < 1 for v in sizes):
            raise InvalidInputError(f"layer sizes must be positive, got {sizes}")
        if self.activation != "relu":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1]


def num_params(spec: NetworkSpec) -> int:
    sizes = spec.layer_sizes
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


def _layer_slices(spec: NetworkSpec):
    offset = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w_end = offset + fan_in * fan_out
        b_end = w_end + fan_out
        yield fan_in, fan_out, slice(offset, w_end), slice(w_end, b_end)
        offset = b_end


def unpack(spec: NetworkSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into ``w`` for every layer; no copies are made."""
    w = check_params(spec, w)
    return [(w[ws].reshape(fan_out, fan_in), w[bs])
            for fan_in, fan_out, ws, bs in _layer_slices(spec)]


def check_params(spec: NetworkSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != num_params(spec):
        raise InvalidInputError(
            f"parameter vector has shape {w.shape}, expected ({num_params(spec)},)")
    return w


def init_weights(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    w = np.zeros(num_params(spec))
    for fan_in, fan_out, ws, _ in _layer_slices(spec):
        bound = 1.0 / np.sqrt(fan_in)
        w[ws] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return w


def _check_features(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (spec.n_inputs,):
        raise InvalidInputError(
            f"features have shape {x.shape}, expected trailing dimension {spec.n_inputs}")
    return x


def forward(spec: NetworkSpec, w, features) -> np.ndarray:
    """Q-values for one feature vector, or a ``(batch, n_inputs)`` array."""
    x = _check_features(spec, features)
    layers = unpack(spec, w)
    h = x
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def _forward_trace(layers, x):
    # activations[i] is the input to layer i
    activations = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        activations.append(h)
    return activations


def _backward(spec, layers, activations, delta) -> np.ndarray:
    """Accumulate sum over rows of delta-weighted parameter gradients.

    ``delta`` has shape ``(batch, n_actions)`` and holds dLoss/dQ.
    """
    grad = np.empty(num_params(spec))
    slices = list(_layer_slices(spec))
    for i in range(len(layers) - 1, -1, -1):
        _, _, ws, bs = slices[i]
        h_prev = activations[i]
        grad[ws] = (delta.T @ h_prev).ravel()
        grad[bs] = delta.sum(axis=0)
        if i > 0:
            # ReLU derivative is 0 at exactly 0
            delta = (delta @ layers[i][0]) * (h_prev > 0.0)
    return grad


def grad_q(spec: NetworkSpec, w, features, action: int) -> np.ndarray:
    """Gradient of Q(s, action; w) with respect to every parameter."""
    x = _check_features(spec, features)
    if x.ndim != 1:
        raise InvalidInputError("grad_q takes a single feature vector")
    if not 0 <= action < spec.n_actions:
        raise InvalidInputError(f"action {action} out of range [0, {spec.n_actions})")
    layers = unpack(spec, w)
    activations = _forward_trace(layers, x[None, :])
    delta = np.zeros((1, spec.n_actions))
    delta[0, action] = 1.0
    return _backward(spec, layers, activations, delta)


def q_and_vjp(spec: NetworkSpec, w, features, actions: Sequence[int]):
    """Q(s_e, a_e) over a batch plus a closure mapping per-row weights c to
    sum_e c_e * grad_w Q(s_e, a_e; w).

    One forward pass is shared by every call of the closure.
    """
    x = _check_features(spec, features)
    if x.ndim != 2:
        raise InvalidInputError("q_and_vjp takes a (batch, n_inputs) array")
    actions = np.asarray(actions, dtype=np.intp)
    if actions.shape != (x.shape[0],):
        raise InvalidInputError("one action per feature row is required")
    if actions.size and (actions.min() < 0 or actions.max() >= spec.n_actions):
        raise InvalidInputError("action index out of range")
    layers = unpack(spec, w)
    activations = _forward_trace(layers, x)
    rows = np.arange(x.shape[0])
    q = activations[-1][rows, actions]

    def vjp(weights) -> np.ndarray:
        delta = np.zeros((x.shape[0], spec.n_actions))
        delta[rows, actions] = weights
        return _backward(spec, layers, activations, delta)

    return q, vjp
