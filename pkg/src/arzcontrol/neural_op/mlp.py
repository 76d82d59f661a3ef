"""Plain numpy multilayer perceptron with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "linear")


@dataclass
class Mlp:
    """Fully connected network; hidden layers use ``activation``, the output is linear.

    weights[l] has shape (widths[l], widths[l+1]) so that a batch X of shape
    (N, widths[0]) maps as X @ W + b.
    """

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer transition")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[l], self.widths[l + 1]) or b.shape != (self.widths[l + 1],):
                raise ValueError(f"layer {l}: shapes {W.shape}, {b.shape} do not match widths")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, activation: str = "tanh") -> "Mlp":
        """Glorot-normal weights, zero biases."""
        widths = [int(w) for w in widths]
        weights = [rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b)) for a, b in zip(widths[:-1], widths[1:])]
        biases = [np.zeros(b) for b in widths[1:]]
        return cls(widths, weights, biases, activation)

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), [W.copy() for W in self.weights],
                   [b.copy() for b in self.biases], self.activation)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else z


def _check_input(m: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != m.widths[0]:
        raise ValueError(f"input of shape {x.shape} does not match input width {m.widths[0]}")
    return x2


def mlp_forward(m: Mlp, x, cache: ForwardCache | None = None) -> np.ndarray:
    """Evaluate the network on a single vector or a batch (rows)."""
    x = np.asarray(x, dtype=float)
    h = _check_input(m, x)
    last = len(m.weights) - 1
    for l, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W + b
        if cache is not None:
            cache.inputs.append(h)
            cache.pre.append(z)
        h = z if l == last else _act(z, m.activation)
    return h[0] if x.ndim == 1 else h


def mlp_gradients(m: Mlp, x, upstream, cache: ForwardCache | None = None):
    """Reverse-mode gradients of sum(output * upstream) w.r.t. all parameters.

    Returns (grads, grad_input) where grads follows the order of ``m.params``.
    Pass the cache filled by a previous ``mlp_forward`` call on the same x to
    skip the recomputation.
    """
    x = np.asarray(x, dtype=float)
    x2 = _check_input(m, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x2.shape[0], m.widths[-1]):
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {(x2.shape[0], m.widths[-1])}")
    if cache is None:
        cache = ForwardCache()
        mlp_forward(m, x2, cache)
    grads: list[np.ndarray] = [None] * (2 * len(m.weights))  # type: ignore[list-item]
    last = len(m.weights) - 1
    for l in range(last, -1, -1):
        if l != last and m.activation == "tanh":
            g = g * (1.0 - np.tanh(cache.pre[l]) ** 2)
        grads[2 * l] = cache.inputs[l].T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ m.weights[l].T
    return grads, (g[0] if x.ndim == 1 else g)
