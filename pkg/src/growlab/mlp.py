"""Flat-parameter tanh MLP with a hand-written backward pass.

Parameters are packed as ``W0, b0, W1, b1, ...`` where ``Wk`` has shape
``(fan_in, fan_out)`` in row-major order. The forward pass uses
``einsum`` rather than BLAS matmul; einsum's per-row result does not depend
on the batch size, so a log-probability computed for one state during a
rollout is bit-identical to the same quantity recomputed inside a batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class Layout:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"layout dimensions must be positive, got {dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[k], d[k + 1]) for k in range(len(d) - 1)]

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "output_dim": self.output_dim}


def unpack(theta: np.ndarray, layout: Layout) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into ``theta``."""
    if theta.shape != (layout.n_params,):
        raise UsageError(f"theta has shape {theta.shape}, layout expects ({layout.n_params},)")
    out = []
    pos = 0
    for i, o in layout.shapes:
        W = theta[pos:pos + i * o].reshape(i, o)
        pos += i * o
        b = theta[pos:pos + o]
        pos += o
        out.append((W, b))
    return out


def init_theta(rng: np.random.Generator, layout: Layout) -> np.ndarray:
    """Zero biases, weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    parts = []
    for i, o in layout.shapes:
        bound = 1.0 / np.sqrt(i)
        parts.append(rng.uniform(-bound, bound, size=i * o))
        parts.append(np.zeros(o))
    return np.concatenate(parts)


def forward(theta: np.ndarray, layout: Layout, X: np.ndarray) -> np.ndarray:
    """Output pre-activations for a batch ``X`` of shape ``(n, input_dim)``."""
    h = _check_input(X, layout)
    layers = unpack(theta, layout)
    for k, (W, b) in enumerate(layers):
        h = np.einsum("ni,io->no", h, W) + b
        if k < len(layers) - 1:
            h = np.tanh(h)
    return h


def forward_with_cache(theta: np.ndarray, layout: Layout, X: np.ndarray):
    h = _check_input(X, layout)
    layers = unpack(theta, layout)
    acts = [h]
    for k, (W, b) in enumerate(layers):
        h = np.einsum("ni,io->no", h, W) + b
        if k < len(layers) - 1:
            h = np.tanh(h)
            acts.append(h)
    return h, acts


def backward(theta: np.ndarray, layout: Layout, acts: Sequence[np.ndarray], d_out: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(d_out * output)`` with respect to ``theta``.

    The batch dimension is contracted inside each layer's matmul, so the
    accumulation order over samples is fixed by the batch order.
    """
    layers = unpack(theta, layout)
    grads: list[np.ndarray] = [None] * (2 * len(layers))  # type: ignore[list-item]
    delta = d_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a_in = acts[k]
        grads[2 * k] = (a_in.T @ delta).ravel()
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ W.T) * (1.0 - a_in * a_in)
    return np.concatenate(grads)


def _check_input(X: np.ndarray, layout: Layout) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layout.input_dim:
        raise UsageError(f"expected features of shape (n, {layout.input_dim}), got {X.shape}")
    return X
