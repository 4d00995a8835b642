"""Softmax policy over discrete actions with analytic score gradients."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mlp
from .errors import ConfigError, NumericError, UsageError
from .mlp import Layout
from .seeding import make_rng

CKPT_MAGIC = b"GROWCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class PolicyParams:
    """Immutable parameter snapshot. ``theta`` is a read-only array."""

    theta: np.ndarray
    layout: Layout
    version: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True)
        if theta.shape != (self.layout.n_params,):
            raise ConfigError(f"theta length {theta.size} != layout parameter count {self.layout.n_params}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("policy parameters contain non-finite entries")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @property
    def action_count(self) -> int:
        return self.layout.output_dim

    def replace(self, theta: np.ndarray) -> "PolicyParams":
        """New snapshot with ``theta`` and the version counter bumped."""
        return PolicyParams(theta, self.layout, self.version + 1)


@dataclass(frozen=True)
class ActionDistribution:
    probs: np.ndarray
    log_probs: np.ndarray = field(repr=False)


def make_layout(input_dim: int, hidden, action_count: int) -> Layout:
    return Layout(int(input_dim), tuple(hidden), int(action_count))


def init_params(seed: int, layout: Layout) -> PolicyParams:
    return PolicyParams(mlp.init_theta(make_rng("policy-init", seed), layout), layout)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_probs_batch(params: PolicyParams, X: np.ndarray) -> np.ndarray:
    """``(n, A)`` log-probabilities; per-row results do not depend on ``n``."""
    out = log_softmax(mlp.forward(params.theta, params.layout, X))
    if not np.all(np.isfinite(out)):
        raise NumericError("policy produced non-finite log-probabilities")
    return out


def forward(params: PolicyParams, features) -> ActionDistribution:
    lp = log_probs_batch(params, np.asarray(features, dtype=np.float64)[None, :])[0]
    return ActionDistribution(np.exp(lp), lp)


def log_prob(params: PolicyParams, features, action: int) -> float:
    _check_action(params, action)
    return float(forward(params, features).log_probs[action])


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw, cumulative order by ascending action index."""
    return inverse_cdf(dist.probs, rng.random())


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


def weighted_score(params: PolicyParams, X: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_n weights[n] * grad log pi(actions[n] | X[n])``."""
    logits, acts = mlp.forward_with_cache(params.theta, params.layout, X)
    probs = np.exp(log_softmax(logits))
    d = -probs
    rows = np.arange(len(actions))
    d[rows, actions] += 1.0
    d *= np.asarray(weights, dtype=np.float64)[:, None]
    g = mlp.backward(params.theta, params.layout, acts, d)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite policy gradient")
    return g


def grad_log_prob(params: PolicyParams, features, action: int) -> np.ndarray:
    _check_action(params, action)
    X = np.asarray(features, dtype=np.float64)[None, :]
    return weighted_score(params, X, np.array([action]), np.ones(1))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Worst coordinate of ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def central_difference(f, theta: np.ndarray, h: float) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for j in range(theta.size):
        old = theta[j]
        theta[j] = old + h
        fp = f(theta)
        theta[j] = old - h
        fm = f(theta)
        theta[j] = old
        g[j] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(params: PolicyParams, features, action: int, h: float = 1e-5) -> float:
    """Max relative error of :func:`grad_log_prob` against central differences."""
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    analytic = grad_log_prob(params, features, action)
    X = np.asarray(features, dtype=np.float64)[None, :]

    def f(theta):
        return log_softmax(mlp.forward(theta, params.layout, X))[0, action]

    return relative_error(analytic, central_difference(f, params.theta, h))


def _check_action(params: PolicyParams, action: int) -> None:
    if not 0 <= int(action) < params.action_count:
        raise UsageError(f"action {action} outside [0, {params.action_count})")


# -- checkpoints ---------------------------------------------------------------
#
# Binary layout (all little-endian):
#   8s  magic "GROWCKPT"
#   u32 format version
#   u32 input_dim, u32 n_hidden, n_hidden x u32 widths, u32 output_dim
#   u64 parameter count, then that many f64 values
# A sidecar ``<path>.json`` holds the version counter and training step.


def save_checkpoint(path, theta: np.ndarray, layout: Layout, version: int = 0, training_step: int = 0,
                    kind: str = "policy") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    theta = np.asarray(theta, dtype="<f8")
    header = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, layout.input_dim)
    header += struct.pack("<I", len(layout.hidden)) + struct.pack(f"<{len(layout.hidden)}I", *layout.hidden)
    header += struct.pack("<IQ", layout.output_dim, theta.size)
    path.write_bytes(header + theta.tobytes())
    sidecar = {
        "schema": "growlab.checkpoint/1",
        "kind": kind,
        "version": int(version),
        "training_step": int(training_step),
        "layout": layout.to_dict(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[np.ndarray, Layout, dict]:
    """Read a checkpoint; raises :class:`ConfigError` on a corrupt file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != CKPT_MAGIC:
        raise ConfigError(f"{path}: bad magic bytes")
    try:
        version, input_dim, n_hidden = struct.unpack_from("<III", raw, 8)
        if version != CKPT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        pos = 20
        hidden = struct.unpack_from(f"<{n_hidden}I", raw, pos)
        pos += 4 * n_hidden
        output_dim, count = struct.unpack_from("<IQ", raw, pos)
        pos += 12
    except struct.error as exc:
        raise ConfigError(f"{path}: truncated header") from exc
    layout = Layout(input_dim, hidden, output_dim)
    if count != layout.n_params or len(raw) - pos != 8 * count:
        raise ConfigError(f"{path}: parameter block does not match layout")
    theta = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return theta, layout, meta


def load_policy(path) -> PolicyParams:
    theta, layout, meta = load_checkpoint(path)
    return PolicyParams(theta, layout, int(meta.get("version", 0)))
