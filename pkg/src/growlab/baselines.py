"""Trajectory-level GRPO and PPO (GAE with a learned critic) advantages.

Both produce an :class:`~growlab.growcore.AdvantageBatch` over the same
decomposed samples GROW uses, so every algorithm shares the objective,
gradient and optimizer code and differs only in advantage construction.
PPO sees the raw sparse reward: zero on every step except the last, which
carries the episodic return.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .errors import ConfigError, NumericError
from .growcore import AdvantageBatch, SampleGroup, zscore
from .mlp import Layout
from .rollout import RolloutGroup, Trajectory
from .seeding import make_rng


@dataclass(frozen=True)
class ValueParams:
    theta: np.ndarray
    layout: Layout

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True)
        if self.layout.output_dim != 1:
            raise ConfigError("value approximator must have a scalar output")
        if theta.shape != (self.layout.n_params,):
            raise ConfigError(f"theta length {theta.size} != layout parameter count {self.layout.n_params}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("value parameters contain non-finite entries")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class GAEConfig:
    gamma: float = 0.995
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("GAE gamma must be in (0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("GAE lambda must be in [0, 1]")


def grpo_trajectory_advantages(group: RolloutGroup) -> tuple[np.ndarray, bool]:
    """Z-scored episodic returns across the group, one per trajectory."""
    if group.G < 2:
        raise ConfigError("group size G must be >= 2")
    return zscore(group.returns)


def grpo_batch(sg: SampleGroup) -> AdvantageBatch:
    """Broadcast trajectory-level GRPO advantages to every step."""
    adv, degenerate = zscore(sg.returns)
    return AdvantageBatch(sg, adv[sg.traj_index], degenerate)


def init_value_params(seed: int, input_dim: int, hidden) -> ValueParams:
    layout = Layout(input_dim, tuple(hidden), 1)
    return ValueParams(mlp.init_theta(make_rng("value-init", seed), layout), layout)


def values_batch(vparams: ValueParams, X: np.ndarray) -> np.ndarray:
    v = mlp.forward(vparams.theta, vparams.layout, X)[:, 0]
    if not np.all(np.isfinite(v)):
        raise NumericError("value approximator produced non-finite output")
    return v


def value_forward(vparams: ValueParams, features) -> float:
    return float(values_batch(vparams, np.asarray(features, dtype=np.float64)[None, :])[0])


def sparse_rewards(H: int, R: float) -> np.ndarray:
    r = np.zeros(H)
    r[-1] = R
    return r


def gae_from_values(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Backward-recursion GAE; the successor of the last step has value 0.

    The recursion runs on ``delta_t / c**(H-1-t)`` with ``c = gamma * lam``
    and rescales by the exact power, so with zero values and ``lam = 1`` the
    result is bit-identical to ``gamma ** (H - t) * R``. When the powers
    underflow (tiny ``c``) the plain chained form is used.
    """
    H = len(rewards)
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    c = gamma * lam
    nxt = np.append(values[1:], 0.0)
    delta = [float(r + gamma * v1 - v0) for r, v1, v0 in zip(rewards, nxt, values)]
    adv = np.zeros(H)
    powers = [c ** k for k in range(H)]
    if H and powers[-1] > 1e-250:
        acc = 0.0
        for t in range(H - 1, -1, -1):
            p = powers[H - 1 - t]
            acc += delta[t] / p
            adv[t] = p * acc
        return adv
    acc = 0.0
    for t in range(H - 1, -1, -1):
        acc = delta[t] + c * acc
        adv[t] = acc
    return adv


def gae_advantages(traj: Trajectory, vparams: ValueParams, cfg: GAEConfig) -> np.ndarray:
    values = values_batch(vparams, traj.features)
    return gae_from_values(sparse_rewards(traj.length, float(traj.episodic_return)), values, cfg.gamma, cfg.lam)


def returns_to_go(sg: SampleGroup, gamma: float) -> np.ndarray:
    """Discounted sparse return seen from each sample: ``gamma ** (H - t) * R``."""
    H = sg.lengths[sg.traj_index]
    R = sg.returns[sg.traj_index]
    return np.array([gamma ** (h - t) for h, t in zip(H.tolist(), sg.step_index.tolist())]) * R


def ppo_batch(sg: SampleGroup, vparams: ValueParams, cfg: GAEConfig) -> AdvantageBatch:
    """GAE advantages per trajectory, z-scored over the whole batch."""
    values = values_batch(vparams, sg.features)
    parts = []
    for i, (H, R) in enumerate(zip(sg.lengths.tolist(), sg.returns.tolist())):
        sel = sg.traj_index == i
        parts.append(gae_from_values(sparse_rewards(H, R), values[sel], cfg.gamma, cfg.lam))
    adv, degenerate = zscore(np.concatenate(parts))
    return AdvantageBatch(sg, adv, degenerate)


def value_loss(vparams: ValueParams, X: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error of the value predictions."""
    err = values_batch(vparams, X) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(err * err))


def value_loss_grad(vparams: ValueParams, X: np.ndarray, targets: np.ndarray) -> np.ndarray:
    out, acts = mlp.forward_with_cache(vparams.theta, vparams.layout, X)
    err = out[:, 0] - np.asarray(targets, dtype=np.float64)
    d = (2.0 / len(err)) * err[:, None]
    g = mlp.backward(vparams.theta, vparams.layout, acts, d)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite value gradient")
    return g
