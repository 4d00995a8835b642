"""Trajectory decomposition, sample-level group advantages and the clipped surrogate.

A rollout group of ``G`` trajectories is flattened into state-action
samples. Sample ``(i, t)`` of a trajectory of length ``H_i`` with binary
return ``R_i`` gets the reward ``gamma ** (H_i - t) * R_i`` (``t`` is 1-based),
rewards are z-scored over the whole flat set, and the policy maximises

    J = 1/G sum_i 1/H_i sum_t min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)

with ``rho = pi(a | s) / pi_old(a | s)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import policy
from .errors import ConfigError, NumericError, UsageError
from .policy import PolicyParams
from .rollout import RolloutGroup

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class StateActionSample:
    features: np.ndarray
    action: int
    old_log_prob: float
    traj_index: int
    step_index: int
    discounted_reward: float
    H: int


@dataclass
class SampleGroup:
    """Flat state-action samples of one rollout group, in (i, t) order."""

    features: np.ndarray       # (N, obs_dim)
    actions: np.ndarray        # (N,)
    old_log_probs: np.ndarray  # (N,)
    traj_index: np.ndarray     # (N,)
    step_index: np.ndarray     # (N,), 1-based
    rewards: np.ndarray        # (N,)
    lengths: np.ndarray        # (G,)
    returns: np.ndarray        # (G,)
    gamma: float
    mu: float
    sigma: float
    task_id: str = ""
    group_seed: int = 0

    @property
    def G(self) -> int:
        return len(self.lengths)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def weights(self) -> np.ndarray:
        """Per-sample objective weight ``1 / (G * H_i)``."""
        return 1.0 / (self.G * self.lengths[self.traj_index].astype(np.float64))

    @property
    def samples(self) -> list[StateActionSample]:
        return [StateActionSample(self.features[n], int(self.actions[n]), float(self.old_log_probs[n]),
                                  int(self.traj_index[n]), int(self.step_index[n]), float(self.rewards[n]),
                                  int(self.lengths[self.traj_index[n]]))
                for n in range(len(self))]


@dataclass
class AdvantageBatch:
    samples: SampleGroup
    advantages: np.ndarray
    degenerate: bool


@dataclass
class SurrogateReport:
    J_full: float
    C_gamma: float
    S: float
    mu: float
    J_traj: float
    J_step: float
    residual: float
    uniform_H: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def discounted_rewards(H: int, R: float, gamma: float) -> list[float]:
    """``[gamma ** (H - t) * R for t = 1..H]`` via scalar libm ``pow``."""
    return [(gamma ** (H - t)) * R for t in range(1, H + 1)]


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must be in (0, 1], got {gamma}")
    return gamma


def decompose(group: RolloutGroup, gamma: float) -> SampleGroup:
    gamma = _check_gamma(gamma)
    trajs = group.trajectories
    lengths = np.array([t.length for t in trajs], dtype=np.int64)
    returns = np.array([t.episodic_return for t in trajs], dtype=np.float64)
    rewards = []
    for traj, R in zip(trajs, returns):
        rewards.extend(discounted_rewards(traj.length, float(R), gamma))
    sg = SampleGroup(
        features=np.concatenate([t.features for t in trajs]),
        actions=np.concatenate([t.actions for t in trajs]),
        old_log_probs=np.concatenate([t.old_log_probs for t in trajs]),
        traj_index=np.repeat(np.arange(len(trajs)), lengths),
        step_index=np.concatenate([np.arange(1, h + 1) for h in lengths]),
        rewards=np.array(rewards, dtype=np.float64),
        lengths=lengths,
        returns=returns,
        gamma=gamma,
        mu=0.0,
        sigma=0.0,
        task_id=group.task_id,
        group_seed=group.group_seed,
    )
    sg.mu, sg.sigma = group_stats(sg)
    return sg


def group_stats(sg: SampleGroup) -> tuple[float, float]:
    """Population mean and standard deviation over the flat reward set."""
    if len(sg.rewards) == 0:
        raise UsageError("empty sample group")
    return float(np.mean(sg.rewards)), float(np.std(sg.rewards))


def zscore(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Population z-score; all zeros and ``True`` when std <= SIGMA_FLOOR."""
    values = np.asarray(values, dtype=np.float64)
    mu, sigma = float(np.mean(values)), float(np.std(values))
    if sigma <= SIGMA_FLOOR:
        return np.zeros_like(values), True
    return (values - mu) / sigma, False


def normalize_advantages(sg: SampleGroup) -> AdvantageBatch:
    if sg.sigma <= SIGMA_FLOOR:
        return AdvantageBatch(sg, np.zeros_like(sg.rewards), True)
    return AdvantageBatch(sg, (sg.rewards - sg.mu) / sg.sigma, False)


def ratios(params: PolicyParams, sg: SampleGroup) -> np.ndarray:
    lp = policy.log_probs_batch(params, sg.features)[np.arange(len(sg)), sg.actions]
    rho = np.exp(lp - sg.old_log_probs)
    if not np.all(np.isfinite(rho)):
        raise NumericError("non-finite probability ratio")
    return rho


def ratio(params: PolicyParams, sample: StateActionSample) -> float:
    rho = math.exp(policy.log_prob(params, sample.features, sample.action) - sample.old_log_prob)
    if not math.isfinite(rho):
        raise NumericError("non-finite probability ratio")
    return rho


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"clip eps must be in (0, 1), got {eps}")


def surrogate_terms(rho: np.ndarray, adv: np.ndarray, eps: float):
    """Per-sample clipped surrogate and a mask of samples whose gradient flows.

    The clipped branch is binding (zero gradient) when ``A > 0`` and
    ``rho > 1 + eps`` or when ``A < 0`` and ``rho < 1 - eps``.
    """
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps)
    value = np.minimum(rho * adv, clipped * adv)
    binding = ((adv > 0) & (rho > 1.0 + eps)) | ((adv < 0) & (rho < 1.0 - eps))
    return value, ~binding


def clipped_objective(batch: AdvantageBatch, params: PolicyParams, eps: float) -> float:
    _check_eps(eps)
    if len(batch.advantages) == 0:
        raise UsageError("empty advantage batch")
    rho = ratios(params, batch.samples)
    value, _ = surrogate_terms(rho, batch.advantages, eps)
    return float(np.sum(batch.samples.weights * value))


def objective_gradient(batch: AdvantageBatch, params: PolicyParams, eps: float, kl_coef: float = 0.0) -> np.ndarray:
    """Gradient of :func:`clipped_objective` (minus ``kl_coef`` times a k3 KL estimate)."""
    _check_eps(eps)
    sg = batch.samples
    rho = ratios(params, sg)
    _, active = surrogate_terms(rho, batch.advantages, eps)
    coef = sg.weights * batch.advantages * rho * active
    if kl_coef:
        # k3 estimator: rho_inv - log(rho_inv) - 1, with d/dlogpi = 1 - 1/rho
        coef = coef - kl_coef * sg.weights * (1.0 - 1.0 / rho)
    return policy.weighted_score(params, sg.features, sg.actions, coef)


def clip_fraction(batch: AdvantageBatch, params: PolicyParams, eps: float) -> float:
    rho = ratios(params, batch.samples)
    _, active = surrogate_terms(rho, batch.advantages, eps)
    return float(np.mean(~active))


def avg_discount_coeff(gamma: float, H: float) -> float:
    """Mean of ``gamma ** (H - t)`` over ``t = 1..H``: (1 - gamma^H) / (H (1 - gamma)).

    Evaluated through ``expm1``/``log1p`` to avoid cancellation near
    ``gamma = 1``; the limit value 1 is returned at ``gamma == 1``.
    """
    gamma = _check_gamma(gamma)
    if H < 1:
        raise ConfigError("H must be >= 1")
    if gamma == 1.0 or H == 1:
        return 1.0
    c = math.expm1(H * math.log1p(gamma - 1.0)) / (H * (gamma - 1.0))
    assert 0.0 < c <= 1.0
    return c


def group_return_mean(group) -> float:
    """S: mean binary return of a rollout group (or a SampleGroup)."""
    return float(np.mean(group.returns))


def surrogate_decomposition(group: RolloutGroup, params: PolicyParams, gamma: float) -> SurrogateReport:
    """Unclipped, sigma-free objective split into trajectory and step terms.

    ``J_full`` uses the actual group mean ``mu`` of the decomposed rewards, so
    ``residual = J_full - (C * J_traj + J_step)`` measures how far
    ``mu = C_gamma * S`` is from holding. It is zero up to rounding when all
    lengths are equal; otherwise ``C_gamma`` is taken at the mean length.
    """
    sg = decompose(group, gamma)
    rho = ratios(params, sg)
    w = sg.weights
    H_i = sg.lengths[sg.traj_index]
    R_i = sg.returns[sg.traj_index]
    uniform = bool(np.all(sg.lengths == sg.lengths[0]))
    H = int(sg.lengths[0]) if uniform else float(np.mean(sg.lengths))
    C = avg_discount_coeff(gamma, H)
    S = group_return_mean(sg)
    disc = np.array([sg.gamma ** (h - t) for h, t in zip(H_i.tolist(), sg.step_index.tolist())])
    J_full = float(np.sum(w * rho * (sg.rewards - sg.mu)))
    J_traj = float(np.sum(w * rho * (R_i - S)))
    J_step = float(np.sum(w * rho * (disc - C) * R_i))
    return SurrogateReport(J_full, C, S, sg.mu, J_traj, J_step, J_full - (C * J_traj + J_step), uniform)


def write_advantages_csv(path, batch: AdvantageBatch) -> Path:
    import csv

    path = Path(path)
    sg = batch.samples
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_index", "step_index", "action", "reward", "advantage"])
        for n in range(len(sg)):
            w.writerow([int(sg.traj_index[n]), int(sg.step_index[n]), int(sg.actions[n]),
                        repr(float(sg.rewards[n])), repr(float(batch.advantages[n]))])
    return path
