"""Group rollouts under a frozen old policy."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envsuite, policy
from .envsuite import EnvState, TaskSpec
from .errors import ConfigError
from .policy import PolicyParams
from .seeding import derive_seed, make_rng


@dataclass
class Trajectory:
    features: np.ndarray        # (H, obs_dim), state before each action
    actions: np.ndarray         # (H,)
    old_log_probs: np.ndarray   # (H,)
    final_state: EnvState
    task_id: str
    env_index: int
    _return: int | None = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def steps(self):
        return list(zip(self.features, self.actions.tolist(), self.old_log_probs.tolist()))

    @property
    def episodic_return(self) -> int:
        return trajectory_return(self)


@dataclass
class RolloutGroup:
    trajectories: list[Trajectory]
    task_id: str
    old_policy_version: int
    group_seed: int

    @property
    def G(self) -> int:
        return len(self.trajectories)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([t.length for t in self.trajectories])

    @property
    def returns(self) -> np.ndarray:
        return np.array([t.episodic_return for t in self.trajectories], dtype=np.float64)

    @property
    def env_steps(self) -> int:
        return int(self.lengths.sum())


def trajectory_return(traj: Trajectory) -> int:
    if traj._return is None:
        traj._return = envsuite.verify(traj)
    return traj._return


def env_seed(group_seed: int, env_index: int) -> int:
    return derive_seed("env", group_seed, env_index)


def _run_lockstep(task: TaskSpec, params: PolicyParams, seeds: list[tuple[int, int]]) -> list[Trajectory]:
    """Run several environments step-aligned, batching the policy forward.

    Per-row log-probabilities do not depend on which rows share the batch,
    so the result is identical to running each environment alone.
    """
    states = [envsuite.reset(task, s) for _, s in seeds]
    rngs = [make_rng("actions", s) for _, s in seeds]
    feats = [[] for _ in seeds]
    acts = [[] for _ in seeds]
    lps = [[] for _ in seeds]
    active = list(range(len(seeds)))
    while active:
        X = np.stack([states[k].observation for k in active])
        logp = policy.log_probs_batch(params, X)
        probs = np.exp(logp)
        still = []
        for row, k in enumerate(active):
            a = policy.inverse_cdf(probs[row], rngs[k].random())
            feats[k].append(X[row])
            acts[k].append(a)
            lps[k].append(logp[row, a])
            states[k] = envsuite.step(states[k], a).next_state
            if not states[k].done:
                still.append(k)
        active = still
    return [Trajectory(np.array(feats[k]), np.array(acts[k], dtype=np.int64), np.array(lps[k], dtype=np.float64),
                       states[k], task.task_id, idx)
            for k, (idx, _) in enumerate(seeds)]


def collect_group(task: TaskSpec, old_params: PolicyParams, G: int, seed: int, workers: int = 1) -> RolloutGroup:
    """Collect ``G`` trajectories; environment ``i`` uses ``env_seed(seed, i)``.

    ``workers > 1`` splits the environments across threads; the merged group
    is ordered by ``env_index`` and bit-identical to the serial result.
    """
    if G < 2:
        raise ConfigError("group size G must be >= 2")
    seeds = [(i, env_seed(seed, i)) for i in range(G)]
    if workers <= 1:
        trajs = _run_lockstep(task, old_params, seeds)
    else:
        chunks = [seeds[w::workers] for w in range(workers) if seeds[w::workers]]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = pool.map(lambda c: _run_lockstep(task, old_params, c), chunks)
        trajs = sorted((t for part in parts for t in part), key=lambda t: t.env_index)
    return RolloutGroup(trajs, task.task_id, old_params.version, seed)


def dump_groups(path, groups) -> Path:
    """JSONL rollout dump: a schema header then one trajectory per line."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": "growlab.rollouts/1"}) + "\n")
        for g in groups:
            for t in g.trajectories:
                fh.write(json.dumps({
                    "task_id": t.task_id,
                    "env_index": t.env_index,
                    "group_seed": g.group_seed,
                    "old_policy_version": g.old_policy_version,
                    "length": t.length,
                    "return": t.episodic_return,
                    "actions": t.actions.tolist(),
                    "old_log_probs": t.old_log_probs.tolist(),
                }) + "\n")
    return path
