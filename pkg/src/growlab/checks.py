"""Randomized invariant suite behind ``growlab verify``.

Each check compares a library code path against an independent
computation (plain loops, direct sums, central differences) on random
instances and reports its worst deviation against a fixed tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, envsuite, growcore, mlp, policy
from .growcore import AdvantageBatch, SampleGroup
from .mlp import Layout
from .policy import PolicyParams
from .rollout import RolloutGroup, Trajectory
from .seeding import make_rng

GAMMAS = (0.9, 0.95, 0.995)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    instances: int
    failing_instance: dict | None = field(default=None)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} worst={self.worst:.3e} tol={self.tolerance:.1e} n={self.instances}"


def random_params(rng: np.random.Generator, layout: Layout, scale: float = 0.5) -> PolicyParams:
    return PolicyParams(rng.normal(0.0, scale, layout.n_params), layout)


def perturbed(rng: np.random.Generator, params: PolicyParams, scale: float) -> PolicyParams:
    return PolicyParams(params.theta + rng.normal(0.0, scale, params.theta.size), params.layout)


def synthetic_group(rng: np.random.Generator, old: PolicyParams, lengths, returns) -> RolloutGroup:
    """Rollout group with random features and actions drawn from ``old``."""
    trajs = []
    for i, (H, R) in enumerate(zip(lengths, returns)):
        X = rng.uniform(-1.0, 1.0, size=(int(H), old.layout.input_dim))
        lp = policy.log_probs_batch(old, X)
        acts = np.array([policy.inverse_cdf(np.exp(row), rng.random()) for row in lp], dtype=np.int64)
        t = Trajectory(X, acts, lp[np.arange(int(H)), acts], None, "synthetic", i)
        t._return = int(R)
        trajs.append(t)
    return RolloutGroup(trajs, "synthetic", old.version, 0)


def synthetic_samples(rng, lengths, rewards_fn=None, obs_dim: int = 3) -> SampleGroup:
    lengths = np.asarray(lengths, dtype=np.int64)
    returns = rng.integers(0, 2, size=len(lengths)).astype(np.float64)
    N = int(lengths.sum())
    rewards = rng.uniform(0, 1, N) if rewards_fn is None else rewards_fn(N)
    return SampleGroup(
        features=rng.uniform(-1, 1, (N, obs_dim)), actions=np.zeros(N, dtype=np.int64),
        old_log_probs=np.zeros(N), traj_index=np.repeat(np.arange(len(lengths)), lengths),
        step_index=np.concatenate([np.arange(1, h + 1) for h in lengths]), rewards=rewards,
        lengths=lengths, returns=returns, gamma=1.0, mu=float(np.mean(rewards)), sigma=float(np.std(rewards)))


def _result(name, worst, tol, n, bad, inject_fault=False) -> CheckResult:
    if inject_fault:
        # a deliberately broken residual, used to exercise the failure path
        worst = worst + 1.0
        bad = {"injected_fault": True, **(bad or {})}
    passed = worst <= tol
    return CheckResult(name, passed, float(worst), tol, n, None if passed else bad)


# -- individual checks --------------------------------------------------------


def check_decomposition(seed: int, n: int, inject_fault: bool = False) -> CheckResult:
    """J_full == C_gamma * J_traj + J_step on uniform-length groups."""
    rng = make_rng("verify", "decomposition", seed)
    layout = Layout(6, (8,), 4)
    worst, bad = 0.0, None
    for k in range(n):
        G, H, gamma = 8, int(rng.integers(5, 41)), float(rng.choice(GAMMAS))
        old = random_params(rng, layout)
        new = perturbed(rng, old, 0.1)
        group = synthetic_group(rng, old, [H] * G, rng.integers(0, 2, size=G))
        rep = growcore.surrogate_decomposition(group, new, gamma)
        err = abs(rep.residual) / max(1.0, abs(rep.J_full))
        if err > worst:
            worst = err
            bad = {"instance": k, "H": H, "gamma": gamma, "report": asdict(rep)}
    return _result("decomposition_identity", worst, 1e-9, n, bad, inject_fault)


def check_grpo_reduction(seed: int, n: int) -> CheckResult:
    """gamma = 1, uniform H: sample advantages == broadcast trajectory z-scores."""
    rng = make_rng("verify", "grpo", seed)
    layout = Layout(4, (), 3)
    worst, bad = 0.0, None
    for k in range(n):
        G, H = int(rng.integers(2, 12)), int(rng.integers(1, 30))
        old = random_params(rng, layout)
        group = synthetic_group(rng, old, [H] * G, rng.integers(0, 2, size=G))
        sg = growcore.decompose(group, 1.0)
        grow = growcore.normalize_advantages(sg).advantages
        R = group.returns
        s = R.std()
        traj = np.zeros(G) if s <= growcore.SIGMA_FLOOR else (R - R.mean()) / s
        err = float(np.max(np.abs(grow - np.repeat(traj, H))))
        if err > worst:
            worst, bad = err, {"instance": k, "G": G, "H": H, "returns": R.tolist()}
    return _result("grpo_reduction", worst, 1e-12, n, bad)


def check_propagation(seed: int, n: int) -> CheckResult:
    """Discounted rewards equal the direct per-element power; strictly increasing on success."""
    worst, bad, count = 0.0, None, 0
    for gamma in (0.5, 0.9, 0.995):
        for H in range(1, 81):
            for R in (0, 1):
                count += 1
                got = growcore.discounted_rewards(H, float(R), gamma)
                want = [math.pow(gamma, H - t) * R for t in range(1, H + 1)]
                mismatch = sum(a != b for a, b in zip(got, want))
                increasing = all(a < b for a, b in zip(got, got[1:])) if R == 1 else True
                if mismatch or not increasing:
                    worst, bad = 1.0, {"gamma": gamma, "H": H, "R": R}
    return _result("reward_propagation", worst, 0.0, count, bad)


def check_c_gamma(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "cgamma", seed)
    worst, bad = 0.0, None
    for k in range(n):
        gamma, H = float(rng.uniform(1e-3, 1 - 1e-6)), int(rng.integers(1, 200))
        c = growcore.avg_discount_coeff(gamma, H)
        direct = math.fsum(math.pow(gamma, H - t) for t in range(1, H + 1)) / H
        err = abs(c - direct)
        in_range = (0.0 < c < 1.0) if H >= 2 else c == 1.0
        if err > worst or not in_range:
            worst, bad = max(err, 0.0 if in_range else 1.0), {"gamma": gamma, "H": H, "closed": c, "direct": direct}
    return _result("c_gamma_closed_form", worst, 1e-12, n, bad)


def check_normalization(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "normalization", seed)
    worst, bad = 0.0, None
    for k in range(n):
        lengths = rng.integers(1, 30, size=int(rng.integers(2, 10)))
        sg = synthetic_samples(rng, lengths)
        batch = growcore.normalize_advantages(sg)
        a = batch.advantages
        err = max(abs(float(np.mean(a))), abs(float(np.std(a)) - 1.0))
        if err > worst:
            worst, bad = err, {"instance": k, "lengths": lengths.tolist()}
    const = synthetic_samples(rng, [5, 5], rewards_fn=lambda N: np.full(N, 0.3))
    deg = growcore.normalize_advantages(const)
    if not deg.degenerate or np.any(deg.advantages != 0):
        worst, bad = 1.0, {"degenerate_case": "failed"}
    return _result("advantage_normalization", worst, 1e-9, n + 1, bad)


def check_monotonicity(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "monotonic", seed)
    violations, bad = 0, None
    for k in range(n):
        H, gamma = int(rng.integers(2, 81)), float(rng.uniform(0.05, 0.9999))
        r = growcore.discounted_rewards(H, 1.0, gamma)
        if not (all(a < b for a, b in zip(r, r[1:])) and r[-1] == 1.0 and all(0 <= v <= 1 for v in r)):
            violations, bad = violations + 1, {"H": H, "gamma": gamma}
    return _result("reward_monotonicity", float(violations), 0.0, n, bad)


def _objective_instance(rng, layout, eps):
    old = random_params(rng, layout)
    new = perturbed(rng, old, 0.3)
    G = 4
    lengths = rng.integers(2, 7, size=G)
    group = synthetic_group(rng, old, lengths, [1, 0, 1, 0])
    sg = growcore.decompose(group, 0.9)
    batch = growcore.normalize_advantages(sg)
    return old, new, batch


def objective_fd_error(new: PolicyParams, batch: AdvantageBatch, eps: float, h: float = 1e-5) -> float:
    analytic = growcore.objective_gradient(batch, new, eps)

    def f(theta):
        return growcore.clipped_objective(batch, PolicyParams(theta, new.layout), eps)

    return policy.relative_error(analytic, policy.central_difference(f, new.theta, h))


def check_objective_gradient(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "objgrad", seed)
    layout = Layout(5, (8,), 3)
    eps = 0.2
    worst, bad, done = 0.0, None, 0
    while done < n:
        _, new, batch = _objective_instance(rng, layout, eps)
        rho = growcore.ratios(new, batch.samples)
        _, active = growcore.surrogate_terms(rho, batch.advantages, eps)
        # both branches must be present, and no ratio may sit on a clip kink
        if active.all() or not active.any() or np.min(np.abs(np.abs(rho - 1.0) - eps)) < 1e-3:
            continue
        err = objective_fd_error(new, batch, eps)
        done += 1
        if err > worst:
            worst, bad = err, {"instance": done}
    return _result("objective_gradient_fd", worst, 1e-4, n, bad)


def value_fd_error(vparams, X, y, h: float = 1e-5) -> float:
    analytic = baselines.value_loss_grad(vparams, X, y)

    def f(theta):
        return baselines.value_loss(baselines.ValueParams(theta, vparams.layout), X, y)

    return policy.relative_error(analytic, policy.central_difference(f, vparams.theta, h))


def check_value_gradient(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "valuegrad", seed)
    layout = Layout(5, (8,), 1)
    worst, bad = 0.0, None
    for k in range(n):
        vp = baselines.ValueParams(rng.normal(0, 0.5, layout.n_params), layout)
        X = rng.uniform(-1, 1, (12, 5))
        y = rng.uniform(0, 1, 12)
        err = value_fd_error(vp, X, y)
        if err > worst:
            worst, bad = err, {"instance": k}
    return _result("value_gradient_fd", worst, 1e-4, n, bad)


def gae_direct(rewards, values, gamma, lam) -> np.ndarray:
    """O(H^2) double sum of (gamma * lam)^k * delta_{t+k}."""
    H = len(rewards)
    nxt = list(values[1:]) + [0.0]
    delta = [rewards[t] + gamma * nxt[t] - values[t] for t in range(H)]
    return np.array([sum((gamma * lam) ** k * delta[t + k] for k in range(H - t)) for t in range(H)])


def check_gae(seed: int, n: int) -> CheckResult:
    rng = make_rng("verify", "gae", seed)
    worst, bad = 0.0, None
    for k in range(n):
        H = int(rng.integers(1, 81))
        rewards = baselines.sparse_rewards(H, float(rng.integers(0, 2)))
        values = rng.uniform(-1, 1, H)
        gamma, lam = float(rng.uniform(0.8, 0.999)), float(rng.uniform(0, 1))
        err = float(np.max(np.abs(baselines.gae_from_values(rewards, values, gamma, lam)
                                  - gae_direct(rewards, values, gamma, lam))))
        if err > worst:
            worst, bad = err, {"H": H, "gamma": gamma, "lam": lam}
    # zero values, lam = 1: exactly the discounted sparse return
    for gamma in (0.5, 0.9, 0.95, 0.995):
        for H in range(1, 81):
            got = baselines.gae_from_values(baselines.sparse_rewards(H, 1.0), np.zeros(H), gamma, 1.0)
            if got.tolist() != growcore.discounted_rewards(H, 1.0, gamma):
                worst, bad = max(worst, 1.0), {"zero_values": True, "H": H, "gamma": gamma}
    return _result("gae_recursion", worst, 1e-12, n, bad)


def step_length_cv(task, episodes: int = 30) -> float:
    lengths = np.array([envsuite.run_episode(task, s).length for s in range(episodes)], dtype=np.float64)
    return float(lengths.std() / lengths.mean())


def check_step_lengths(seed: int, n: int, threshold: float = 0.3) -> CheckResult:
    per_task = {t.task_id: step_length_cv(t) for t in envsuite.list_tasks()}
    worst = max(per_task.values())
    return _result("step_length_clustering", worst, threshold, len(per_task), {"cv": per_task})


CHECKS = (
    ("decomposition_identity", check_decomposition),
    ("grpo_reduction", check_grpo_reduction),
    ("reward_propagation", check_propagation),
    ("c_gamma_closed_form", check_c_gamma),
    ("advantage_normalization", check_normalization),
    ("reward_monotonicity", check_monotonicity),
    ("objective_gradient_fd", check_objective_gradient),
    ("value_gradient_fd", check_value_gradient),
    ("gae_recursion", check_gae),
    ("step_length_clustering", check_step_lengths),
)

# random instances per check at ``sizes == 1``
DEFAULT_COUNTS = {
    "decomposition_identity": 1000,
    "grpo_reduction": 1000,
    "reward_propagation": 1,
    "c_gamma_closed_form": 1000,
    "advantage_normalization": 10000,
    "reward_monotonicity": 1000,
    "objective_gradient_fd": 100,
    "value_gradient_fd": 100,
    "gae_recursion": 1000,
    "step_length_clustering": 1,
}


def run_all(seed: int = 0, sizes: float = 1.0, inject_fault: bool = False) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        n = max(1, int(round(DEFAULT_COUNTS[name] * sizes)))
        if name == "decomposition_identity":
            out.append(fn(seed, n, inject_fault=inject_fault))
        else:
            out.append(fn(seed, n))
    return out


def report_json(results: list[CheckResult], seed: int, sizes: int) -> str:
    return json.dumps({"schema": "growlab.verify/1", "seed": seed, "sizes": sizes,
                       "passed": all(r.passed for r in results),
                       "checks": [asdict(r) for r in results]}, sort_keys=True, indent=1)
