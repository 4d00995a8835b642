"""Rollout -> advantages -> clipped-objective ascent, with evaluation and metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, envsuite, growcore, policy
from .baselines import GAEConfig, ValueParams
from .envsuite import TaskSpec
from .errors import ConfigError, NumericError
from .policy import PolicyParams
from .rollout import collect_group
from .seeding import derive_seed

ALGORITHMS = ("grow", "grpo_traj", "ppo")
METRICS_SCHEMA = "growlab.metrics/1"


@dataclass
class TrainConfig:
    algorithm: str = "grow"
    tasks: list[str] = field(default_factory=lambda: ["nav-7x7"])
    G: int = 8
    gamma: float = 0.995
    eps: float = 0.2
    # The reference 7B run used 1e-6; the small MLP policy needs a far larger step.
    learning_rate: float = 1e-2
    updates: int = 300
    seeds: list[int] = field(default_factory=lambda: [1])
    eval_episodes: int = 50
    eval_interval: int = 50
    hidden: list[int] = field(default_factory=lambda: [32])
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 1
    schedule: str = "round_robin"
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    kl_coef: float = 0.0
    horizons: dict[str, int] = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> "TrainConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        need(isinstance(self.tasks, list) and len(self.tasks) > 0, "tasks must be a non-empty list")
        need(int(self.G) >= 2, "G must be >= 2")
        need(0.0 < self.gamma <= 1.0, "gamma must be in (0, 1]")
        need(self.algorithm != "ppo" or self.gamma < 1.0, "ppo requires gamma < 1")
        need(0.0 < self.eps < 1.0, "eps must be in (0, 1)")
        need(self.learning_rate > 0, "learning_rate must be positive")
        need(int(self.updates) >= 1, "updates must be >= 1")
        need(isinstance(self.seeds, list) and len(self.seeds) > 0, "seeds must be a non-empty list")
        need(int(self.eval_episodes) >= 3, "eval_episodes must be >= 3")
        need(int(self.eval_interval) >= 1, "eval_interval must be >= 1")
        need(all(int(h) > 0 for h in self.hidden), "hidden widths must be positive")
        need(0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0, "moment decay rates must be in [0, 1)")
        need(self.adam_eps > 0, "adam_eps must be positive")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(int(self.epochs) >= 1, "epochs must be >= 1")
        need(self.schedule in ("round_robin", "all"), "schedule must be 'round_robin' or 'all'")
        need(0.0 <= self.gae_lambda <= 1.0, "gae_lambda must be in [0, 1]")
        need(self.value_coef > 0, "value_coef must be positive")
        need(self.kl_coef >= 0, "kl_coef must be >= 0")
        need(int(self.workers) >= 1, "workers must be >= 1")
        tasks = self.task_specs()
        need(len({t.family for t in tasks}) == 1, "all tasks in one run must share a family")
        for tid in self.horizons:
            need(tid in self.tasks, f"horizon override for task {tid!r} not in tasks")
        return self

    def task_specs(self) -> list[TaskSpec]:
        out = []
        for tid in self.tasks:
            t = envsuite.get_task(tid)
            if tid in self.horizons:
                t = envsuite.validate_task(t.with_horizon(int(self.horizons[tid])))
            out.append(t)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: OptimizerState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0, ascent: bool = True):
    """Bias-corrected adaptive moment step with decoupled weight decay."""
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ConfigError("gradient / optimizer state layout mismatch")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    step = lr * m_hat / (np.sqrt(v_hat) + eps)
    new = theta * (1.0 - lr * weight_decay) + (step if ascent else -step)
    return new, OptimizerState(m, v, t)


def adaptive_update(params: PolicyParams, grad: np.ndarray, state: OptimizerState, lr: float,
                    **hyper) -> tuple[PolicyParams, OptimizerState]:
    """One ascent step on the objective; returns a new snapshot (version + 1)."""
    theta, state = adam_step(params.theta, np.asarray(grad, dtype=np.float64), state, lr, ascent=True, **hyper)
    return params.replace(theta), state


def snapshot_old_policy(params: PolicyParams) -> PolicyParams:
    return PolicyParams(params.theta.copy(), params.layout, params.version)


@dataclass
class EvalResult:
    asr: float
    asr_std: float
    steps: float
    episodes: int


def greedy_action(log_probs: np.ndarray) -> int:
    """Argmax with lowest-index tie-breaking."""
    return int(np.argmax(log_probs))


def evaluate(params: PolicyParams, tasks, episodes: int, seed: int) -> dict[str, EvalResult]:
    """Greedy evaluation; failed episodes count their full ``horizon_cap`` steps."""
    if episodes < 3:
        raise ConfigError("evaluation needs at least 3 episodes")
    out = {}
    for task in tasks:
        states = [envsuite.reset(task, derive_seed("eval", seed, task.task_id, e)) for e in range(episodes)]
        active = list(range(episodes))
        while active:
            X = np.stack([states[k].observation for k in active])
            acts = np.argmax(policy.log_probs_batch(params, X), axis=1)
            still = []
            for row, k in enumerate(active):
                states[k] = envsuite.step(states[k], int(acts[row])).next_state
                if not states[k].done:
                    still.append(k)
            active = still
        success = np.array([s.success for s in states], dtype=np.float64)
        steps = np.array([s.step_index if s.success else task.horizon_cap for s in states], dtype=np.float64)
        out[task.task_id] = EvalResult(float(success.mean()), float(success.std()), float(steps.mean()), episodes)
    return out


@dataclass
class TrainResult:
    params: PolicyParams
    value_params: ValueParams | None
    records: list[dict]
    final_eval: dict[str, EvalResult]


def _build_batch(cfg: TrainConfig, sg, vparams):
    if cfg.algorithm == "grow":
        return growcore.normalize_advantages(sg)
    if cfg.algorithm == "grpo_traj":
        return baselines.grpo_batch(sg)
    return baselines.ppo_batch(sg, vparams, GAEConfig(cfg.gamma, cfg.gae_lambda))


def _finite(x: float) -> float:
    if not math.isfinite(x):
        raise NumericError("non-finite metric")
    return float(x)


class _Sink:
    """Metrics JSONL writer (single writer, append-only)."""

    def __init__(self, out_dir: Path | None):
        self.fh = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self.fh = (out_dir / "metrics.jsonl").open("w")

    def write(self, rec: dict) -> None:
        if self.fh:
            self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def train(config: TrainConfig, seed: int | None = None, out_dir=None) -> TrainResult:
    """Run ``config.updates`` iterations; writes metrics/checkpoints if ``out_dir``."""
    cfg = config.validate()
    seed = int(cfg.seeds[0] if seed is None else seed)
    tasks = cfg.task_specs()
    family = tasks[0].family
    layout = policy.make_layout(envsuite.obs_dim(family), cfg.hidden, envsuite.action_count(family))
    params = policy.init_params(seed, layout)
    opt = OptimizerState.zeros(layout.n_params)
    vparams, vopt = None, None
    if cfg.algorithm == "ppo":
        vparams = baselines.init_value_params(seed, layout.input_dim, cfg.hidden)
        vopt = OptimizerState.zeros(vparams.layout.n_params)
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)

    out = Path(out_dir) if out_dir is not None else None
    sink = _Sink(out)
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        sink.write(rec)

    emit({"schema": METRICS_SCHEMA, "kind": "header", "seed": seed, "config": cfg.to_dict()})
    final_eval: dict[str, EvalResult] = {}
    u = 0
    try:
        for u in range(cfg.updates):
            old = snapshot_old_policy(params)
            todo = tasks if cfg.schedule == "all" else [tasks[u % len(tasks)]]
            batches, groups = [], []
            for task in todo:
                group = collect_group(task, old, cfg.G, derive_seed("group", seed, task.task_id, u), cfg.workers)
                sg = growcore.decompose(group, cfg.gamma)
                batches.append(_build_batch(cfg, sg, vparams))
                groups.append(group)
            objectives = [growcore.clipped_objective(b, params, cfg.eps) for b in batches]
            grad_norm = 0.0
            for _ in range(cfg.epochs):
                grad = sum(growcore.objective_gradient(b, params, cfg.eps, cfg.kl_coef) for b in batches) / len(batches)
                grad_norm = float(np.linalg.norm(grad))
                params, opt = adaptive_update(params, grad, opt, cfg.learning_rate, **hyper)
                if vparams is not None:
                    vgrad = sum(cfg.value_coef * baselines.value_loss_grad(
                        vparams, b.samples.features, baselines.returns_to_go(b.samples, cfg.gamma))
                        for b in batches) / len(batches)
                    vtheta, vopt = adam_step(vparams.theta, vgrad, vopt, cfg.learning_rate, ascent=False, **hyper)
                    vparams = ValueParams(vtheta, vparams.layout)
            for task, group, batch, J in zip(todo, groups, batches, objectives):
                emit({
                    "schema": METRICS_SCHEMA,
                    "kind": "update",
                    "update": u,
                    "task_id": task.task_id,
                    "success_rate": growcore.group_return_mean(group),
                    "mean_length": float(group.lengths.mean()),
                    "env_steps": group.env_steps,
                    "objective": _finite(J),
                    "grad_norm": _finite(grad_norm),
                    "clip_fraction": growcore.clip_fraction(batch, params, cfg.eps),
                    "degenerate": bool(batch.degenerate),
                    "policy_version": params.version,
                })
            last = u == cfg.updates - 1
            if (u + 1) % cfg.eval_interval == 0 or last:
                final_eval = evaluate(params, tasks, cfg.eval_episodes, seed)
                for tid, res in final_eval.items():
                    emit({"schema": METRICS_SCHEMA, "kind": "eval", "update": u, "task_id": tid, **asdict(res)})
                if out is not None:
                    tag = "final" if last else f"u{u + 1:05d}"
                    _save(out, tag, params, vparams, u + 1)
    except NumericError as exc:
        emit({"schema": METRICS_SCHEMA, "kind": "error", "update": u, "message": str(exc)})
        sink.close()
        raise NumericError(f"update {u}: {exc}") from exc
    sink.close()
    if out is not None:
        write_curve(out / "curve.csv", records)
    return TrainResult(params, vparams, records, final_eval)


def _save(out: Path, tag: str, params: PolicyParams, vparams, step: int) -> None:
    ck = out / "checkpoints"
    policy.save_checkpoint(ck / f"policy_{tag}.ckpt", params.theta, params.layout, params.version, step)
    if vparams is not None:
        policy.save_checkpoint(ck / f"value_{tag}.ckpt", vparams.theta, vparams.layout, 0, step, kind="value")


def write_curve(path, records: list[dict]) -> Path:
    """Learning curve CSV: one row per (update, task); ASR/steps only at eval points."""
    path = Path(path)
    evals = {(r["update"], r["task_id"]): r for r in records if r.get("kind") == "eval"}
    with path.open("w", newline="") as fh:
        fh.write("# growlab.curve/1\n")
        w = csv.writer(fh)
        w.writerow(["update", "task_id", "asr", "success_rate", "steps"])
        for r in records:
            if r.get("kind") != "update":
                continue
            ev = evals.get((r["update"], r["task_id"]))
            w.writerow([r["update"], r["task_id"], "" if ev is None else repr(ev["asr"]),
                        repr(r["success_rate"]), "" if ev is None else repr(ev["steps"])])
    return path
