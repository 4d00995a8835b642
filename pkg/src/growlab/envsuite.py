"""Deterministic sparse-reward multi-turn environments.

Three families, one discrete action per step and a binary verified return:

``navigation``
    Grid world. The agent must reach the goal cell; key tasks first require
    visiting the key cell (the goal is a locked door). Actions: 0 up,
    1 down, 2 left, 3 right. Moving into a wall leaves the agent in place.
    Features (length 246, every grid embedded in a 9x9 canvas, cell index
    ``row * 9 + col``): agent one-hot ``[0:81]``, goal one-hot ``[81:162]``,
    key one-hot ``[162:243]`` (zero once picked up or for key-less tasks),
    has-key flag ``[243]``, (row, col) offset from the agent to the current
    target (the key while it is still on the board, else the goal) divided
    by 8 ``[244:246]``.

``chaincraft``
    Ordered recipe of ``stages`` crafting steps. Stage ``s`` is advanced by
    item action ``recipe[s]``. On smelting stages the item starts a furnace
    timer of episode-specific length instead; the stage completes when the
    timer runs out, and actions taken meanwhile are ignored. At each stage
    one trap item undoes the previous stage; other actions are distractors
    with no effect. Actions: 0 wait, 1..6 craft item. Features (length 19):
    stage one-hot ``[0:13]``, task slot one-hot ``[13:17]``, smelting flag
    ``[17]``, remaining wait fraction ``[18]``.

``pursuit``
    Target moving one cell every ``period`` steps on a torus. Striking with
    the target within Manhattan distance 1 scores a hit; after a hit the
    target re-spawns away from the agent and must be reacquired. Actions:
    0 up, 1 down, 2 left, 3 right, 4 strike, 5 wait. Features (length 10):
    signed torus offset to the target scaled to [-1, 1] ``[0:2]``,
    target heading one-hot ``[2:6]``, in-range flag ``[6]``, fraction of
    hits scored ``[7]``, movement phase ``[8]``, target-moves-next flag ``[9]``.

Randomness is drawn only in :func:`reset`; transitions are pure functions
of ``(state, action)``. Episode randomness that appears later (smelting
durations, re-spawn offsets) is pre-drawn at reset and carried in the state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, UsageError
from .seeding import make_rng

FAMILIES = ("navigation", "chaincraft", "pursuit")

NAV_CANVAS = 9
CRAFT_MAX_STAGES = 12
CRAFT_ITEMS = 6
CRAFT_SLOTS = 4
CRAFT_MAX_WAIT = 12

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: str
    horizon_cap: int
    params: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))

    def __hash__(self):
        return hash((self.task_id, self.family, self.horizon_cap, tuple(sorted(self.params.items()))))

    def with_horizon(self, horizon_cap: int) -> "TaskSpec":
        return TaskSpec(self.task_id, self.family, int(horizon_cap), self.params)


@dataclass(frozen=True, eq=False)
class EnvState:
    task: TaskSpec
    step_index: int
    done: bool
    success: bool
    data: tuple
    observation: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return (self.task == other.task and self.step_index == other.step_index and self.done == other.done
                and self.success == other.success and self.data == other.data
                and np.array_equal(self.observation, other.observation))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    done: bool
    success: bool
    # Rewards are episodic only; no per-step scalar is ever exposed.
    reward_signal: None = None


def _manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _torus_delta(a: int, b: int, n: int) -> int:
    """Signed shortest displacement from ``a`` to ``b`` on a ring of size ``n``."""
    d = (b - a) % n
    return d - n if d > n // 2 else d


def _torus_dist(a, b, n):
    return abs(_torus_delta(a[0], b[0], n)) + abs(_torus_delta(a[1], b[1], n))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


class _Navigation:
    obs_dim = 3 * NAV_CANVAS * NAV_CANVAS + 3
    action_count = 4

    def validate(self, task):
        p = task.params
        n = p.get("size", 0)
        _require(3 <= n <= NAV_CANVAS, f"{task.task_id}: size must be in [3, {NAV_CANVAS}]")
        _require(p.get("key", 0) in (0, 1), f"{task.task_id}: key must be 0 or 1")
        longest = (4 if p.get("key", 0) else 2) * (n - 1)
        _require(1 <= p.get("min_path", 1) <= p.get("max_path", longest) <= longest,
                 f"{task.task_id}: path band must satisfy 1 <= min_path <= max_path <= {longest}")

    def reset(self, task, rng):
        p = task.params
        n, has_key_task = p["size"], bool(p.get("key", 0))
        lo, hi = p.get("min_path", 1), p.get("max_path", 4 * (n - 1))
        while True:
            cells = rng.choice(n * n, size=3 if has_key_task else 2, replace=False)
            agent, goal = divmod(int(cells[0]), n), divmod(int(cells[1]), n)
            if has_key_task:
                key = divmod(int(cells[2]), n)
                path = _manhattan(agent, key) + _manhattan(key, goal)
            else:
                key = None
                path = _manhattan(agent, goal)
            if lo <= path <= hi:
                return (agent, goal, key, False)

    def step(self, task, data, action):
        agent, goal, key, has_key = data
        n = task.params["size"]
        dr, dc = _MOVES[action]
        agent = (min(max(agent[0] + dr, 0), n - 1), min(max(agent[1] + dc, 0), n - 1))
        if key is not None and agent == key:
            key, has_key = None, True
        data = (agent, goal, key, has_key)
        return data, self.is_success(task, data)

    def is_success(self, task, data):
        agent, goal, _, has_key = data
        return agent == goal and (has_key or not task.params.get("key", 0))

    def features(self, task, data, step_index):
        agent, goal, key, has_key = data
        x = np.zeros(self.obs_dim)
        c = NAV_CANVAS * NAV_CANVAS
        x[agent[0] * NAV_CANVAS + agent[1]] = 1.0
        x[c + goal[0] * NAV_CANVAS + goal[1]] = 1.0
        if key is not None:
            x[2 * c + key[0] * NAV_CANVAS + key[1]] = 1.0
        x[3 * c] = 1.0 if has_key else 0.0
        target = key if key is not None else goal
        x[3 * c + 1] = (target[0] - agent[0]) / (NAV_CANVAS - 1)
        x[3 * c + 2] = (target[1] - agent[1]) / (NAV_CANVAS - 1)
        return x

    def scripted_action(self, task, data):
        agent, goal, key, _ = data
        target = key if key is not None else goal
        if agent[0] != target[0]:
            return 0 if target[0] < agent[0] else 1
        return 2 if target[1] < agent[1] else 3


def craft_recipe(task: TaskSpec) -> tuple[tuple[int, ...], tuple[int, ...], frozenset]:
    """``(recipe, traps, smelt_stages)`` fixed per task, keyed by ``task_id``."""
    return _craft_recipe(task.task_id, task.params["stages"], task.params.get("smelt", 0))


@lru_cache(maxsize=None)
def _craft_recipe(task_id: str, stages: int, n_smelt: int):
    rng = make_rng("recipe", task_id)
    recipe, traps = [], []
    for s in range(stages):
        choices = [i for i in range(1, CRAFT_ITEMS + 1) if not recipe or i != recipe[-1]]
        recipe.append(int(rng.choice(choices)))
        traps.append(int(rng.choice([i for i in range(1, CRAFT_ITEMS + 1) if i != recipe[-1]])))
    smelt = rng.choice(stages, size=n_smelt, replace=False)
    return tuple(recipe), tuple(traps), frozenset(int(s) for s in smelt)


class _Chaincraft:
    obs_dim = CRAFT_MAX_STAGES + 1 + CRAFT_SLOTS + 2
    action_count = CRAFT_ITEMS + 1

    def validate(self, task):
        p = task.params
        k = p.get("stages", 0)
        _require(1 <= k <= CRAFT_MAX_STAGES, f"{task.task_id}: stages must be in [1, {CRAFT_MAX_STAGES}]")
        _require(0 <= p.get("smelt", 0) <= k, f"{task.task_id}: smelt must be in [0, stages]")
        _require(1 <= p.get("wait_min", 1) <= p.get("wait_max", 1) <= CRAFT_MAX_WAIT,
                 f"{task.task_id}: wait band must satisfy 1 <= wait_min <= wait_max <= {CRAFT_MAX_WAIT}")
        _require(0 <= p.get("slot", 0) < CRAFT_SLOTS, f"{task.task_id}: slot must be in [0, {CRAFT_SLOTS})")

    def reset(self, task, rng):
        k = task.params["stages"]
        p = task.params
        waits = tuple(int(w) for w in rng.integers(p.get("wait_min", 1), p.get("wait_max", 1) + 1, size=k))
        # (stage, remaining smelt timer, per-stage smelt durations)
        return (0, 0, waits)

    def step(self, task, data, action):
        stage, timer, waits = data
        recipe, traps, smelt = craft_recipe(task)
        if timer > 0:
            # smelting: time passes whatever the agent does
            timer -= 1
            if timer == 0:
                stage += 1
        elif action == recipe[stage]:
            if stage in smelt:
                timer = waits[stage]
            else:
                stage += 1
        elif action == traps[stage] and stage > 0:
            stage -= 1
        data = (stage, timer, waits)
        return data, self.is_success(task, data)

    def is_success(self, task, data):
        return data[0] == task.params["stages"]

    def features(self, task, data, step_index):
        stage, timer, _ = data
        x = np.zeros(self.obs_dim)
        x[stage] = 1.0
        x[CRAFT_MAX_STAGES + 1 + task.params.get("slot", 0)] = 1.0
        x[-2] = 1.0 if timer > 0 else 0.0
        x[-1] = timer / CRAFT_MAX_WAIT
        return x

    def scripted_action(self, task, data):
        stage, timer, _ = data
        return 0 if timer > 0 else craft_recipe(task)[0][stage]


class _Pursuit:
    obs_dim = 10
    action_count = 6

    def validate(self, task):
        p = task.params
        n = p.get("size", 0)
        _require(5 <= n <= 15, f"{task.task_id}: size must be in [5, 15]")
        _require(1 <= p.get("period", 1) <= 4, f"{task.task_id}: period must be in [1, 4]")
        _require(1 <= p.get("hits", 1) <= 4, f"{task.task_id}: hits must be in [1, 4]")
        _require(2 <= p.get("spawn_min", 2) <= p.get("spawn_max", 2) <= 2 * (n // 2),
                 f"{task.task_id}: spawn band must satisfy 2 <= spawn_min <= spawn_max <= {2 * (n // 2)}")

    def _spawn(self, task, rng):
        n, lo, hi = task.params["size"], task.params["spawn_min"], task.params["spawn_max"]
        while True:
            dr, dc = (int(v) for v in rng.integers(-(n // 2), n // 2 + 1, size=2))
            if lo <= abs(dr) + abs(dc) <= hi:
                return (dr, dc, int(rng.integers(4)))

    def reset(self, task, rng):
        n = task.params["size"]
        agent = tuple(int(v) for v in rng.integers(n, size=2))
        spawns = tuple(self._spawn(task, rng) for _ in range(task.params["hits"]))
        dr, dc, heading = spawns[0]
        target = ((agent[0] + dr) % n, (agent[1] + dc) % n)
        # (agent, target, heading, hits scored, pre-drawn spawns)
        return (agent, target, heading, 0, spawns)

    def step(self, task, data, action, step_index):
        agent, target, heading, hits, spawns = data
        n, period = task.params["size"], task.params.get("period", 1)
        if action < 4:
            dr, dc = _MOVES[action]
            agent = ((agent[0] + dr) % n, (agent[1] + dc) % n)
        elif action == 4 and _torus_dist(agent, target, n) <= 1:
            hits += 1
            if hits < task.params["hits"]:
                dr, dc, heading = spawns[hits]
                target = ((agent[0] + dr) % n, (agent[1] + dc) % n)
        if hits < task.params["hits"] and (step_index + 1) % period == 0:
            dr, dc = _MOVES[heading]
            target = ((target[0] + dr) % n, (target[1] + dc) % n)
        data = (agent, target, heading, hits, spawns)
        return data, self.is_success(task, data)

    def is_success(self, task, data):
        return data[3] >= task.params["hits"]

    def features(self, task, data, step_index):
        agent, target, heading, hits, _ = data
        n, period = task.params["size"], task.params.get("period", 1)
        half = n // 2
        x = np.zeros(self.obs_dim)
        x[0] = _torus_delta(agent[0], target[0], n) / half
        x[1] = _torus_delta(agent[1], target[1], n) / half
        x[2 + heading] = 1.0
        x[6] = 1.0 if _torus_dist(agent, target, n) <= 1 else 0.0
        x[7] = hits / task.params["hits"]
        x[8] = (step_index % period) / period
        x[9] = 1.0 if (step_index + 1) % period == 0 else 0.0
        return x

    def scripted_action(self, task, data):
        agent, target, _, _, _ = data
        n = task.params["size"]
        if _torus_dist(agent, target, n) <= 1:
            return 4
        dr, dc = _torus_delta(agent[0], target[0], n), _torus_delta(agent[1], target[1], n)
        if abs(dr) >= abs(dc):
            return 0 if dr < 0 else 1
        return 2 if dc < 0 else 3


_FAMILY_IMPL = {"navigation": _Navigation(), "chaincraft": _Chaincraft(), "pursuit": _Pursuit()}


def _impl(task: TaskSpec):
    try:
        return _FAMILY_IMPL[task.family]
    except KeyError:
        raise ConfigError(f"unknown family {task.family!r}") from None


def validate_task(task: TaskSpec) -> TaskSpec:
    impl = _impl(task)
    _require(int(task.horizon_cap) >= 1, f"{task.task_id}: horizon_cap must be >= 1")
    impl.validate(task)
    return task


def obs_dim(family: str) -> int:
    return _FAMILY_IMPL[family].obs_dim


def action_count(family: str) -> int:
    return _FAMILY_IMPL[family].action_count


_REGISTRY = (
    TaskSpec("nav-5x5", "navigation", 60, {"size": 5, "key": 0, "min_path": 4, "max_path": 8}),
    TaskSpec("nav-7x7", "navigation", 60, {"size": 7, "key": 0, "min_path": 5, "max_path": 12}),
    TaskSpec("nav-key-7x7", "navigation", 60, {"size": 7, "key": 1, "min_path": 7, "max_path": 14}),
    TaskSpec("craft-4", "chaincraft", 80, {"stages": 4, "smelt": 1, "wait_min": 2, "wait_max": 3, "slot": 0}),
    TaskSpec("craft-8", "chaincraft", 80, {"stages": 8, "smelt": 4, "wait_min": 4, "wait_max": 6, "slot": 1}),
    TaskSpec("pursuit-7", "pursuit", 80, {"size": 7, "period": 3, "hits": 2, "spawn_min": 4, "spawn_max": 6}),
    TaskSpec("pursuit-9", "pursuit", 80, {"size": 9, "period": 3, "hits": 2, "spawn_min": 5, "spawn_max": 6}),
)
for _t in _REGISTRY:
    validate_task(_t)


def list_tasks() -> tuple[TaskSpec, ...]:
    return _REGISTRY


def get_task(task_id: str) -> TaskSpec:
    for t in _REGISTRY:
        if t.task_id == task_id:
            return t
    raise ConfigError(f"unknown task_id {task_id!r}")


def _make_state(task, step_index, done, success, data):
    obs = _impl(task).features(task, data, step_index)
    obs.flags.writeable = False
    return EnvState(task, step_index, done, success, data, obs)


def reset(task: TaskSpec, episode_seed: int) -> EnvState:
    known = {t.task_id for t in _REGISTRY}
    if task.task_id not in known:
        raise ConfigError(f"unknown task_id {task.task_id!r}")
    validate_task(task)
    data = _impl(task).reset(task, make_rng("reset", task.task_id, episode_seed))
    return _make_state(task, 0, False, False, data)


def step(state: EnvState, action: int) -> StepOutcome:
    task = state.task
    impl = _impl(task)
    if state.done:
        raise UsageError("cannot step a finished episode")
    if not 0 <= int(action) < impl.action_count:
        raise UsageError(f"action {action} outside [0, {impl.action_count})")
    if task.family == "pursuit":
        data, success = impl.step(task, state.data, int(action), state.step_index)
    else:
        data, success = impl.step(task, state.data, int(action))
    t = state.step_index + 1
    done = success or t >= task.horizon_cap
    nxt = _make_state(task, t, done, success, data)
    return StepOutcome(nxt, done, success)


def featurize(state: EnvState) -> np.ndarray:
    return _impl(state.task).features(state.task, state.data, state.step_index)


def success_predicate(state: EnvState) -> bool:
    return bool(_impl(state.task).is_success(state.task, state.data))


def verify(trajectory) -> int:
    """Binary return of a finished trajectory (needs ``final_state``)."""
    final = trajectory.final_state
    if not final.done:
        raise UsageError("trajectory has not terminated")
    return int(success_predicate(final))


def scripted_action(state: EnvState) -> int:
    """Near-optimal hand-written policy, used for fixtures and length checks."""
    return int(_impl(state.task).scripted_action(state.task, state.data))


@dataclass
class Episode:
    states: list
    actions: list
    final_state: EnvState

    @property
    def length(self) -> int:
        return len(self.actions)


def run_episode(task: TaskSpec, episode_seed: int, policy: Callable[[EnvState], int] = scripted_action) -> Episode:
    state = reset(task, episode_seed)
    states, actions = [], []
    while not state.done:
        a = policy(state)
        states.append(state)
        actions.append(a)
        state = step(state, a).next_state
    return Episode(states, actions, state)


# -- serialization -----------------------------------------------------------


def tasks_to_toml(tasks: Iterable[TaskSpec] = None) -> str:
    """Registry as a TOML fragment (``[[tasks]]`` tables)."""
    import tomli_w

    tasks = list(_REGISTRY if tasks is None else tasks)
    doc = {"tasks": [{"task_id": t.task_id, "family": t.family, "horizon_cap": t.horizon_cap,
                      "params": dict(t.params)} for t in tasks]}
    return tomli_w.dumps(doc)


def tasks_from_toml(text: str) -> list[TaskSpec]:
    import tomli

    doc = tomli.loads(text)
    known = {t.task_id for t in _REGISTRY}
    out = []
    for row in doc.get("tasks", []):
        _require(row.get("task_id") in known, f"unknown task_id {row.get('task_id')!r}")
        out.append(validate_task(TaskSpec(row["task_id"], row["family"], int(row["horizon_cap"]),
                                          {k: int(v) for k, v in row.get("params", {}).items()})))
    ids = [t.task_id for t in out]
    _require(len(ids) == len(set(ids)), "duplicate task_id in registry fragment")
    return out


def write_replay(path, features: np.ndarray, actions, success: bool) -> Path:
    """JSONL replay, one step per line, headed by a schema record."""
    path = Path(path)
    H = len(actions)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": "growlab.replay/1", "steps": H}) + "\n")
        for t in range(H):
            last = t == H - 1
            fh.write(json.dumps({
                "step_index": t,
                "action": int(actions[t]),
                "features": [float(v) for v in features[t]],
                "done": last,
                "success": bool(success and last),
            }) + "\n")
    return path
