import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from growlab import envsuite
from growlab.envsuite import TaskSpec
from growlab.errors import ConfigError, UsageError

TASK_IDS = [t.task_id for t in envsuite.list_tasks()]

# Registered tasks are part of the public interface; changing one changes results.
REGISTRY_SNAPSHOT = [
    ("nav-5x5", "navigation", 60, {"size": 5, "key": 0, "min_path": 4, "max_path": 8}),
    ("nav-7x7", "navigation", 60, {"size": 7, "key": 0, "min_path": 5, "max_path": 12}),
    ("nav-key-7x7", "navigation", 60, {"size": 7, "key": 1, "min_path": 7, "max_path": 14}),
    ("craft-4", "chaincraft", 80, {"stages": 4, "smelt": 1, "wait_min": 2, "wait_max": 3, "slot": 0}),
    ("craft-8", "chaincraft", 80, {"stages": 8, "smelt": 4, "wait_min": 4, "wait_max": 6, "slot": 1}),
    ("pursuit-7", "pursuit", 80, {"size": 7, "period": 3, "hits": 2, "spawn_min": 4, "spawn_max": 6}),
    ("pursuit-9", "pursuit", 80, {"size": 9, "period": 3, "hits": 2, "spawn_min": 5, "spawn_max": 6}),
]


def test_registry_snapshot():
    got = [(t.task_id, t.family, t.horizon_cap, dict(t.params)) for t in envsuite.list_tasks()]
    assert got == REGISTRY_SNAPSHOT


def test_every_family_registered():
    assert {t.family for t in envsuite.list_tasks()} == set(envsuite.FAMILIES)


def test_unknown_task_rejected():
    with pytest.raises(ConfigError):
        envsuite.get_task("nav-99")
    with pytest.raises(ConfigError):
        envsuite.reset(TaskSpec("nav-99", "navigation", 10, {"size": 5}), 0)


def test_invalid_params_rejected():
    with pytest.raises(ConfigError):
        envsuite.validate_task(TaskSpec("x", "navigation", 10, {"size": 2}))
    with pytest.raises(ConfigError):
        envsuite.validate_task(TaskSpec("x", "chaincraft", 10, {"stages": 13}))
    with pytest.raises(ConfigError):
        envsuite.validate_task(TaskSpec("x", "pursuit", 10, {"size": 7, "spawn_min": 1, "spawn_max": 3}))
    with pytest.raises(ConfigError):
        envsuite.validate_task(TaskSpec("x", "nope", 10, {}))


@pytest.mark.parametrize("task_id", TASK_IDS)
def test_reset_deterministic(task_id):
    task = envsuite.get_task(task_id)
    assert envsuite.reset(task, 7) == envsuite.reset(task, 7)
    starts = {envsuite.reset(task, s).data for s in range(20)}
    assert len(starts) > 1


@pytest.mark.parametrize("task_id", TASK_IDS)
def test_observation_shape_and_readonly(task_id):
    task = envsuite.get_task(task_id)
    s = envsuite.reset(task, 0)
    assert s.observation.shape == (envsuite.obs_dim(task.family),)
    assert not s.observation.flags.writeable
    assert np.array_equal(envsuite.featurize(s), s.observation)


@pytest.mark.parametrize("task_id", TASK_IDS)
def test_scripted_policy_solves(task_id):
    task = envsuite.get_task(task_id)
    for seed in range(10):
        ep = envsuite.run_episode(task, seed)
        assert ep.final_state.success
        assert ep.length < task.horizon_cap


def test_step_after_done_and_bad_action():
    task = envsuite.get_task("nav-5x5")
    ep = envsuite.run_episode(task, 0)
    with pytest.raises(UsageError):
        envsuite.step(ep.final_state, 0)
    with pytest.raises(UsageError):
        envsuite.step(envsuite.reset(task, 0), 4)


def test_horizon_cap_terminates_failure():
    task = envsuite.get_task("craft-8").with_horizon(5)
    s = envsuite.reset(task, 0)
    while not s.done:
        s = envsuite.step(s, 0).next_state
    assert s.step_index == 5 and not s.success


def test_navigation_fixture_path_length():
    # scripted episodes walk a shortest path: key first, then goal
    for tid in ("nav-7x7", "nav-key-7x7"):
        task = envsuite.get_task(tid)
        for seed in range(15):
            agent, goal, key, _ = envsuite.reset(task, seed).data
            want = abs(agent[0] - goal[0]) + abs(agent[1] - goal[1])
            if key is not None:
                want = (abs(agent[0] - key[0]) + abs(agent[1] - key[1])
                        + abs(key[0] - goal[0]) + abs(key[1] - goal[1]))
            lo, hi = task.params["min_path"], task.params["max_path"]
            assert lo <= want <= hi
            assert envsuite.run_episode(task, seed).length == want


def test_navigation_wall_and_key():
    task = envsuite.get_task("nav-key-7x7")
    s = envsuite.reset(task, 3)
    agent, goal, key, _ = s.data
    # walking into the top wall repeatedly leaves row 0
    for _ in range(8):
        if s.done:
            break
        s = envsuite.step(s, 0).next_state
    assert s.data[0][0] == 0
    # reaching the goal without the key is not success
    locked = envsuite.EnvState(task, 0, False, False, (goal, goal, key, False), s.observation)
    assert not envsuite.success_predicate(locked)


def test_chaincraft_fixture_length():
    # one action per stage plus the furnace time of each smelting stage
    task = envsuite.get_task("craft-8")
    recipe, traps, smelt = envsuite.craft_recipe(task)
    assert len(smelt) == task.params["smelt"]
    assert all(r != t for r, t in zip(recipe, traps))
    for seed in range(10):
        waits = envsuite.reset(task, seed).data[2]
        want = task.params["stages"] + sum(waits[s] for s in smelt)
        assert envsuite.run_episode(task, seed).length == want


def test_chaincraft_trap_regresses():
    task = envsuite.get_task("craft-4")
    recipe, traps, smelt = envsuite.craft_recipe(task)
    s = envsuite.reset(task, 0)
    # stage 0 is undone by nothing
    s = envsuite.step(s, traps[0]).next_state
    assert s.data[0] == 0
    if 0 not in smelt:
        s = envsuite.step(s, recipe[0]).next_state
        assert s.data[0] == 1
        s = envsuite.step(s, traps[1]).next_state
        assert s.data[0] == 0


def test_pursuit_strike_out_of_range_misses():
    task = envsuite.get_task("pursuit-9")
    s = envsuite.reset(task, 0)
    assert s.observation[6] == 0.0  # spawn band keeps the target out of reach
    s = envsuite.step(s, 4).next_state
    assert s.data[3] == 0


def test_no_reward_signal_exposed():
    task = envsuite.get_task("nav-5x5")
    out = envsuite.step(envsuite.reset(task, 0), 0)
    assert out.reward_signal is None


def test_verify_requires_done():
    class T:
        final_state = envsuite.reset(envsuite.get_task("nav-5x5"), 0)

    with pytest.raises(UsageError):
        envsuite.verify(T())


@settings(max_examples=60, deadline=None)
@given(task_id=st.sampled_from(TASK_IDS), seed=st.integers(0, 2**32), actions=st.lists(st.integers(0, 100), max_size=90))
def test_fuzz_bounds(task_id, seed, actions):
    task = envsuite.get_task(task_id)
    A = envsuite.action_count(task.family)
    s = envsuite.reset(task, seed)
    for a in actions:
        if s.done:
            break
        out = envsuite.step(s, a % A)
        s = out.next_state
        assert np.all(np.isfinite(s.observation))
        assert np.all(np.abs(s.observation) <= 1.0)
        assert s.step_index <= task.horizon_cap
        assert out.success == envsuite.success_predicate(s)
        assert out.done == (out.success or s.step_index >= task.horizon_cap)


@settings(max_examples=30, deadline=None)
@given(task_id=st.sampled_from(TASK_IDS), seed=st.integers(0, 2**32), actions=st.lists(st.integers(0, 6), max_size=40))
def test_transitions_pure(task_id, seed, actions):
    task = envsuite.get_task(task_id)
    A = envsuite.action_count(task.family)

    def play():
        s = envsuite.reset(task, seed)
        trace = [s]
        for a in actions:
            if s.done:
                break
            s = envsuite.step(s, a % A).next_state
            trace.append(s)
        return trace

    assert play() == play()


@pytest.mark.parametrize("task_id", TASK_IDS)
def test_step_length_cv(task_id):
    assert envsuite.run_episode(envsuite.get_task(task_id), 0).final_state.success
    from growlab.checks import step_length_cv

    assert step_length_cv(envsuite.get_task(task_id)) <= 0.3


def test_toml_roundtrip_and_duplicates():
    text = envsuite.tasks_to_toml()
    back = envsuite.tasks_from_toml(text)
    assert back == list(envsuite.list_tasks())
    one = envsuite.tasks_to_toml([envsuite.get_task("nav-5x5")] * 2)
    with pytest.raises(ConfigError):
        envsuite.tasks_from_toml(one)
    with pytest.raises(ConfigError):
        envsuite.tasks_from_toml(text.replace('"nav-5x5"', '"nav-0x0"'))


def test_replay_schema(tmp_path):
    task = envsuite.get_task("nav-5x5")
    ep = envsuite.run_episode(task, 0)
    X = np.stack([s.observation for s in ep.states])
    path = envsuite.write_replay(tmp_path / "r.jsonl", X, ep.actions, ep.final_state.success)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert lines[0]["schema"] == "growlab.replay/1"
    assert len(lines) == ep.length + 1
