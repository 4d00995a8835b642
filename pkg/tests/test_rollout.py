import json

import numpy as np
import pytest

from growlab import envsuite, policy
from growlab.errors import ConfigError
from growlab.rollout import collect_group, dump_groups, env_seed


@pytest.fixture
def nav():
    task = envsuite.get_task("nav-7x7")
    layout = policy.make_layout(envsuite.obs_dim(task.family), [16], envsuite.action_count(task.family))
    return task, policy.init_params(0, layout)


def test_group_shape_and_order(nav):
    task, params = nav
    g = collect_group(task, params, 8, seed=11)
    assert g.G == 8 and [t.env_index for t in g.trajectories] == list(range(8))
    assert g.old_policy_version == params.version
    for t in g.trajectories:
        assert t.features.shape == (t.length, envsuite.obs_dim("navigation"))
        assert t.final_state.done
        assert t.length == t.final_state.step_index
    assert g.env_steps == int(g.lengths.sum())


def test_deterministic_and_worker_invariant(nav):
    task, params = nav
    a = collect_group(task, params, 8, seed=3)
    for workers in (1, 3, 8):
        b = collect_group(task, params, 8, seed=3, workers=workers)
        for ta, tb in zip(a.trajectories, b.trajectories):
            assert np.array_equal(ta.actions, tb.actions)
            assert np.array_equal(ta.old_log_probs, tb.old_log_probs)
            assert np.array_equal(ta.features, tb.features)


def test_group_size_independent_prefix(nav):
    # environment i depends only on (seed, i): a larger group extends a smaller one
    task, params = nav
    small, big = collect_group(task, params, 4, seed=5), collect_group(task, params, 8, seed=5)
    for ta, tb in zip(small.trajectories, big.trajectories):
        assert np.array_equal(ta.actions, tb.actions)


def test_logged_logprobs_match_policy(nav):
    task, params = nav
    g = collect_group(task, params, 4, seed=2)
    for t in g.trajectories:
        lp = policy.log_probs_batch(params, t.features)[np.arange(t.length), t.actions]
        assert np.array_equal(lp, t.old_log_probs)


def test_features_replay_environment(nav):
    task, params = nav
    g = collect_group(task, params, 3, seed=9)
    for i, t in enumerate(g.trajectories):
        s = envsuite.reset(task, env_seed(9, i))
        for x, a in zip(t.features, t.actions):
            assert np.array_equal(s.observation, x)
            s = envsuite.step(s, int(a)).next_state
        assert s == t.final_state
        assert t.episodic_return == int(s.success)


def test_group_size_validated(nav):
    task, params = nav
    with pytest.raises(ConfigError):
        collect_group(task, params, 1, seed=0)


def test_dump(nav, tmp_path):
    task, params = nav
    g = collect_group(task, params, 2, seed=0)
    lines = dump_groups(tmp_path / "g.jsonl", [g]).read_text().splitlines()
    assert json.loads(lines[0])["schema"] == "growlab.rollouts/1"
    assert len(lines) == 3
