import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from growlab import checks, growcore, policy
from growlab.errors import ConfigError, UsageError
from growlab.growcore import AdvantageBatch, SampleGroup
from growlab.mlp import Layout
from growlab.policy import PolicyParams
from growlab.seeding import make_rng

LAYOUT = Layout(6, (8,), 4)


def _group(seed, lengths, returns, layout=LAYOUT):
    rng = make_rng("gc", seed)
    old = checks.random_params(rng, layout)
    return old, checks.synthetic_group(rng, old, lengths, returns)


def _single(log_ratio, adv, layout=Layout(1, (), 2)):
    """One-sample batch whose ratio at zero parameters is exp(log_ratio)."""
    params = PolicyParams(np.zeros(layout.n_params), layout)
    lp = policy.log_prob(params, np.zeros(1), 0)
    sg = SampleGroup(np.zeros((1, 1)), np.array([0]), np.array([lp - log_ratio]), np.array([0]), np.array([1]),
                     np.array([1.0]), np.array([1]), np.array([1.0]), 0.9, 1.0, 0.0)
    return params, AdvantageBatch(sg, np.array([float(adv)]), False)


# -- reward propagation ---------------------------------------------------------


def test_rewards_hand_values():
    assert growcore.discounted_rewards(3, 1.0, 0.5) == [0.25, 0.5, 1.0]
    assert growcore.discounted_rewards(4, 0.0, 0.9) == [0.0] * 4
    assert growcore.discounted_rewards(5, 1.0, 1.0) == [1.0] * 5


def test_decompose_layout():
    _, g = _group(0, [3, 5, 2], [1, 0, 1])
    sg = growcore.decompose(g, 0.5)
    assert len(sg) == 10
    assert sg.step_index.tolist() == [1, 2, 3, 1, 2, 3, 4, 5, 1, 2]
    assert sg.traj_index.tolist() == [0, 0, 0, 1, 1, 1, 1, 1, 2, 2]
    assert sg.rewards.tolist() == [0.25, 0.5, 1.0, 0, 0, 0, 0, 0, 0.5, 1.0]
    assert np.allclose(sg.weights, [1 / 9] * 3 + [1 / 15] * 5 + [1 / 6] * 2)
    s = sg.samples[4]
    assert (s.traj_index, s.step_index, s.H, s.discounted_reward) == (1, 2, 5, 0.0)


@pytest.mark.parametrize("gamma", [0.0, -0.1, 1.01])
def test_decompose_gamma_range(gamma):
    _, g = _group(0, [2, 2], [1, 0])
    with pytest.raises(ConfigError):
        growcore.decompose(g, gamma)


@settings(max_examples=200, deadline=None)
@given(H=st.integers(1, 200), gamma=st.floats(0.01, 1.0), R=st.sampled_from([0.0, 1.0]))
def test_reward_bounds_and_monotonic(H, gamma, R):
    r = growcore.discounted_rewards(H, R, gamma)
    assert all(0.0 <= v <= 1.0 for v in r)
    assert r[-1] == R
    if R == 1.0 and gamma < 1.0:
        assert all(a < b for a, b in zip(r, r[1:])) or min(r) == 0.0


# -- statistics and normalization -----------------------------------------------


def _sg_from_rewards(rewards):
    rng = make_rng("r")
    r = np.asarray(rewards, dtype=np.float64)
    return checks.synthetic_samples(rng, [len(r)], rewards_fn=lambda N: r)


def test_group_stats_hand():
    sg = _sg_from_rewards([1, 1, 0, 0])
    assert growcore.group_stats(sg) == (0.5, 0.5)
    assert growcore.normalize_advantages(sg).advantages.tolist() == [1, 1, -1, -1]


def test_group_stats_two_pass_oracle():
    _, g = _group(1, [7, 7, 3, 9], [1, 1, 0, 1])
    sg = growcore.decompose(g, 0.9)
    r = [float(v) for v in sg.rewards]
    mu = math.fsum(r) / len(r)
    sd = math.sqrt(math.fsum((v - mu) ** 2 for v in r) / len(r))
    assert abs(sg.mu - mu) <= 1e-12 and abs(sg.sigma - sd) <= 1e-12


def test_group_stats_empty():
    sg = _sg_from_rewards([1.0])
    sg.rewards = np.zeros(0)
    with pytest.raises(UsageError):
        growcore.group_stats(sg)


def test_degenerate_groups():
    for rewards in ([0.0] * 6, [0.7] * 3):
        batch = growcore.normalize_advantages(_sg_from_rewards(rewards))
        assert batch.degenerate and np.all(batch.advantages == 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=60))
def test_normalization_property(rewards):
    sg = _sg_from_rewards(rewards)
    batch = growcore.normalize_advantages(sg)
    if batch.degenerate:
        assert np.std(rewards) <= growcore.SIGMA_FLOOR
        return
    a = batch.advantages
    assert abs(a.mean()) <= 1e-9 and abs(a.std() - 1) <= 1e-9
    # strictly increasing affine map: the best sample keeps the best advantage
    assert a[np.argmax(sg.rewards)] == a.max()


def test_mu_equals_S_at_gamma_one():
    _, g = _group(2, [6] * 8, [1, 0, 0, 1, 1, 0, 0, 0])
    sg = growcore.decompose(g, 1.0)
    assert sg.mu == growcore.group_return_mean(g) == 0.375


@pytest.mark.parametrize("gamma", [0.9, 0.95, 0.995])
def test_S_equals_mu_over_C_uniform(gamma):
    _, g = _group(3, [11] * 8, [1, 1, 0, 1, 0, 0, 1, 0])
    sg = growcore.decompose(g, gamma)
    S = growcore.group_return_mean(g)
    assert abs(S - sg.mu / growcore.avg_discount_coeff(gamma, 11)) <= 1e-9


def test_group_return_mean_hand():
    _, g = _group(0, [2] * 8, [1, 1, 0, 0, 0, 0, 0, 0])
    assert growcore.group_return_mean(g) == 0.25
    _, g = _group(0, [2] * 3, [1, 1, 1])
    assert growcore.group_return_mean(g) == 1.0


# -- ratio and clipped objective ------------------------------------------------


def test_ratio_identity_and_doubling():
    layout = Layout(1, (), 4)
    old = PolicyParams(np.zeros(layout.n_params), layout)
    _, sample_batch = _single(0.0, 1.0, layout)
    sg = sample_batch.samples
    sg.actions = np.array([2])
    sg.old_log_probs = np.array([policy.log_prob(old, np.zeros(1), 2)])
    assert growcore.ratios(old, sg)[0] == 1.0
    assert growcore.ratio(old, sg.samples[0]) == 1.0
    # old policy is uniform over 4 actions; logit ln 3 on action 2 gives it p = 1/2
    theta = np.zeros(layout.n_params)
    theta[-4 + 2] = math.log(3.0)
    assert abs(growcore.ratios(PolicyParams(theta, layout), sg)[0] - 2.0) <= 1e-9


def test_ratio_positive():
    rng = make_rng("pos")
    old, g = _group(0, [4, 4], [1, 0])
    sg = growcore.decompose(g, 0.9)
    for _ in range(20):
        assert np.all(growcore.ratios(checks.perturbed(rng, old, 2.0), sg) > 0)


def test_clip_hand_values():
    params, batch = _single(math.log(1.5), 1.0)
    assert abs(growcore.clipped_objective(batch, params, 0.2) - 1.2) <= 1e-12
    params, batch = _single(math.log(0.5), -1.0)
    assert abs(growcore.clipped_objective(batch, params, 0.2) + 0.8) <= 1e-12
    # unclipped side: rho inside the band
    params, batch = _single(math.log(1.1), 1.0)
    assert abs(growcore.clipped_objective(batch, params, 0.2) - 1.1) <= 1e-12


def test_binding_clip_zero_gradient():
    for log_ratio, adv in ((math.log(1.5), 1.0), (math.log(0.5), -1.0)):
        params, batch = _single(log_ratio, adv)
        assert np.all(growcore.objective_gradient(batch, params, 0.2) == 0)
        assert growcore.clip_fraction(batch, params, 0.2) == 1.0
    # on the non-binding side of the clip the gradient flows
    params, batch = _single(math.log(0.5), 1.0)
    assert np.any(growcore.objective_gradient(batch, params, 0.2) != 0)


def test_identity_point():
    old, g = _group(4, [5, 9, 3, 7], [1, 0, 1, 1])
    batch = growcore.normalize_advantages(growcore.decompose(g, 0.995))
    sg = batch.samples
    rho = growcore.ratios(old, sg)
    assert np.all(rho == 1.0)
    want = math.fsum(math.fsum(batch.advantages[sg.traj_index == i]) / h for i, h in enumerate(sg.lengths)) / sg.G
    assert abs(growcore.clipped_objective(batch, old, 0.2) - want) <= 1e-12


def test_objective_loop_oracle():
    rng = make_rng("loop")
    old, g = _group(5, [4, 6, 3], [1, 0, 1])
    new = checks.perturbed(rng, old, 0.4)
    batch = growcore.normalize_advantages(growcore.decompose(g, 0.9))
    sg = batch.samples
    total = 0.0
    for n, s in enumerate(sg.samples):
        rho = growcore.ratio(new, s)
        A = batch.advantages[n]
        total += min(rho * A, min(max(rho, 0.8), 1.2) * A) / (sg.G * s.H)
    assert abs(growcore.clipped_objective(batch, new, 0.2) - total) <= 1e-12


def test_eps_range():
    params, batch = _single(0.0, 1.0)
    with pytest.raises(ConfigError):
        growcore.clipped_objective(batch, params, 0.0)


def test_degenerate_zero_gradient():
    old, g = _group(6, [4, 4], [0, 0])
    batch = growcore.normalize_advantages(growcore.decompose(g, 0.9))
    assert batch.degenerate
    assert np.all(growcore.objective_gradient(batch, old, 0.2) == 0)


def test_gradient_fd_nav_sized_policy():
    # about 244 parameters
    layout = Layout(10, (16,), 4)
    assert 200 <= layout.n_params <= 500
    rng = make_rng("fd244")
    done = 0
    while done < 5:
        old = checks.random_params(rng, layout)
        new = checks.perturbed(rng, old, 0.3)
        g = checks.synthetic_group(rng, old, [5, 3, 6, 4], [1, 0, 1, 0])
        batch = growcore.normalize_advantages(growcore.decompose(g, 0.9))
        rho = growcore.ratios(new, batch.samples)
        if np.min(np.abs(np.abs(rho - 1) - 0.2)) < 1e-3:
            continue
        assert checks.objective_fd_error(new, batch, 0.2) <= 1e-4
        done += 1


def test_kl_term_gradient_fd():
    rng = make_rng("kl")
    old, g = _group(7, [3, 4], [1, 0])
    new = checks.perturbed(rng, old, 0.05)
    batch = growcore.normalize_advantages(growcore.decompose(g, 0.9))
    coef = 0.3

    def f(theta):
        p = PolicyParams(theta, new.layout)
        rho = growcore.ratios(p, batch.samples)
        kl = np.sum(batch.samples.weights * (1 / rho + np.log(rho) - 1))
        return growcore.clipped_objective(batch, p, 0.2) - coef * kl

    rho = growcore.ratios(new, batch.samples)
    assert np.all(np.abs(rho - 1) < 0.19)
    num = policy.central_difference(f, new.theta, 1e-5)
    assert policy.relative_error(growcore.objective_gradient(batch, new, 0.2, coef), num) <= 1e-4


# -- surrogate analysis ---------------------------------------------------------


def test_c_gamma_hand_and_limits():
    assert growcore.avg_discount_coeff(0.5, 2) == 0.75
    assert growcore.avg_discount_coeff(0.5, 2) == (0.5 + 1.0) / 2
    assert growcore.avg_discount_coeff(0.3, 1) == 1.0
    assert growcore.avg_discount_coeff(1.0, 50) == 1.0
    with pytest.raises(ConfigError):
        growcore.avg_discount_coeff(0.9, 0)


@settings(max_examples=300, deadline=None)
@given(gamma=st.floats(1e-4, 1 - 1e-9), H=st.integers(1, 300))
def test_c_gamma_summation_oracle(gamma, H):
    c = growcore.avg_discount_coeff(gamma, H)
    assert abs(c - math.fsum(gamma ** k for k in range(H)) / H) <= 1e-12
    assert 0.0 < c <= 1.0
    if H >= 2:
        assert c < 1.0


def _decomposition_oracle(group, params, gamma):
    """Term-by-term sums with Python floats."""
    trajs = group.trajectories
    G = len(trajs)
    H = trajs[0].length
    C = math.fsum(gamma ** (H - t) for t in range(1, H + 1)) / H
    S = math.fsum(t.episodic_return for t in trajs) / G
    J_traj = J_step = 0.0
    for tr in trajs:
        lp = policy.log_probs_batch(params, tr.features)[np.arange(tr.length), tr.actions]
        R = tr.episodic_return
        for t in range(1, tr.length + 1):
            rho = math.exp(lp[t - 1] - tr.old_log_probs[t - 1])
            J_traj += rho * (R - S) / (G * tr.length)
            J_step += rho * (gamma ** (tr.length - t) - C) * R / (G * tr.length)
    return C, S, J_traj, J_step


@pytest.mark.parametrize("seed", range(10))
def test_decomposition_matches_oracle(seed):
    rng = make_rng("dec", seed)
    old, g = _group(seed, [int(rng.integers(5, 41))] * 8, rng.integers(0, 2, 8))
    new = checks.perturbed(rng, old, 0.2)
    gamma = float(rng.choice([0.9, 0.95, 0.995]))
    rep = growcore.surrogate_decomposition(g, new, gamma)
    C, S, J_traj, J_step = _decomposition_oracle(g, new, gamma)
    assert rep.uniform_H
    assert abs(rep.C_gamma - C) <= 1e-12 and rep.S == S
    assert abs(rep.J_traj - J_traj) <= 1e-12 and abs(rep.J_step - J_step) <= 1e-12
    assert abs(rep.residual) <= 1e-9 * max(1.0, abs(rep.J_full))
    assert abs(rep.mu - C * S) <= 1e-12


def test_decomposition_limits():
    old, g = _group(8, [6] * 4, [0, 0, 0, 0])
    rep = growcore.surrogate_decomposition(g, old, 0.9)
    assert rep.J_traj == 0 and rep.J_step == 0 and rep.J_full == 0
    old, g = _group(9, [6] * 4, [1, 0, 1, 0])
    new = checks.perturbed(make_rng("lim"), old, 0.2)
    rep = growcore.surrogate_decomposition(g, new, 1.0)
    assert rep.C_gamma == 1.0 and rep.J_step == 0.0
    assert abs(rep.J_full - rep.J_traj) <= 1e-15


def test_nonuniform_reports_flag():
    old, g = _group(10, [4, 9, 6, 12], [1, 1, 0, 1])
    rep = growcore.surrogate_decomposition(g, old, 0.9)
    assert not rep.uniform_H
    back = json.loads(rep.to_json())
    assert set(back) == {"J_full", "C_gamma", "S", "mu", "J_traj", "J_step", "residual", "uniform_H"}


def test_advantages_csv(tmp_path):
    _, g = _group(0, [3, 2], [1, 0])
    batch = growcore.normalize_advantages(growcore.decompose(g, 0.5))
    lines = growcore.write_advantages_csv(tmp_path / "a.csv", batch).read_text().splitlines()
    assert lines[0] == "traj_index,step_index,action,reward,advantage"
    assert len(lines) == 6
