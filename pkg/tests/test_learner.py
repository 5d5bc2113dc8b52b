"""Inner-loop tests: clipped double-Q target arithmetic, critic loss descent,
deterministic-policy-gradient finite differences, annealing, update cadence,
and warmup behavior."""

import numpy as np
import pytest

from helpers import fd_grad_map, rel_err

from mgrl.autodiff import ARRAY_OPS, AdamState, adam_step
from mgrl.envs import make
from mgrl.learner import (
    Agent,
    LearnerConfig,
    anneal_coefficient,
    critic_loss_grads,
    ddpg_policy_grad,
    make_agent,
    mix_gradient_maps,
    td_targets,
)
from mgrl.nets import (
    CriticSpec,
    PolicySpec,
    copy_params,
    critic_forward,
    init_policy,
    init_twin_critic,
    policy_forward,
)
from mgrl.objective import ObjectiveSpec, init_objective

TINY_OBJ = ObjectiveSpec(lstm_units=4, conv_layers=1, conv_filters=2)


def tiny_nets(state_dim=3, action_dim=2, width=4, seed=0):
    pspec = PolicySpec(state_dim=state_dim, action_dim=action_dim,
                       action_low=-1.0, action_high=1.0, width=width, layers=1)
    cspec = CriticSpec(state_dim=state_dim, action_dim=action_dim, width=width, layers=1)
    phi = init_policy(np.random.default_rng(seed), pspec)
    theta = init_twin_critic(np.random.default_rng(seed + 1), cspec)
    return pspec, cspec, phi, theta


def small_cfg(**overrides):
    base = dict(warmup_steps=0, anneal_steps=100, batch_size=4)
    base.update(overrides)
    return LearnerConfig(**base)


# -- TD targets ---------------------------------------------------------------


def test_td_targets_match_hand_recomposition():
    pspec, cspec, phi, theta = tiny_nets()
    cfg = small_cfg()
    n = 16
    rng = np.random.default_rng(3)
    rewards = rng.normal(size=(n, 1))
    next_states = rng.normal(size=(n, 3))
    dones = (rng.uniform(size=(n, 1)) < 0.3).astype(np.float64)

    y = td_targets(theta, phi, rewards, next_states, dones, cfg, pspec, cspec,
                   np.random.default_rng(77))

    # same arithmetic, assembled independently with an identically seeded draw
    check = np.random.default_rng(77)
    acts = policy_forward(ARRAY_OPS, phi, next_states, pspec)
    eps = np.clip(check.normal(0.0, cfg.target_noise, size=acts.shape),
                  -cfg.noise_clip, cfg.noise_clip)
    acts = np.clip(acts + eps, -1.0, 1.0)
    q1 = critic_forward(ARRAY_OPS, theta, next_states, acts, cspec, "q1")
    q2 = critic_forward(ARRAY_OPS, theta, next_states, acts, cspec, "q2")
    expected = rewards + cfg.gamma * (1.0 - dones) * np.minimum(q1, q2)
    assert np.array_equal(y, expected)

    # terminal transitions keep only the immediate reward
    assert np.array_equal(y[dones[:, 0] == 1.0], rewards[dones[:, 0] == 1.0])


def test_td_target_noise_is_clipped_and_scaled_by_action_bound():
    pspec = PolicySpec(state_dim=2, action_dim=1, action_low=-2.0, action_high=2.0,
                       width=4, layers=1)
    cspec = CriticSpec(state_dim=2, action_dim=1, width=4, layers=1)
    phi = init_policy(np.random.default_rng(0), pspec)
    theta = init_twin_critic(np.random.default_rng(1), cspec)
    cfg = small_cfg(target_noise=5.0)  # huge sigma: every draw hits the clip
    n = 64
    states = np.random.default_rng(2).normal(size=(n, 2))
    y = td_targets(theta, phi, np.zeros((n, 1)), states, np.zeros((n, 1)),
                   cfg, pspec, cspec, np.random.default_rng(5))
    base = policy_forward(ARRAY_OPS, phi, states, pspec)
    for sign in (-1.0, 1.0):
        acts = np.clip(base + sign * cfg.noise_clip * 2.0, -2.0, 2.0)
        q = np.minimum(
            critic_forward(ARRAY_OPS, theta, states, acts, cspec, "q1"),
            critic_forward(ARRAY_OPS, theta, states, acts, cspec, "q2"),
        )
        sign_match = cfg.gamma * q
        hits = np.isclose(y, sign_match, rtol=0, atol=1e-12)
        assert hits.any(), sign  # both clip rails are reached


def test_discount_arithmetic_literal():
    # r=1, min target Q = 10, no noise, non-terminal: y = 1 + 0.99 * 10
    assert 1.0 + 0.99 * (1.0 - 0.0) * 10.0 == pytest.approx(10.9, abs=1e-15)


# -- critic updates -----------------------------------------------------------


def test_critic_gradients_match_finite_differences():
    pspec, cspec, phi, theta = tiny_nets(state_dim=2, action_dim=1, width=3)
    rng = np.random.default_rng(9)
    states = rng.normal(size=(4, 2))
    actions = rng.uniform(-1, 1, size=(4, 1))
    targets = rng.normal(size=(4, 1))

    got, loss = critic_loss_grads(theta, states, actions, targets, cspec)

    def loss_fn(params):
        total = 0.0
        for which in ("q1", "q2"):
            q = critic_forward(ARRAY_OPS, params, states, actions, cspec, which)
            total += float(np.mean((q - targets) ** 2))
        return total

    assert loss == pytest.approx(loss_fn(theta), rel=1e-12)
    want = fd_grad_map(loss_fn, theta)
    for name in theta:
        assert rel_err(got.get(name, np.zeros_like(theta[name])), want[name]) <= 1e-5, name


def test_repeated_critic_updates_descend_loss():
    pspec, cspec, phi, theta = tiny_nets(width=8)
    rng = np.random.default_rng(4)
    states = rng.normal(size=(8, 3))
    actions = rng.uniform(-1, 1, size=(8, 2))
    targets = rng.normal(size=(8, 1))
    adam = AdamState(theta)
    losses = []
    for _ in range(60):
        grads, loss = critic_loss_grads(theta, states, actions, targets, cspec)
        losses.append(loss)
        theta = adam_step(adam, theta, grads, 1e-2)
    assert losses[-1] < 0.05 * losses[0]


def test_zero_td_error_batch_is_a_fixed_point():
    # make the twins identical so a target equal to their common output gives
    # an exactly-zero loss, zero gradients, and (from a fresh Adam state) an
    # exactly unchanged parameter set
    pspec, cspec, phi, theta = tiny_nets()
    for k in list(theta):
        if k.startswith("q2/"):
            theta[k] = theta["q1/" + k[3:]].copy()
    rng = np.random.default_rng(8)
    states = rng.normal(size=(5, 3))
    actions = rng.uniform(-1, 1, size=(5, 2))
    y = critic_forward(ARRAY_OPS, theta, states, actions, cspec, "q1")
    grads, loss = critic_loss_grads(theta, states, actions, y, cspec)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())
    stepped = adam_step(AdamState(theta), theta, grads, 1e-3)
    assert all(np.array_equal(stepped[k], theta[k]) for k in theta)


# -- policy gradient ----------------------------------------------------------


def test_ddpg_gradient_matches_finite_differences():
    pspec, cspec, phi, theta = tiny_nets(state_dim=2, action_dim=1, width=3)
    states = np.random.default_rng(12).normal(size=(5, 2))
    got, score = ddpg_policy_grad(theta, phi, states, pspec, cspec)

    def neg_q(params):
        acts = policy_forward(ARRAY_OPS, params, states, pspec)
        return -float(np.mean(critic_forward(ARRAY_OPS, theta, states, acts, cspec, "q1")))

    assert score == pytest.approx(-neg_q(phi), rel=1e-12)
    want = fd_grad_map(neg_q, phi)
    for name in phi:
        assert rel_err(got.get(name, np.zeros_like(phi[name])), want[name]) <= 1e-5, name


def test_ddpg_gradient_invariant_to_batch_duplication():
    pspec, cspec, phi, theta = tiny_nets()
    states = np.random.default_rng(1).normal(size=(6, 3))
    single, _ = ddpg_policy_grad(theta, phi, states, pspec, cspec)
    doubled, _ = ddpg_policy_grad(theta, phi, np.concatenate([states, states]), pspec, cspec)
    for name in single:
        assert np.allclose(single[name], doubled[name], rtol=0, atol=1e-12)


# -- annealing and mixing -------------------------------------------------------


def test_anneal_coefficient_endpoints_and_midpoint():
    assert anneal_coefficient(0, 10_000) == 0.0
    assert anneal_coefficient(10_000, 10_000) == 1.0
    assert anneal_coefficient(25_000, 10_000) == 1.0
    assert anneal_coefficient(5_000, 10_000) == 0.5
    assert anneal_coefficient(-3, 10_000) == 0.0
    with pytest.raises(ValueError):
        anneal_coefficient(5, 0)


def test_mix_gradient_maps():
    a = {"x": np.array([2.0]), "only_a": np.array([4.0])}
    b = {"x": np.array([-2.0]), "only_b": np.array([8.0])}
    assert mix_gradient_maps(0.0, a, b) is b
    assert mix_gradient_maps(1.0, a, b) is a
    mixed = mix_gradient_maps(0.25, a, b)
    assert mixed["x"] == pytest.approx(0.25 * 2.0 + 0.75 * -2.0)
    assert mixed["only_a"] == pytest.approx(0.25 * 4.0)
    assert mixed["only_b"] == pytest.approx(0.75 * 8.0)


# -- agent loop ---------------------------------------------------------------


def small_agent(env_name="point_mass", seed=0, **cfg_overrides):
    env = make(env_name)
    cfg = small_cfg(**cfg_overrides)
    return make_agent(env, cfg, master_seed=seed, index=0, width=8, layers=1,
                      capacity=5_000, segment_len=5)


def test_cadence_is_exactly_two_to_one():
    agent = small_agent()
    agent.collect_episode()
    flags = [agent.update_tick()["policy_updated"] for _ in range(10)]
    assert flags == [False, True] * 5
    assert agent.ticks == 10


def test_counters_track_env_steps():
    agent = small_agent()
    total = 0
    for _ in range(3):
        traj = agent.collect_episode()
        total += len(traj)
    assert agent.env_steps == total == 600


def test_warmup_uses_random_actions_and_freezes_parameters():
    agent = small_agent(warmup_steps=10_000)
    phi0 = copy_params(agent.phi)
    theta0 = copy_params(agent.theta)
    row = agent.run_episode()
    assert not agent.warmed_up
    assert agent.ticks == 0 and agent.critic_adam.t == 0
    assert all(np.array_equal(agent.phi[k], phi0[k]) for k in phi0)
    assert all(np.array_equal(agent.theta[k], theta0[k]) for k in theta0)
    assert np.isnan(row["critic_loss"])
    # uniform-random warmup actions do not follow the deterministic policy
    traj = agent.buffer._episodes[0]
    predicted = policy_forward(ARRAY_OPS, phi0, traj["states"][:-1], agent.pspec)
    assert np.max(np.abs(predicted - traj["actions"])) > 0.05


def test_updates_move_parameters_and_targets_lag():
    agent = small_agent()
    agent.collect_episode()
    phi0 = copy_params(agent.phi)
    theta0 = copy_params(agent.theta)
    for _ in range(4):
        agent.update_tick()
    assert any(not np.array_equal(agent.phi[k], phi0[k]) for k in phi0)
    assert any(not np.array_equal(agent.theta[k], theta0[k]) for k in theta0)
    # targets moved, but only a polyak fraction of the way
    for k in theta0:
        lag = np.linalg.norm(agent.theta_target[k] - theta0[k])
        live = np.linalg.norm(agent.theta[k] - theta0[k])
        assert lag <= live + 1e-12


def test_anneal_beta_ramps_with_env_steps():
    agent = small_agent(anneal_steps=400)
    agent.collect_episode()  # 200 steps with zero warmup
    assert agent.anneal_beta() == pytest.approx(0.5)
    agent.collect_episode()
    assert agent.anneal_beta() == 1.0


def test_policy_tick_with_zero_head_objective_is_a_no_op():
    agent = small_agent()
    agent.collect_episode()
    obj = init_objective(np.random.default_rng(5), TINY_OBJ)
    obj["obj/head/w"] = np.zeros_like(obj["obj/head/w"])
    obj["obj/head/b"] = np.zeros_like(obj["obj/head/b"])
    phi0 = copy_params(agent.phi)
    batch = agent.buffer.sample_segments(4, agent.sampler_rng)
    beta, value = agent.policy_tick(batch, objective=obj, ospec=TINY_OBJ, beta=1.0)
    assert beta == 1.0 and value == 0.0
    assert all(np.array_equal(agent.phi[k], phi0[k]) for k in phi0)


def test_annealed_tick_uses_learned_objective():
    agent = small_agent(anneal_steps=100)
    agent.collect_episode()  # 200 steps: beta saturates at 1
    obj = init_objective(np.random.default_rng(6), TINY_OBJ)
    row = None
    for _ in range(2):
        row = agent.update_tick(objective=obj, ospec=TINY_OBJ)
    assert row["policy_updated"] and row["beta"] == 1.0
    assert np.isfinite(row["objective_value"])


def test_seeded_agents_are_bit_reproducible():
    rows_a = []
    rows_b = []
    for rows in (rows_a, rows_b):
        agent = small_agent(seed=123)
        for _ in range(3):
            rows.append(agent.run_episode())
    for a, b in zip(rows_a, rows_b):
        assert a.keys() == b.keys()
        for k in a:
            same_nan = isinstance(a[k], float) and np.isnan(a[k]) and np.isnan(b[k])
            assert a[k] == b[k] or same_nan, k


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(gamma=1.0)
    with pytest.raises(ValueError):
        LearnerConfig(critic_lr=0.0)
    with pytest.raises(ValueError):
        LearnerConfig(batch_size=0)
