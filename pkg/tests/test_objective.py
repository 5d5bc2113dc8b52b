"""Learned-objective tests: embedding arithmetic, recurrence wiring against an
independent numpy reimplementation, output bounds, gradient-path exclusivity,
and finite-difference checks of the policy gradient."""

import numpy as np
import pytest

from helpers import fd_grad_map, rel_err

from mgrl.autodiff import ARRAY_OPS, Graph, GraphOps, backward, grad_values
from mgrl.envs import make, random_policy, rollout
from mgrl.nets import (
    CriticSpec,
    PolicySpec,
    bind,
    bind_const,
    critic_forward,
    init_policy,
    init_twin_critic,
    param_count,
    policy_forward,
)
from mgrl.objective import (
    ObjectiveSpec,
    action_embed,
    init_objective,
    objective_forward,
    objective_policy_grad,
    segment_values,
)
from mgrl.replay import ReplayBuffer

TINY = ObjectiveSpec(lstm_units=5, conv_layers=2, conv_filters=4)


def tiny_policy(state_dim=3, action_dim=2, seed=1):
    pspec = PolicySpec(
        state_dim=state_dim, action_dim=action_dim, width=4, layers=1,
        action_low=-1.0, action_high=1.0,
    )
    return pspec, init_policy(np.random.default_rng(seed), pspec)


def segment_inputs(rng, b, k, action_dim, state_dim=3):
    return {
        "states": rng.normal(size=(b, k, state_dim)),
        "buffer_actions": rng.uniform(-1, 1, size=(b, k, action_dim)),
        "rewards": rng.normal(size=(b, k)),
        "values": rng.normal(size=(b, k)),
        "next_values": rng.normal(size=(b, k)),
        "time_frac": np.tile(np.linspace(0.0, 1.0, k), (b, 1)),
    }


def eval_objective(obj_params, spec, pspec, policy_params, seg):
    """Array-path objective value with critic values held fixed."""
    acts = [
        policy_forward(ARRAY_OPS, policy_params, seg["states"][:, t], pspec)
        for t in range(seg["states"].shape[1])
    ]
    out = objective_forward(
        ARRAY_OPS, obj_params, spec, acts, seg["buffer_actions"],
        seg["rewards"], seg["values"], seg["next_values"], seg["time_frac"],
    )
    return float(np.asarray(out).item())


def taped_objective(obj_params, spec, pspec, policy_params, seg, with_steps=False):
    g = Graph()
    ops = GraphOps(g)
    phi = bind(ops, policy_params)
    alpha = bind_const(ops, obj_params)
    acts = [
        policy_forward(ops, phi, g.constant(seg["states"][:, t]), pspec)
        for t in range(seg["states"].shape[1])
    ]
    out = objective_forward(
        ops, alpha, spec, acts, seg["buffer_actions"],
        seg["rewards"], seg["values"], seg["next_values"], seg["time_frac"],
        with_steps=with_steps,
    )
    return g, out


# -- action embedding ---------------------------------------------------------


def test_single_filter_embed_matches_hand_formula():
    # one kernel-size-1 filter with weights [1, 1]: each action dim maps to
    # a_buffer + a_policy, and the mean over dims of [2+0, 4+0] is 3
    spec = ObjectiveSpec(conv_layers=1, conv_filters=1)
    handles = {"obj/conv0/w": np.array([[1.0], [1.0]])}
    out = action_embed(ARRAY_OPS, handles, spec, np.array([2.0, 4.0]), np.array([0.0, 0.0]))
    assert out.shape == (1, 1)
    assert out.item() == pytest.approx(3.0, abs=0.0)


def test_embed_invariant_to_dim_duplication_and_permutation():
    rng = np.random.default_rng(7)
    spec = ObjectiveSpec(conv_layers=2, conv_filters=6)
    handles = {
        "obj/conv0/w": rng.normal(size=(2, 6)),
        "obj/conv1/w": rng.normal(size=(6, 6)),
    }
    buf = rng.normal(size=(3, 4))
    cur = rng.normal(size=(3, 4))
    base = action_embed(ARRAY_OPS, handles, spec, buf, cur)
    doubled = action_embed(
        ARRAY_OPS, handles, spec, np.tile(buf, (1, 2)), np.tile(cur, (1, 2))
    )
    perm = rng.permutation(4)
    shuffled = action_embed(ARRAY_OPS, handles, spec, buf[:, perm], cur[:, perm])
    assert np.max(np.abs(base - doubled)) <= 1e-12
    assert np.max(np.abs(base - shuffled)) <= 1e-12


def test_embed_output_width_independent_of_action_dim():
    rng = np.random.default_rng(3)
    params = init_objective(rng, TINY)
    for d in (1, 2, 5):
        out = action_embed(
            ARRAY_OPS, params, TINY, rng.normal(size=(2, d)), rng.normal(size=(2, d))
        )
        assert out.shape == (2, TINY.conv_filters)


def test_embed_rejects_mismatched_action_dims():
    params = init_objective(np.random.default_rng(0), TINY)
    with pytest.raises(ValueError):
        action_embed(ARRAY_OPS, params, TINY, np.zeros((2, 3)), np.zeros((2, 2)))


# -- construction -------------------------------------------------------------


def test_parameter_names_and_count():
    spec = ObjectiveSpec(lstm_units=32, conv_layers=2, conv_filters=16)
    params = init_objective(np.random.default_rng(0), spec)
    assert set(params) == {
        "obj/conv0/w", "obj/conv1/w", "obj/lstm/wx", "obj/lstm/wh",
        "obj/lstm/b", "obj/head/w", "obj/head/b",
    }
    w = spec.input_width
    expected = 2 * 16 + 16 * 16 + w * 128 + 32 * 128 + 128 + 32 + 1
    assert param_count(params) == expected
    assert params["obj/lstm/wx"].shape == (w, 128)


def test_input_width_tracks_ablation_flags():
    full = ObjectiveSpec()
    assert full.input_width == full.conv_filters + 4
    assert ObjectiveSpec(drop_time=True).input_width == full.input_width - 1
    assert ObjectiveSpec(drop_value=True).input_width == full.input_width - 1
    assert ObjectiveSpec(drop_next_value=True).input_width == full.input_width - 1
    assert (
        ObjectiveSpec(drop_time=True, drop_value=True, drop_next_value=True).input_width
        == full.conv_filters + 1
    )


def test_init_rejects_bad_specs():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        init_objective(rng, ObjectiveSpec(eta=0.0))
    with pytest.raises(ValueError):
        init_objective(rng, ObjectiveSpec(conv_layers=2, conv_filters=3))


# -- forward ------------------------------------------------------------------


def test_forward_matches_independent_recurrence():
    """Re-derive the whole forward pass with plain numpy: reverse-time gated
    recurrence, per-step bounded head, batch-mean of per-segment sums."""
    rng = np.random.default_rng(11)
    spec = ObjectiveSpec(lstm_units=3, conv_layers=1, conv_filters=2, eta=10.0)
    params = init_objective(rng, spec)
    pspec, phi = tiny_policy()
    b, k = 2, 3
    seg = segment_inputs(rng, b, k, pspec.action_dim)

    def sigmoid(x):
        return 1.0 / (1.0 + np.exp(-x))

    u = spec.lstm_units
    h = np.zeros((b, u))
    c = np.zeros((b, u))
    per_step = {}
    for t in reversed(range(k)):
        cur = policy_forward(ARRAY_OPS, phi, seg["states"][:, t], pspec)
        pair = np.stack([seg["buffer_actions"][:, t].ravel(), cur.ravel()], axis=1)
        emb = (pair @ params["obj/conv0/w"]).reshape(b, pspec.action_dim, 2).mean(axis=1)
        x = np.concatenate(
            [
                seg["rewards"][:, t : t + 1],
                seg["values"][:, t : t + 1],
                seg["next_values"][:, t : t + 1],
                seg["time_frac"][:, t : t + 1],
                emb,
            ],
            axis=1,
        )
        z = x @ params["obj/lstm/wx"] + h @ params["obj/lstm/wh"] + params["obj/lstm/b"]
        c = sigmoid(z[:, u : 2 * u]) * c + sigmoid(z[:, :u]) * np.tanh(z[:, 2 * u : 3 * u])
        h = sigmoid(z[:, 3 * u :]) * np.tanh(c)
        raw = h @ params["obj/head/w"] + params["obj/head/b"]
        per_step[t] = spec.eta * np.tanh(raw / spec.eta)
    expected = float(np.sum(np.stack([per_step[t] for t in range(k)]), axis=0).mean())

    g, (total, steps) = taped_objective(params, spec, pspec, phi, seg, with_steps=True)
    assert total.value.item() == pytest.approx(expected, rel=1e-12)
    for t in range(k):
        assert np.allclose(steps[t].value, per_step[t], rtol=0, atol=1e-12)


def test_graph_and_array_paths_agree_bitwise():
    rng = np.random.default_rng(5)
    params = init_objective(rng, TINY)
    pspec, phi = tiny_policy()
    seg = segment_inputs(rng, 3, 4, pspec.action_dim)
    g, total = taped_objective(params, TINY, pspec, phi, seg)
    assert total.value.item() == eval_objective(params, TINY, pspec, phi, seg)


def test_per_step_bound_and_total_bound():
    # blow up the head so the tanh saturates: per-step outputs must stay
    # inside [-eta, eta] and the total inside segment_len * eta
    rng = np.random.default_rng(9)
    spec = ObjectiveSpec(lstm_units=4, conv_layers=1, conv_filters=2, eta=2.5)
    params = init_objective(rng, spec)
    params["obj/head/w"] = rng.normal(size=(4, 1)) * 1e6
    params["obj/head/b"] = np.array([1e5])
    pspec, phi = tiny_policy()
    k = 6
    seg = segment_inputs(rng, 2, k, pspec.action_dim)
    g, (total, steps) = taped_objective(params, spec, pspec, phi, seg, with_steps=True)
    for s in steps:
        assert np.all(np.abs(s.value) <= spec.eta)
    assert abs(total.value.item()) <= k * spec.eta
    assert max(np.max(np.abs(s.value)) for s in steps) > 0.99 * spec.eta  # saturation hit


def test_zero_head_gives_zero_value_and_zero_policy_gradient():
    rng = np.random.default_rng(2)
    params = init_objective(rng, TINY)
    params["obj/head/w"] = np.zeros_like(params["obj/head/w"])
    params["obj/head/b"] = np.zeros_like(params["obj/head/b"])
    pspec, phi = tiny_policy()
    seg = segment_inputs(rng, 2, 3, pspec.action_dim)
    g, total = taped_objective(params, TINY, pspec, phi, seg)
    assert total.value.item() == 0.0
    grads = grad_values(backward(g, total, phi.keys()))
    for name, arr in grads.items():
        assert np.all(arr == 0.0), name


def test_reversed_segment_changes_value():
    pspec, phi = tiny_policy()
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        params = init_objective(rng, TINY)
        seg = segment_inputs(rng, 1, 5, pspec.action_dim)
        flipped = {
            key: (arr[:, ::-1].copy() if arr.ndim >= 2 and arr.shape[1] == 5 else arr)
            for key, arr in seg.items()
        }
        a = eval_objective(params, TINY, pspec, phi, seg)
        b = eval_objective(params, TINY, pspec, phi, flipped)
        assert abs(a - b) > 1e-9


def test_same_objective_runs_on_action_dim_1_and_2():
    rng = np.random.default_rng(4)
    params = init_objective(rng, TINY)
    for d in (1, 2):
        pspec, phi = tiny_policy(action_dim=d, seed=d)
        seg = segment_inputs(rng, 2, 3, d)
        val = eval_objective(params, TINY, pspec, phi, seg)
        assert np.isfinite(val)


def test_ablation_variants_run_and_use_narrower_inputs():
    rng = np.random.default_rng(6)
    pspec, phi = tiny_policy()
    seg = segment_inputs(rng, 2, 3, pspec.action_dim)
    for flag in ("drop_time", "drop_value", "drop_next_value"):
        spec = ObjectiveSpec(lstm_units=5, conv_layers=2, conv_filters=4, **{flag: True})
        params = init_objective(np.random.default_rng(6), spec)
        assert params["obj/lstm/wx"].shape[0] == spec.input_width
        assert np.isfinite(eval_objective(params, spec, pspec, phi, seg))


def test_length_mismatch_raises():
    rng = np.random.default_rng(8)
    params = init_objective(rng, TINY)
    pspec, phi = tiny_policy()
    seg = segment_inputs(rng, 2, 3, pspec.action_dim)
    acts = [
        policy_forward(ARRAY_OPS, phi, seg["states"][:, t], pspec) for t in range(3)
    ]
    with pytest.raises(ValueError):
        objective_forward(
            ARRAY_OPS, params, TINY, acts, seg["buffer_actions"],
            seg["rewards"][:, :2], seg["values"], seg["next_values"], seg["time_frac"],
        )
    with pytest.raises(ValueError):
        objective_forward(
            ARRAY_OPS, params, TINY, [], seg["buffer_actions"], seg["rewards"],
            seg["values"], seg["next_values"], seg["time_frac"],
        )


# -- gradients ----------------------------------------------------------------


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    params = init_objective(rng, TINY)
    pspec, phi = tiny_policy(state_dim=2, action_dim=2)
    assert param_count(phi) <= 60
    seg = segment_inputs(rng, 2, 3, 2, state_dim=2)

    g, total = taped_objective(params, TINY, pspec, phi, seg)
    got = grad_values(backward(g, total, phi.keys()))
    want = fd_grad_map(lambda p: eval_objective(params, TINY, pspec, p, seg), phi)
    for name in phi:
        assert rel_err(got.get(name, 0.0 * phi[name]), want[name]) <= 1e-6, name


def test_objective_gradient_matches_finite_differences():
    # the meta side: same scalar differentiated w.r.t. alpha instead of phi
    rng = np.random.default_rng(14)
    spec = ObjectiveSpec(lstm_units=3, conv_layers=2, conv_filters=2)
    params = init_objective(rng, spec)
    pspec, phi = tiny_policy(state_dim=2, action_dim=1)
    seg = segment_inputs(rng, 2, 3, 1, state_dim=2)

    g = Graph()
    ops = GraphOps(g)
    alpha = bind(ops, params)
    ph = bind(ops, phi)
    acts = [
        policy_forward(ops, ph, g.constant(seg["states"][:, t]), pspec) for t in range(3)
    ]
    total = objective_forward(
        ops, alpha, spec, acts, seg["buffer_actions"], seg["rewards"],
        seg["values"], seg["next_values"], seg["time_frac"],
    )
    got = grad_values(backward(g, total, params.keys()))
    want = fd_grad_map(lambda p: eval_objective(p, spec, pspec, phi, seg), params)
    for name in params:
        assert rel_err(got.get(name, 0.0 * params[name]), want[name]) <= 1e-6, name


def test_gradient_blind_to_critic_values_fed_through_stop_gradient():
    """Feeding V as gradient-stopped critic outputs recorded on the same graph
    must give bit-identical policy gradients to feeding plain constants."""
    rng = np.random.default_rng(15)
    params = init_objective(rng, TINY)
    pspec, phi = tiny_policy(state_dim=2, action_dim=2)
    cspec = CriticSpec(state_dim=2, action_dim=2, width=4, layers=1)
    theta = init_twin_critic(np.random.default_rng(21), cspec)
    k = 3
    seg = segment_inputs(rng, 2, k, 2, state_dim=2)

    def build(feed_live_values):
        g = Graph()
        ops = GraphOps(g)
        ph = bind(ops, phi)
        al = bind_const(ops, params)
        th = bind(ops, theta)
        acts = [
            policy_forward(ops, ph, g.constant(seg["states"][:, t]), pspec)
            for t in range(k)
        ]
        vals = [
            ops.stop_gradient(
                critic_forward(ops, th, g.constant(seg["states"][:, t]), acts[t], cspec)
            )
            for t in range(k)
        ]
        if not feed_live_values:
            vals = [ops.constant(v.value) for v in vals]
        total = objective_forward(
            ops, al, TINY, acts, seg["buffer_actions"], seg["rewards"],
            vals, seg["next_values"], seg["time_frac"],
        )
        return grad_values(backward(g, total, phi.keys()))

    live = build(True)
    detached = build(False)
    assert set(live) == set(detached)
    for name in live:
        assert np.array_equal(live[name], detached[name]), name


# -- segment plumbing ---------------------------------------------------------


def collect_batch(env_name, seed, episodes=3, segment_len=5):
    env = make(env_name)
    buf = ReplayBuffer(capacity=10_000, segment_len=segment_len)
    rng = np.random.default_rng(seed)
    for e in range(episodes):
        buf.add(rollout(env, random_policy(env, rng), np.random.default_rng(seed + e)))
    return env, buf.sample_segments(4, rng)


def test_segment_values_shapes_and_terminal_mask():
    env, batch = collect_batch("point_mass", 33)
    pspec = PolicySpec.for_env(env.spec, width=8, layers=1)
    cspec = CriticSpec(
        state_dim=env.spec.state_dim, action_dim=env.spec.action_dim, width=8, layers=1
    )
    phi = init_policy(np.random.default_rng(0), pspec)
    theta = init_twin_critic(np.random.default_rng(1), cspec)
    values, next_values = segment_values(phi, theta, batch, pspec, cspec)
    assert values.shape == batch.rewards.shape
    assert next_values.shape == batch.rewards.shape

    # flag one transition terminal: its next-state value must be exactly zero
    batch.dones[0, 2] = 1.0
    _, masked = segment_values(phi, theta, batch, pspec, cspec)
    assert masked[0, 2] == 0.0
    assert np.array_equal(masked[1:], next_values[1:] * (1.0 - batch.dones[1:]))


def test_objective_policy_grad_end_to_end():
    env, batch = collect_batch("pendulum_swingup", 44)
    pspec = PolicySpec.for_env(env.spec, width=8, layers=1)
    cspec = CriticSpec(
        state_dim=env.spec.state_dim, action_dim=env.spec.action_dim, width=8, layers=1
    )
    phi = init_policy(np.random.default_rng(2), pspec)
    theta = init_twin_critic(np.random.default_rng(3), cspec)
    obj = init_objective(np.random.default_rng(4), TINY)

    grads, value = objective_policy_grad(obj, phi, theta, batch, pspec, cspec, TINY)
    assert np.isfinite(value)
    assert set(grads) <= set(phi)
    assert all(np.isfinite(g).all() for g in grads.values())
    assert any(np.any(g != 0.0) for g in grads.values())

    # zeroed head: loss and every gradient entry exactly zero
    obj["obj/head/w"] = np.zeros_like(obj["obj/head/w"])
    obj["obj/head/b"] = np.zeros_like(obj["obj/head/b"])
    grads0, value0 = objective_policy_grad(obj, phi, theta, batch, pspec, cspec, TINY)
    assert value0 == 0.0
    assert all(np.all(g == 0.0) for g in grads0.values())
