"""Policy and twin-critic networks as pure functions over parameter dicts.

Parameters live in flat name->array dicts with stable prefixed names
("policy/w0", "q1/ln_g2", ...). Forwards are written against the ops
protocol, so the same code runs taped (for gradients) or on bare arrays
(for acting and TD targets). Hidden layers are layer-normalized with a
learned gain/bias, then ReLU.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

LN_EPS = 1e-5


@dataclass(frozen=True)
class PolicySpec:
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    width: int = 64
    layers: int = 3

    @staticmethod
    def for_env(env_spec, width=64, layers=3):
        return PolicySpec(
            env_spec.state_dim,
            env_spec.action_dim,
            env_spec.action_low,
            env_spec.action_high,
            width,
            layers,
        )


@dataclass(frozen=True)
class CriticSpec:
    state_dim: int
    action_dim: int
    width: int = 64
    layers: int = 3


def param_count(params):
    return sum(v.size for v in params.values())


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def init_mlp(rng, prefix, in_dim, out_dim, width, layers, out_scale=1e-3):
    params = {}
    d = in_dim
    for i in range(layers):
        limit = math.sqrt(6.0 / (d + width))
        params[f"{prefix}/w{i}"] = rng.uniform(-limit, limit, size=(d, width))
        params[f"{prefix}/b{i}"] = np.zeros(width)
        params[f"{prefix}/ln_g{i}"] = np.ones(width)
        params[f"{prefix}/ln_b{i}"] = np.zeros(width)
        d = width
    # small final layer so fresh policies act near zero and fresh critics
    # predict near zero
    params[f"{prefix}/w_out"] = rng.uniform(-out_scale, out_scale, size=(d, out_dim))
    params[f"{prefix}/b_out"] = np.zeros(out_dim)
    return params


def mlp_forward(ops, handles, prefix, x, layers):
    h = x
    for i in range(layers):
        z = ops.add(ops.matmul(h, handles[f"{prefix}/w{i}"]), handles[f"{prefix}/b{i}"])
        z = ops.layer_normalize(z, LN_EPS)
        z = ops.add(ops.mul(z, handles[f"{prefix}/ln_g{i}"]), handles[f"{prefix}/ln_b{i}"])
        h = ops.relu(z)
    return ops.add(ops.matmul(h, handles[f"{prefix}/w_out"]), handles[f"{prefix}/b_out"])


def init_policy(rng, spec):
    params = init_mlp(rng, "policy", spec.state_dim, spec.action_dim, spec.width, spec.layers)
    log.info("policy parameters: %d", param_count(params))
    return params


def policy_forward(ops, handles, states, spec):
    """Deterministic policy: tanh-squashed output scaled to the action box."""
    raw = mlp_forward(ops, handles, "policy", states, spec.layers)
    squashed = ops.tanh(raw)
    half = 0.5 * (spec.action_high - spec.action_low)
    mid = 0.5 * (spec.action_high + spec.action_low)
    out = ops.scale(squashed, half) if half != 1.0 else squashed
    if mid != 0.0:
        out = ops.add(out, ops.constant(np.full(spec.action_dim, mid)))
    return out


def init_twin_critic(rng, spec):
    params = {}
    in_dim = spec.state_dim + spec.action_dim
    params.update(init_mlp(rng, "q1", in_dim, 1, spec.width, spec.layers))
    params.update(init_mlp(rng, "q2", in_dim, 1, spec.width, spec.layers))
    log.info("twin critic parameters: %d", param_count(params))
    return params


def critic_forward(ops, handles, states, actions, spec, which="q1"):
    x = ops.concat([states, actions], axis=1)
    return mlp_forward(ops, handles, which, x, spec.layers)


def value_estimate(ops, critic_handles, policy_handles, states, pspec, cspec):
    """V(s) = Q1(s, pi(s)), wrapped in stop_gradient: a constant input as far
    as any downstream differentiation is concerned."""
    actions = policy_forward(ops, policy_handles, states, pspec)
    q = critic_forward(ops, critic_handles, states, actions, cspec, "q1")
    return ops.stop_gradient(q)


def bind(ops, params):
    """Bind a parameter dict as differentiable handles."""
    return {k: ops.param(k, v) for k, v in params.items()}


def bind_const(ops, params):
    """Bind a parameter dict as constants (no gradients flow into them)."""
    return {k: ops.constant(v) for k, v in params.items()}


def polyak_update(target_params, live_params, rate):
    """target <- (1 - rate) * target + rate * live, out of place."""
    return {k: (1.0 - rate) * v + rate * live_params[k] for k, v in target_params.items()}
