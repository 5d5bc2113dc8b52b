"""Learned per-timestep objective whose policy gradient is the learning rule.

A small recurrent network reads a replay segment backwards — reward, critic
value estimates, episode-relative time, and an embedding of (buffered action,
current policy action) pairs — and emits one bounded scalar per step; their
sum is the objective value L. Differentiating L with respect to the policy
parameters gives the update direction. Everything except the current policy's
actions enters as a constant, so the only route for gradients back to the
policy is through what the policy would do at the stored states.

Running in reverse time lets each step's output condition on what happened
afterwards, which is the information a return or advantage estimate carries
in hand-written objectives.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ARRAY_OPS, Graph, GraphOps, backward, grad_values
from .nets import bind, bind_const, param_count, policy_forward, value_estimate

log = logging.getLogger(__name__)


@dataclass
class ObjectiveSpec:
    lstm_units: int = 32
    conv_layers: int = 2
    conv_filters: int = 16
    eta: float = 1000.0
    # ablations: each flag removes one input channel and nothing else
    drop_time: bool = False
    drop_value: bool = False
    drop_next_value: bool = False

    @property
    def input_width(self):
        width = 1 + self.conv_filters  # reward + action embedding, always on
        width += 0 if self.drop_value else 1
        width += 0 if self.drop_next_value else 1
        width += 0 if self.drop_time else 1
        return width


def init_objective(rng, spec):
    if spec.eta <= 0:
        raise ValueError("eta must be positive")
    if spec.conv_layers > 1 and spec.conv_filters % 2:
        raise ValueError("conv_filters must be even to split relu/square halves")
    params = {}
    d = 2
    for i in range(spec.conv_layers):
        limit = math.sqrt(6.0 / (d + spec.conv_filters))
        params[f"obj/conv{i}/w"] = rng.uniform(-limit, limit, size=(d, spec.conv_filters))
        d = spec.conv_filters
    u = spec.lstm_units
    w = spec.input_width
    limit = math.sqrt(6.0 / (w + 4 * u))
    params["obj/lstm/wx"] = rng.uniform(-limit, limit, size=(w, 4 * u))
    limit = math.sqrt(6.0 / (u + 4 * u))
    params["obj/lstm/wh"] = rng.uniform(-limit, limit, size=(u, 4 * u))
    bias = np.zeros(4 * u)
    bias[u : 2 * u] = 1.0  # forget gate starts open
    params["obj/lstm/b"] = bias
    # small head: a fresh objective is near zero, so early policy updates are tiny
    params["obj/head/w"] = rng.uniform(-1e-3, 1e-3, size=(u, 1))
    params["obj/head/b"] = np.zeros(1)
    log.info("objective parameters: %d", param_count(params))
    return params


def _relu_square(ops, x, width):
    half = width // 2
    return ops.concat(
        [ops.relu(ops.slice(x, 1, 0, half)), ops.square(ops.slice(x, 1, half, width))],
        axis=1,
    )


def action_embed(ops, handles, spec, buffered, current):
    """Width-2 rows (one per action dimension) through the kernel-size-1 conv
    stack, then a mean over dimensions: the output width never depends on the
    environment's action size."""
    buffered = np.asarray(buffered, dtype=np.float64)
    if buffered.ndim == 1:
        buffered = buffered[None, :]
    cur_shape = tuple(current.shape)
    if len(cur_shape) == 1:
        current = ops.reshape(current, (1, cur_shape[0]))
        cur_shape = tuple(current.shape)
    if buffered.shape != cur_shape:
        raise ValueError(f"action shapes differ: {buffered.shape} vs {cur_shape}")
    b, d = buffered.shape
    x = ops.concat(
        [
            ops.constant(np.ascontiguousarray(buffered.reshape(b * d, 1))),
            ops.reshape(current, (b * d, 1)),
        ],
        axis=1,
    )
    for i in range(spec.conv_layers):
        x = ops.matmul(x, handles[f"obj/conv{i}/w"])
        if i + 1 < spec.conv_layers:
            x = _relu_square(ops, x, spec.conv_filters)
    x = ops.reshape(x, (b, d, spec.conv_filters))
    return ops.mean(x, axis=1)


def _lstm_step(ops, handles, units, xwb, h, c):
    # xwb = x @ wx + b, precomputed for every step at once; only the hidden
    # recurrence has to stay inside the per-step loop
    z = ops.add(xwb, ops.matmul(h, handles["obj/lstm/wh"]))
    gate_i = ops.sigmoid(ops.slice(z, 1, 0, units))
    gate_f = ops.sigmoid(ops.slice(z, 1, units, 2 * units))
    cand = ops.tanh(ops.slice(z, 1, 2 * units, 3 * units))
    gate_o = ops.sigmoid(ops.slice(z, 1, 3 * units, 4 * units))
    c = ops.add(ops.mul(gate_f, c), ops.mul(gate_i, cand))
    return ops.mul(gate_o, ops.tanh(c)), c


def _flat_column(ops, source, b, k):
    # one (K·B, 1) step-major column per feature channel: arrays flatten in
    # numpy, lists of per-step (B, 1) handles are concatenated on the graph
    if isinstance(source, np.ndarray):
        return np.ascontiguousarray(source.T.reshape(k * b, 1))
    return ops.concat(list(source), axis=0)


def objective_forward(
    ops,
    handles,
    spec,
    policy_actions,
    buffer_actions,
    rewards,
    values,
    next_values,
    time_frac,
    with_steps=False,
):
    """Scalar objective over a batch of segments.

    policy_actions: the sole gradient path to the policy — either per-step
    handles (B, action_dim), one per segment step, or a single step-major
    (K·B, action_dim) stack of the same rows. The remaining inputs are plain
    arrays of shape (B, K[, action_dim]) entering as constants; values and
    next_values may instead be lists of per-step (B, 1) handles (e.g.
    gradient-stopped critic outputs), which must carry no policy gradient.
    Returns the batch-mean of the per-segment sums; per-step outputs are each
    bounded to [-eta, eta], and with_steps additionally returns them in time
    order.

    Everything without a sequential dependency — the action embedding and the
    input-to-hidden affine map — is evaluated for all K steps in one batched
    pass; the per-step loop carries only the gated recurrence.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    b, k = rewards.shape
    if k == 0:
        raise ValueError("objective needs at least one segment step")
    if isinstance(policy_actions, (list, tuple)):
        if len(policy_actions) != k:
            raise ValueError(f"policy_actions provide {len(policy_actions)} steps, segment has {k}")
        acts = ops.concat(list(policy_actions), axis=0) if k > 1 else policy_actions[0]
    else:
        acts = policy_actions
    for name, arr in (("values", values),
                      ("next_values", next_values), ("time_frac", time_frac)):
        if isinstance(arr, np.ndarray) and arr.shape[:2] != (b, k):
            raise ValueError(f"{name} shape {arr.shape} does not match ({b}, {k})")
        if not isinstance(arr, np.ndarray) and len(arr) != k:
            raise ValueError(f"{name} provides {len(arr)} steps, segment has {k}")
    buffer_actions = np.asarray(buffer_actions, dtype=np.float64)
    if buffer_actions.shape[:2] != (b, k):
        raise ValueError("buffer_actions do not match segment shape")

    buffered = np.ascontiguousarray(
        buffer_actions.transpose(1, 0, 2).reshape(k * b, buffer_actions.shape[2])
    )
    embed = action_embed(ops, handles, spec, buffered, acts)
    channels = [_flat_column(ops, rewards, b, k)]
    if not spec.drop_value:
        channels.append(_flat_column(ops, values, b, k))
    if not spec.drop_next_value:
        channels.append(_flat_column(ops, next_values, b, k))
    if not spec.drop_time:
        channels.append(_flat_column(ops, np.asarray(time_frac, dtype=np.float64), b, k))
    if all(isinstance(ch, np.ndarray) for ch in channels):
        feats = [ops.constant(np.concatenate(channels, axis=1))]
    else:
        feats = [ops.constant(ch) if isinstance(ch, np.ndarray) else ch for ch in channels]
    x = ops.concat(feats + [embed], axis=1)
    xwb = ops.add(ops.matmul(x, handles["obj/lstm/wx"]), handles["obj/lstm/b"])

    u = spec.lstm_units
    h = ops.constant(np.zeros((b, u)))
    c = ops.constant(np.zeros((b, u)))
    hidden = []
    for t in reversed(range(k)):
        h, c = _lstm_step(ops, handles, u, ops.slice(xwb, 0, t * b, (t + 1) * b), h, c)
        hidden.append(h)

    stacked = ops.concat(hidden, axis=0) if k > 1 else hidden[0]
    raw = ops.add(ops.matmul(stacked, handles["obj/head/w"]), handles["obj/head/b"])
    bounded = ops.scale(ops.tanh(ops.scale(raw, 1.0 / spec.eta)), spec.eta)
    total = ops.scale(ops.mean(bounded), float(k))
    if not with_steps:
        return total
    steps = [None] * k
    for i in range(k):
        steps[k - 1 - i] = ops.slice(bounded, 0, i * b, (i + 1) * b)
    return total, steps


def _step_major_states(batch):
    """All segment states as one (K·B, state_dim) block, rows grouped by step
    — one policy pass instead of K covers every step of the batch."""
    b, kp1, ds = batch.states.shape
    steps = batch.states[:, :-1].transpose(1, 0, 2)
    return np.ascontiguousarray(steps.reshape((kp1 - 1) * b, ds))


def segment_values(policy_params, critic_params, batch, pspec, cspec):
    """Constant critic-value inputs for a segment batch: V over the K+1
    stored states, split into per-step V_t and V_{t+1}; the next value is
    zeroed at terminal transitions, where no future exists to estimate."""
    b, kp1, ds = batch.states.shape
    flat = batch.states.reshape(b * kp1, ds)
    v = value_estimate(ARRAY_OPS, critic_params, policy_params, flat, pspec, cspec)
    v = v.reshape(b, kp1)
    return v[:, :-1], v[:, 1:] * (1.0 - batch.dones)


def objective_policy_grad(obj_params, policy_params, critic_params, batch, pspec, cspec, spec):
    """Gradient of the learned objective w.r.t. the policy, plus its value.

    Builds a fresh graph, replays the policy at the stored states, and
    differentiates. The objective weights are bound as constants here — this
    path never trains them.
    """
    values, next_values = segment_values(policy_params, critic_params, batch, pspec, cspec)
    g = Graph()
    ops = GraphOps(g)
    phi = bind(ops, policy_params)
    alpha = bind_const(ops, obj_params)
    acts = policy_forward(ops, phi, g.constant(_step_major_states(batch)), pspec)
    total = objective_forward(
        ops, alpha, spec, acts, batch.actions, batch.rewards,
        values, next_values, batch.time_frac(),
    )
    grads = grad_values(backward(g, total, policy_params.keys(), record=False))
    return grads, float(total.value.item())
