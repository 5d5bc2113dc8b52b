"""Fresh-build gradient validation.

Every differentiable surface gets checked against central finite differences
on tiny instances: the primitive set, the policy and twin-critic networks,
the objective function (with respect to both its own weights and the policy),
the Gaussian likelihood-ratio surrogate, and the full second-order
meta-gradient through one and two simulated policy updates. The scalar
closed-form system anchors the second-order machinery independently of FD.

Runs in well under two minutes; `run_all` powers both the CLI subcommand and
the acceptance suite.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ARRAY_OPS,
    Graph,
    GraphOps,
    backward,
    grad_values,
    second_order_grad,
)
from .baselines import gaussian_logp, make_reinforce_policy
from .meta import meta_gradient
from .nets import (
    CriticSpec,
    PolicySpec,
    bind,
    bind_const,
    critic_forward,
    init_policy,
    init_twin_critic,
    policy_forward,
)
from .objective import ObjectiveSpec, init_objective, objective_forward, segment_values
from .replay import SegmentBatch

log = logging.getLogger(__name__)

FIRST_ORDER_TOL = 1e-6
META_TOL = 1e-3
ANALYTIC_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return np.isfinite(self.max_rel_err) and self.max_rel_err <= self.tolerance


def _fd_grad(f, x, eps=1e-6):
    g = np.empty_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.shape[0]):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * eps)
    return g


def _rel_err(got, want):
    denom = max(np.linalg.norm(want), 1e-12)
    return float(np.linalg.norm(np.asarray(got) - np.asarray(want)) / denom)


def _worst(f_value, params, grads, names, eps=1e-6):
    """Max relative error of `grads` vs FD of f_value over the named arrays
    (perturbed in place)."""
    worst = 0.0
    for name in names:
        want = _fd_grad(f_value, params[name], eps)
        got = grads.get(name, np.zeros_like(want))
        worst = max(worst, _rel_err(got, want))
    return worst


def _tiny_specs():
    pspec = PolicySpec(state_dim=2, action_dim=1, action_low=-1.0, action_high=1.0,
                       width=3, layers=1)
    cspec = CriticSpec(state_dim=2, action_dim=1, width=3, layers=1)
    return pspec, cspec


def check_primitives(seed=0):
    """One composite expression touching every differentiable primitive."""
    rng = np.random.default_rng(seed)
    params = {
        "a": rng.normal(size=(3, 4)) + 0.2,  # offsets keep relu/clip off their kinks
        "b": rng.normal(size=(4, 3)),
        "c": rng.uniform(0.5, 1.5, size=(3, 3)),
    }

    def build(ops, h):
        m = ops.matmul(h["a"], h["b"])
        m = ops.layer_normalize(ops.add(m, ops.scale(h["c"], 0.5)))
        m = ops.add(ops.tanh(m), ops.sigmoid(ops.mul(m, h["c"])))
        m = ops.sub(m, ops.relu(ops.add(m, ops.constant(np.full((3, 3), 0.3)))))
        m = ops.add(m, ops.exp(ops.scale(m, 0.1)))
        m = ops.add(m, ops.log(ops.add(ops.square(m), ops.constant(np.ones((3, 3))))))
        m = ops.minimum(m, ops.clip(h["c"], 0.6, 1.4))
        m = ops.div(m, ops.add(ops.square(h["c"]), ops.constant(np.ones((3, 3)))))
        top = ops.concat([m, ops.reshape(h["a"], (3, 4))], axis=1)
        col = ops.slice(top, 1, 0, 5)
        return ops.add(ops.mean(col), ops.sum(ops.scale(ops.mean(top, axis=0), 0.25)))

    g = Graph()
    ops = GraphOps(g)
    grads = grad_values(backward(g, build(ops, bind(ops, params)), params.keys()))
    value = lambda: float(np.asarray(build(ARRAY_OPS, params)))
    return _worst(value, params, grads, params.keys())


def check_policy_network(seed=1):
    rng = np.random.default_rng(seed)
    pspec, _ = _tiny_specs()
    phi = init_policy(rng, pspec)
    states = rng.normal(size=(4, 2))

    g = Graph()
    ops = GraphOps(g)
    loss = ops.mean(ops.square(policy_forward(ops, bind(ops, phi), g.constant(states), pspec)))
    grads = grad_values(backward(g, loss, phi.keys()))
    value = lambda: float(np.mean(np.square(np.asarray(
        policy_forward(ARRAY_OPS, phi, states, pspec)))))
    return _worst(value, phi, grads, phi.keys())


def check_critic_network(seed=2):
    rng = np.random.default_rng(seed)
    pspec, cspec = _tiny_specs()
    theta = init_twin_critic(rng, cspec)
    states = rng.normal(size=(4, 2))
    actions = rng.uniform(-1, 1, size=(4, 1))

    def build(ops, h, s, a):
        q1 = critic_forward(ops, h, s, a, cspec, "q1")
        q2 = critic_forward(ops, h, s, a, cspec, "q2")
        return ops.add(ops.mean(ops.square(q1)), ops.mean(ops.square(q2)))

    g = Graph()
    ops = GraphOps(g)
    loss = build(ops, bind(ops, theta), g.constant(states), g.constant(actions))
    grads = grad_values(backward(g, loss, theta.keys()))
    value = lambda: float(np.asarray(build(ARRAY_OPS, theta, states, actions)))
    return _worst(value, theta, grads, theta.keys())


def _objective_fixture(seed):
    rng = np.random.default_rng(seed)
    pspec, cspec = _tiny_specs()
    ospec = ObjectiveSpec(lstm_units=3, conv_layers=1, conv_filters=2)
    alpha = init_objective(rng, ospec)
    phi = init_policy(rng, pspec)
    theta = init_twin_critic(rng, cspec)
    batch = SegmentBatch(
        states=rng.normal(size=(2, 4, 2)),
        actions=rng.uniform(-1, 1, size=(2, 3, 1)),
        rewards=rng.normal(size=(2, 3)),
        dones=np.zeros((2, 3)),
        starts=np.zeros(2, dtype=int),
        ep_lens=np.full(2, 3, dtype=int),
        episodes=np.arange(2),
    )
    values, next_values = segment_values(phi, theta, batch, pspec, cspec)
    return pspec, cspec, ospec, alpha, phi, theta, batch, values, next_values


def check_objective_weights(seed=3):
    pspec, _, ospec, alpha, phi, _, batch, values, next_values = _objective_fixture(seed)
    acts = [np.asarray(policy_forward(ARRAY_OPS, phi, np.ascontiguousarray(batch.states[:, t]), pspec))
            for t in range(batch.segment_len)]

    def value(params):
        return float(np.asarray(objective_forward(
            ARRAY_OPS, params, ospec, acts, batch.actions, batch.rewards,
            values, next_values, batch.time_frac())))

    g = Graph()
    ops = GraphOps(g)
    handles = bind(ops, alpha)
    total = objective_forward(ops, handles, ospec, [ops.constant(a) for a in acts],
                              batch.actions, batch.rewards, values, next_values,
                              batch.time_frac())
    grads = grad_values(backward(g, total, alpha.keys()))
    return _worst(lambda: value(alpha), alpha, grads, alpha.keys())


def check_objective_policy_path(seed=4):
    pspec, _, ospec, alpha, phi, _, batch, values, next_values = _objective_fixture(seed)

    def value():
        acts = [policy_forward(ARRAY_OPS, phi, np.ascontiguousarray(batch.states[:, t]), pspec)
                for t in range(batch.segment_len)]
        return float(np.asarray(objective_forward(
            ARRAY_OPS, alpha, ospec, acts, batch.actions, batch.rewards,
            values, next_values, batch.time_frac())))

    g = Graph()
    ops = GraphOps(g)
    ph = bind(ops, phi)
    acts = [policy_forward(ops, ph, g.constant(np.ascontiguousarray(batch.states[:, t])), pspec)
            for t in range(batch.segment_len)]
    total = objective_forward(ops, bind_const(ops, alpha), ospec, acts, batch.actions,
                              batch.rewards, values, next_values, batch.time_frac())
    grads = grad_values(backward(g, total, phi.keys()))
    return _worst(value, phi, grads, phi.keys())


def check_reinforce_surrogate(seed=5):
    rng = np.random.default_rng(seed)
    pspec, _ = _tiny_specs()
    policy = make_reinforce_policy(rng, pspec)
    states = rng.normal(size=(5, 2))
    actions = rng.uniform(-1, 1, size=(5, 1))
    adv = rng.normal(size=5)

    def value():
        logp = np.asarray(gaussian_logp(ARRAY_OPS, policy.params, pspec, states, actions))
        return -float(np.mean(logp * adv))

    g = Graph()
    ops = GraphOps(g)
    logp = gaussian_logp(ops, bind(ops, policy.params), pspec, states, actions)
    loss = ops.scale(ops.mean(ops.mul(logp, ops.constant(adv))), -1.0)
    grads = grad_values(backward(g, loss, policy.params.keys()))
    return _worst(value, policy.params, grads, policy.params.keys())


def check_scalar_second_order():
    worst = 0.0
    for phi0, alpha0 in [(1.0, 0.0), (0.3, -0.7), (-2.0, 0.5), (4.0, 4.0)]:
        g = Graph()
        alpha = g.parameter("alpha", np.array(alpha0))
        phi = g.parameter("phi", np.array(phi0))
        inner = backward(g, g.mul(alpha, phi), ("phi",))
        outer = g.scale(g.square(g.sub(phi, inner["phi"])), -1.0)
        delta = second_order_grad(g, outer, inner, ("alpha",))
        worst = max(worst, abs(delta["alpha"].value.item() - 2.0 * (phi0 - alpha0)))
    return worst


def check_meta_gradient(inner_steps, seed=6):
    rng = np.random.default_rng(seed + inner_steps)
    pspec, cspec = _tiny_specs()
    ospec = ObjectiveSpec(lstm_units=3, conv_layers=1, conv_filters=2)
    alpha = init_objective(rng, ospec)
    phi = init_policy(rng, pspec)
    theta = init_twin_critic(rng, cspec)
    batches = [
        SegmentBatch(
            states=rng.normal(size=(2, 4, 2)),
            actions=rng.uniform(-1, 1, size=(2, 3, 1)),
            rewards=rng.normal(size=(2, 3)),
            dones=np.zeros((2, 3)),
            starts=np.zeros(2, dtype=int),
            ep_lens=np.full(2, 3, dtype=int),
            episodes=np.full(2, i, dtype=int),
        )
        for i in range(inner_steps + 1)
    ]
    inner_lr = 0.5
    delta, _ = meta_gradient(alpha, phi, theta, batches, pspec, cspec, ospec,
                             inner_lr=inner_lr)

    def value():
        cur = dict(phi)
        for batch in batches[:-1]:
            values, next_values = segment_values(cur, theta, batch, pspec, cspec)
            g = Graph()
            ops = GraphOps(g)
            ph = bind(ops, cur)
            acts = [policy_forward(ops, ph, g.constant(np.ascontiguousarray(batch.states[:, t])), pspec)
                    for t in range(batch.segment_len)]
            loss = objective_forward(ops, bind_const(ops, alpha), ospec, acts,
                                     batch.actions, batch.rewards, values, next_values,
                                     batch.time_frac())
            grads = grad_values(backward(g, loss, cur.keys()))
            cur = {k: cur[k] - inner_lr * grads[k] if k in grads else cur[k] for k in cur}
        states = batches[-1].flat()[0]
        acts = policy_forward(ARRAY_OPS, cur, states, pspec)
        q = critic_forward(ARRAY_OPS, theta, states, acts, cspec, "q1")
        return -float(np.mean(q))

    return _worst(value, alpha, delta, alpha.keys(), eps=1e-5)


def run_all(log_results=True):
    suites = [
        ("primitives", check_primitives, FIRST_ORDER_TOL),
        ("policy_network", check_policy_network, FIRST_ORDER_TOL),
        ("twin_critic", check_critic_network, FIRST_ORDER_TOL),
        ("objective_weights", check_objective_weights, FIRST_ORDER_TOL),
        ("objective_policy_path", check_objective_policy_path, FIRST_ORDER_TOL),
        ("reinforce_surrogate", check_reinforce_surrogate, FIRST_ORDER_TOL),
        ("scalar_second_order", check_scalar_second_order, ANALYTIC_TOL),
        ("meta_gradient_n1", lambda: check_meta_gradient(1), META_TOL),
        ("meta_gradient_n2", lambda: check_meta_gradient(2), META_TOL),
    ]
    results = []
    for name, fn, tol in suites:
        t0 = time.perf_counter()
        err = fn()
        res = SuiteResult(name, float(err), tol, time.perf_counter() - t0)
        results.append(res)
        if log_results:
            log.info("%-22s %s  max_rel_err=%.3e  tol=%.0e  (%.2fs)",
                     name, "pass" if res.passed else "FAIL", res.max_rel_err,
                     res.tolerance, res.seconds)
    return results
