"""Outer loop: improving the learned objective by differentiating through
the policy updates it prescribes.

For each agent, a handful of inner policy updates are simulated on the tape
(never applied): phi_k = phi_{k-1} - inner_lr * dL/dphi, each step on its own
replay batch. A held-out batch then scores the final simulated policy with
the agent's critic, and the gradient of that score with respect to the
objective's weights — flowing through the recorded inner gradients — is the
meta-gradient. Contributions are summed across the population and applied
with Adam. Meta-testing freezes the objective and trains fresh agents with
nothing but its policy gradient.

The loop below is the strict single-worker realization of the phase-barrier
design (collect/update, then meta step, then next phase), which is what makes
seeded runs bit-reproducible.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    Graph,
    GraphOps,
    adam_step,
    backward,
    clip_global_norm,
    grad_values,
    second_order_grad,
)
from .envs import make
from .errors import NonFiniteError
from .learner import make_agent
from .nets import bind, bind_const, critic_forward, policy_forward
from .objective import _step_major_states, init_objective, objective_forward, segment_values
from .seeding import stream

log = logging.getLogger(__name__)


@dataclass
class MetaConfig:
    envs: tuple = ("point_mass", "pendulum_swingup")
    population: int = 4
    steps_per_agent: int = 60_000
    inner_steps: int = 1  # simulated policy updates per meta-gradient
    inner_lr: float = 1e-3
    objective_lr: float = 1e-3
    grad_clip: float = 1.0
    checkpoint_every: int = 25  # phases
    master_seed: int = 0
    capacity: int = 100_000
    segment_len: int = 20

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if not self.envs:
            raise ValueError("at least one training environment is required")
        if self.steps_per_agent <= 0:
            raise ValueError("steps_per_agent must be positive")


def simulated_policy_updates(g, ops, alpha, phi, theta, batches, pspec, cspec, ospec, inner_lr):
    """Record inner_lr-sized objective-driven policy updates on the tape.

    Returns (phi node map after the last update, last inner gradient map,
    per-step objective values). The value inputs for step k are recomputed
    from the step-(k-1) policy, as constants.
    """
    phi_nodes = bind(ops, phi)
    names = tuple(phi)
    losses = []
    grads = None
    for batch in batches:
        phi_values = {name: node.value for name, node in phi_nodes.items()}
        values, next_values = segment_values(phi_values, theta, batch, pspec, cspec)
        acts = policy_forward(ops, phi_nodes, g.constant(_step_major_states(batch)), pspec)
        loss = objective_forward(
            ops, alpha, ospec, acts, batch.actions, batch.rewards,
            values, next_values, batch.time_frac(),
        )
        losses.append(float(loss.value.item()))
        grads = backward(g, loss, names)
        phi_nodes = {
            name: g.sub(node, g.scale(grads[name], inner_lr)) if name in grads else node
            for name, node in phi_nodes.items()
        }
    return phi_nodes, grads, losses


def meta_gradient(obj_params, phi, theta, batches, pspec, cspec, ospec, inner_lr=1e-3):
    """One agent's objective-weight gradient from n+1 disjoint batches.

    batches[:-1] drive the simulated inner updates; batches[-1] is held out
    to score the resulting policy under the agent's critic. The returned map
    is a descent direction on -mean Q1(s, pi(s)), i.e. following it improves
    the critic's opinion of objective-trained policies. Pure with respect to
    the agent: phi, theta, and optimizer states are read, never written.
    """
    if len(batches) < 2:
        raise ValueError("need at least two disjoint batches (inner + held-out)")
    g = Graph()
    ops = GraphOps(g)
    alpha = bind(ops, obj_params)
    phi_nodes, inner_grads, losses = simulated_policy_updates(
        g, ops, alpha, phi, theta, batches[:-1], pspec, cspec, ospec, inner_lr
    )
    held = batches[-1]
    states = g.constant(held.flat()[0])
    acts = policy_forward(ops, phi_nodes, states, pspec)
    score = ops.mean(critic_forward(ops, bind_const(ops, theta), states, acts, cspec, "q1"))
    outer = ops.scale(score, -1.0)
    delta = grad_values(second_order_grad(g, outer, inner_grads, obj_params.keys()))
    if not delta:
        log.warning("meta-gradient has no path to the objective weights (zero map)")
    diag = {
        "inner_objective_values": losses,
        "outer_score": float(score.value.item()),
        "graph_nodes": len(g),
    }
    return delta, diag


def population_meta_step(obj_params, obj_adam, deltas, objective_lr, grad_clip=1.0):
    """Sum per-agent meta-gradients, clip, and apply one Adam update. A
    non-finite contribution is dropped with a warning rather than poisoning
    the shared objective."""
    total = {}
    dropped = 0
    for i, delta in enumerate(deltas):
        if any(not np.isfinite(np.sum(arr)) for arr in delta.values()):
            log.warning("dropping non-finite meta-gradient from agent %d", i)
            dropped += 1
            continue
        for name, arr in delta.items():
            total[name] = arr + total[name] if name in total else arr
    clipped, norm = clip_global_norm(total, grad_clip)
    params = adam_step(obj_adam, obj_params, clipped, objective_lr)
    return params, {"delta_norm": norm, "dropped": dropped}


def _check_finite_params(params):
    for name, arr in params.items():
        if not np.isfinite(np.sum(arr)):
            raise NonFiniteError(f"objective parameter {name!r} became non-finite")


def meta_train(meta_cfg, learner_cfg, ospec, width=64, layers=3, checkpoint_fn=None):
    """Population meta-training; returns (objective params, history rows).

    Each phase: every agent collects one episode and runs one update tick per
    collected step (critic every tick, annealed policy update every second
    tick); once all agents are past warmup, each contributes a meta-gradient
    from inner_steps+1 disjoint batches and the summed update is applied. The
    objective therefore updates once per phase — denser schedules are
    possible but blow the desk-scale runtime budget.
    """
    agents = [
        make_agent(
            make(meta_cfg.envs[i % len(meta_cfg.envs)]), learner_cfg,
            master_seed=meta_cfg.master_seed, index=i, width=width, layers=layers,
            capacity=meta_cfg.capacity, segment_len=meta_cfg.segment_len,
        )
        for i in range(meta_cfg.population)
    ]
    obj = init_objective(stream(meta_cfg.master_seed, "objective_init", 0), ospec)
    obj_adam = AdamState(obj)
    history = []
    needed = (meta_cfg.inner_steps + 1) * learner_cfg.batch_size
    phase = 0
    while any(a.env_steps < meta_cfg.steps_per_agent for a in agents):
        phase += 1
        for agent in agents:
            if agent.env_steps >= meta_cfg.steps_per_agent:
                continue
            row = agent.run_episode(objective=obj, ospec=ospec)
            row.update(phase=phase, kind="episode")
            history.append(row)
        if all(a.warmed_up and a.buffer.total_starts >= needed for a in agents):
            deltas = []
            outer_scores = []
            for agent in agents:
                batches = agent.buffer.sample_disjoint(
                    meta_cfg.inner_steps + 1, learner_cfg.batch_size, agent.sampler_rng
                )
                delta, diag = meta_gradient(
                    obj, agent.phi, agent.theta, batches, agent.pspec, agent.cspec,
                    ospec, inner_lr=meta_cfg.inner_lr,
                )
                deltas.append(delta)
                outer_scores.append(diag["outer_score"])
            obj, info = population_meta_step(
                obj, obj_adam, deltas, meta_cfg.objective_lr, meta_cfg.grad_clip
            )
            _check_finite_params(obj)
            history.append({
                "phase": phase,
                "kind": "meta_update",
                "delta_norm": info["delta_norm"],
                "dropped": info["dropped"],
                "outer_score": float(np.mean(outer_scores)),
            })
        if checkpoint_fn is not None and phase % meta_cfg.checkpoint_every == 0:
            checkpoint_fn(phase, obj)
        if phase % 25 == 0:
            returns = [r["episode_return"] for r in history[-meta_cfg.population:]
                       if "episode_return" in r]
            log.info("phase %d: steps/agent %d, recent returns %s",
                     phase, agents[0].env_steps, np.round(returns, 2))
    return obj, history


def meta_test(obj_params, ospec, env_name, learner_cfg, master_seed=0, index=0,
              budget_steps=100_000, budget_episodes=None, episode_cap=None,
              width=64, layers=3, capacity=100_000, segment_len=20):
    """Train a fresh agent with the frozen objective: no annealing, policy
    updates come from the objective alone, and the critic TD-trains purely to
    supply the gradient-stopped value inputs. One metrics row per episode;
    budget_episodes (if given) wins over budget_steps."""
    agent = make_agent(
        make(env_name), learner_cfg, master_seed=master_seed, index=index,
        width=width, layers=layers, capacity=capacity, segment_len=segment_len,
    )
    rows = []
    while True:
        if budget_episodes is not None:
            if agent.episodes >= budget_episodes:
                break
        elif agent.env_steps >= budget_steps:
            break
        row = agent.run_episode(objective=obj_params, ospec=ospec, beta=1.0,
                                max_steps=episode_cap)
        row.update(phase=agent.episodes, kind="episode")
        rows.append(row)
    return rows
