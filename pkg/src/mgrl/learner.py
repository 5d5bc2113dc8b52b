"""Single-agent inner loop: twin-critic TD learning and policy updates.

The policy direction comes from the learned objective, from critic
maximization (the classic deterministic-policy-gradient direction), or from a
convex mix of the two that anneals from the latter to the former while the
objective is still untrained. One update tick runs per collected environment
step; the critic updates on every tick, the policy on every second one.
Collection happens in whole episodes followed by an equal number of ticks,
which keeps the same average update-to-step ratio with a much simpler loop.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ARRAY_OPS,
    AdamState,
    Graph,
    GraphOps,
    adam_step,
    backward,
    clip_global_norm,
    grad_values,
    sgd_step,
)
from .envs import random_policy, rollout
from .nets import (
    CriticSpec,
    PolicySpec,
    bind,
    bind_const,
    copy_params,
    critic_forward,
    init_policy,
    init_twin_critic,
    policy_forward,
    polyak_update,
)
from .objective import objective_policy_grad
from .replay import ReplayBuffer
from .seeding import stream

log = logging.getLogger(__name__)


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    critic_lr: float = 1e-3
    policy_lr: float = 1e-3
    polyak: float = 0.005
    target_noise: float = 0.2
    noise_clip: float = 0.5
    expl_noise: float = 0.1
    warmup_steps: int = 10_000
    anneal_steps: int = 10_000
    grad_clip: float = 1.0
    batch_size: int = 16  # segments per update tick
    critic_per_policy: int = 2

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for field in ("critic_lr", "policy_lr", "polyak", "grad_clip",
                      "batch_size", "critic_per_policy", "anneal_steps"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")


def td_targets(theta_target, phi_target, rewards, next_states, dones, cfg, pspec, cspec, rng):
    """Bootstrap targets with smoothed target actions and the smaller of the
    twin target critics; plain arrays, so nothing here carries gradient.

    Noise scales follow the action bound, keeping the perturbation geometry
    identical across environments with different action ranges.
    """
    high = pspec.action_high
    acts = policy_forward(ARRAY_OPS, phi_target, next_states, pspec)
    eps = np.clip(
        rng.normal(0.0, cfg.target_noise * high, size=acts.shape),
        -cfg.noise_clip * high,
        cfg.noise_clip * high,
    )
    acts = np.clip(acts + eps, pspec.action_low, high)
    q1 = critic_forward(ARRAY_OPS, theta_target, next_states, acts, cspec, "q1")
    q2 = critic_forward(ARRAY_OPS, theta_target, next_states, acts, cspec, "q2")
    return rewards + cfg.gamma * (1.0 - dones) * np.minimum(q1, q2)


def critic_loss_grads(theta, states, actions, targets, cspec):
    """Joint squared-error loss over both twin heads and its θ-gradients."""
    g = Graph()
    ops = GraphOps(g)
    th = bind(ops, theta)
    s = g.constant(states)
    a = g.constant(actions)
    y = g.constant(targets)
    loss = None
    for which in ("q1", "q2"):
        q = critic_forward(ops, th, s, a, cspec, which)
        term = ops.mean(ops.square(ops.sub(q, y)))
        loss = term if loss is None else ops.add(loss, term)
    return grad_values(backward(g, loss, theta.keys(), record=False)), float(loss.value.item())


def ddpg_policy_grad(theta, phi, states, pspec, cspec):
    """Descent direction on −mean Q₁(s, π_φ(s)): the hand-written critic-
    maximization update the learned objective competes with."""
    g = Graph()
    ops = GraphOps(g)
    ph = bind(ops, phi)
    th = bind_const(ops, theta)
    q = critic_forward(ops, th, g.constant(states), policy_forward(ops, ph, g.constant(states), pspec), cspec, "q1")
    score = ops.mean(q)
    loss = ops.scale(score, -1.0)
    return grad_values(backward(g, loss, phi.keys(), record=False)), float(score.value.item())


def anneal_coefficient(step, anneal_steps):
    """Linear ramp from pure critic-maximization (0) to pure learned
    objective (1) over the first anneal_steps update steps."""
    if anneal_steps <= 0:
        raise ValueError("anneal_steps must be positive")
    return min(max(step, 0) / anneal_steps, 1.0)


def mix_gradient_maps(beta, objective_grads, ddpg_grads):
    """β·objective + (1−β)·ddpg with missing entries as zeros; the endpoint
    cases pass the surviving map through untouched."""
    if beta <= 0.0:
        return ddpg_grads
    if beta >= 1.0:
        return objective_grads
    mixed = {}
    for name in set(objective_grads) | set(ddpg_grads):
        a = objective_grads.get(name)
        b = ddpg_grads.get(name)
        if a is None:
            mixed[name] = (1.0 - beta) * b
        elif b is None:
            mixed[name] = beta * a
        else:
            mixed[name] = beta * a + (1.0 - beta) * b
    return mixed


class Agent:
    """One population member: env, policy/critic (+targets), replay, and the
    update cadence. The learned objective is passed in per call — it is shared
    across agents and owned by the coordinator."""

    def __init__(self, env, cfg, pspec, cspec, master_seed=0, index=0,
                 capacity=100_000, segment_len=20):
        self.env = env
        self.cfg = cfg
        self.pspec = pspec
        self.cspec = cspec
        self.index = index
        self.phi = init_policy(stream(master_seed, "policy_init", index), pspec)
        self.theta = init_twin_critic(stream(master_seed, "critic_init", index), cspec)
        self.phi_target = copy_params(self.phi)
        self.theta_target = copy_params(self.theta)
        self.critic_adam = AdamState(self.theta)
        self.buffer = ReplayBuffer(capacity=capacity, segment_len=segment_len)
        self.env_rng = stream(master_seed, "env", index)
        self.target_rng = stream(master_seed, "noise", index)
        self.sampler_rng = stream(master_seed, "sampler", index)
        self.env_steps = 0
        self.ticks = 0
        self.episodes = 0

    # -- collection ----------------------------------------------------------

    def collect_episode(self, max_steps=None):
        """Roll one episode into replay: uniform-random during warmup, then
        the current policy plus exploration noise."""
        if self.env_steps < self.cfg.warmup_steps:
            policy = random_policy(self.env, self.env_rng)
            noise = 0.0
        else:
            def policy(state):
                return policy_forward(ARRAY_OPS, self.phi, state[None, :], self.pspec)[0]
            noise = self.cfg.expl_noise * self.pspec.action_high
        traj = rollout(self.env, policy, self.env_rng, noise_std=noise, max_steps=max_steps)
        self.buffer.add(traj)
        self.env_steps += len(traj)
        self.episodes += 1
        return traj

    @property
    def warmed_up(self):
        return self.env_steps >= self.cfg.warmup_steps

    def anneal_beta(self):
        # the ramp starts when updates start, not at step zero of warmup
        return anneal_coefficient(self.env_steps - self.cfg.warmup_steps, self.cfg.anneal_steps)

    # -- updates ---------------------------------------------------------------

    def critic_tick(self, batch):
        states, actions, rewards, next_states, dones = batch.flat()
        y = td_targets(
            self.theta_target, self.phi_target, rewards, next_states, dones,
            self.cfg, self.pspec, self.cspec, self.target_rng,
        )
        grads, loss = critic_loss_grads(self.theta, states, actions, y, self.cspec)
        grads, _ = clip_global_norm(grads, self.cfg.grad_clip)
        self.theta = adam_step(self.critic_adam, self.theta, grads, self.cfg.critic_lr)
        self.theta_target = polyak_update(self.theta_target, self.theta, self.cfg.polyak)
        return loss

    def policy_tick(self, batch, objective=None, ospec=None, beta=None):
        """Apply one policy update from the annealed gradient mix; returns
        (β used, objective value or nan)."""
        if beta is None:
            beta = self.anneal_beta() if objective is not None else 0.0
        obj_value = float("nan")
        obj_grads = {}
        if objective is not None and beta > 0.0:
            obj_grads, obj_value = objective_policy_grad(
                objective, self.phi, self.theta, batch, self.pspec, self.cspec, ospec
            )
        ddpg_grads = {}
        if beta < 1.0:
            states = batch.flat()[0]
            ddpg_grads, _ = ddpg_policy_grad(self.theta, self.phi, states, self.pspec, self.cspec)
        grads = mix_gradient_maps(beta, obj_grads, ddpg_grads)
        grads, _ = clip_global_norm(grads, self.cfg.grad_clip)
        self.phi = sgd_step(self.phi, grads, self.cfg.policy_lr)
        self.phi_target = polyak_update(self.phi_target, self.phi, self.cfg.polyak)
        return beta, obj_value

    def update_tick(self, objective=None, ospec=None, beta=None):
        """One cadence tick: critic always, policy on every second tick."""
        self.ticks += 1
        batch = self.buffer.sample_segments(self.cfg.batch_size, self.sampler_rng)
        loss = self.critic_tick(batch)
        updated = self.ticks % self.cfg.critic_per_policy == 0
        used_beta, obj_value = (
            self.policy_tick(batch, objective, ospec, beta) if updated else (float("nan"), float("nan"))
        )
        return {
            "critic_loss": loss,
            "policy_updated": updated,
            "beta": used_beta,
            "objective_value": obj_value,
        }

    def run_episode(self, objective=None, ospec=None, beta=None, max_steps=None):
        """Collect one episode, then run one tick per collected step (none
        during warmup). Returns a per-episode metrics row."""
        traj = self.collect_episode(max_steps=max_steps)
        losses, betas, values = [], [], []
        if self.warmed_up:
            for _ in range(len(traj)):
                row = self.update_tick(objective, ospec, beta)
                losses.append(row["critic_loss"])
                if row["policy_updated"]:
                    betas.append(row["beta"])
                    values.append(row["objective_value"])
        return {
            "agent_id": self.index,
            "env": self.env.spec.name,
            "env_steps": self.env_steps,
            "episode_return": traj.episode_return,
            "critic_loss": float(np.mean(losses)) if losses else float("nan"),
            "anneal_beta": float(np.mean(betas)) if betas else float("nan"),
            "objective_value": float(np.mean(values)) if values else float("nan"),
        }


def make_agent(env, cfg, master_seed, index, width=64, layers=3,
               capacity=100_000, segment_len=20):
    pspec = PolicySpec.for_env(env.spec, width=width, layers=layers)
    cspec = CriticSpec(env.spec.state_dim, env.spec.action_dim, width=width, layers=layers)
    return Agent(env, cfg, pspec, cspec, master_seed=master_seed, index=index,
                 capacity=capacity, segment_len=segment_len)
