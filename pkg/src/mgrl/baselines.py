"""Hand-engineered comparison learners.

Three reference points for the learned objective: REINFORCE with generalized
advantage estimation trained on fresh episodes (on-policy), the same
estimator fed from the replay buffer without importance correction (cheap,
deliberately biased — the importance-weighted fix is known to underperform
and is omitted), and the deterministic TD3-style learner with the learned
objective disabled. All three emit the same metrics rows as meta runs so
curves can be plotted together.
"""

import logging
import math
from dataclasses import dataclass, field

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
)
from .envs import make, random_policy, rollout
from .learner import LearnerConfig, critic_loss_grads, make_agent, td_targets
from .nets import (
    CriticSpec,
    PolicySpec,
    bind,
    copy_params,
    init_mlp,
    init_policy,
    init_twin_critic,
    mlp_forward,
    policy_forward,
    polyak_update,
    value_estimate,
)
from .replay import ReplayBuffer, SegmentBatch
from .seeding import stream

log = logging.getLogger(__name__)

LOGSTD_BOUNDS = (-5.0, 2.0)


@dataclass
class ReinforceConfig:
    gamma: float = 0.99
    lam: float = 0.95  # advantage mixing; 1.0 recovers Monte-Carlo returns
    policy_lr: float = 1e-3
    value_lr: float = 1e-3
    grad_clip: float = 1.0
    standardize: bool = True
    episodes_per_update: int = 2
    logstd_init: float = -0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.episodes_per_update < 1:
            raise ValueError("episodes_per_update must be positive")


def discounted_return(rewards, gamma):
    rewards = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    return float(np.sum(rewards * gamma ** np.arange(rewards.shape[0])))


def reward_to_go(rewards, gamma, bootstrap=0.0):
    """Discounted suffix sums; bootstrap stands in for the cut-off tail."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = float(bootstrap)
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae(rewards, values, gamma, lam):
    """Advantages A_t = sum_k (gamma*lam)^k * delta_{t+k} with
    delta_t = r_t + gamma*V_{t+1} - V_t, as a backward recursion.

    `values` carries one more entry than `rewards`: the trailing value
    bootstraps the cut-off tail and should be zero at a true terminal."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (rewards.shape[0] + 1,):
        raise ValueError("values must have exactly one more entry than rewards")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    deltas = rewards + gamma * values[1:] - values[:-1]
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        out[t] = acc
    return out


# -- Gaussian policy -----------------------------------------------------------


@dataclass
class ReinforcePolicy:
    """Feedforward mean network plus a state-independent log-std per action
    dimension (the density family is a diagonal Gaussian, clamped so the
    log-likelihood stays finite)."""

    spec: PolicySpec
    params: dict
    adam: AdamState


def make_reinforce_policy(rng, spec, logstd_init=-0.5):
    params = init_policy(rng, spec)
    params["policy/logstd"] = np.full(spec.action_dim, float(logstd_init))
    return ReinforcePolicy(spec, params, AdamState(params))


def sample_actions(params, spec, states, rng):
    mean = np.asarray(policy_forward(ARRAY_OPS, params, np.asarray(states, dtype=np.float64), spec))
    std = np.exp(np.clip(params["policy/logstd"], *LOGSTD_BOUNDS))
    return np.clip(mean + std * rng.normal(size=mean.shape), spec.action_low, spec.action_high)


def gaussian_logp(ops, handles, spec, states, actions):
    """Per-step log-density of `actions` under the policy, (N,)."""
    s = ops.constant(np.ascontiguousarray(states, dtype=np.float64))
    mean = policy_forward(ops, handles, s, spec)
    logstd = ops.clip(handles["policy/logstd"], *LOGSTD_BOUNDS)
    z = ops.mul(ops.sub(ops.constant(np.ascontiguousarray(actions, dtype=np.float64)), mean),
                ops.exp(ops.scale(logstd, -1.0)))
    quad = ops.scale(ops.sum(ops.square(z), axis=1), -0.5)
    norm = ops.add(ops.sum(logstd),
                   ops.constant(np.array(0.5 * spec.action_dim * math.log(2.0 * math.pi))))
    return ops.sub(quad, norm)


# -- value estimators ----------------------------------------------------------


@dataclass
class ValueNet:
    """Small state-value regressor for the on-policy estimator."""

    params: dict
    adam: AdamState
    layers: int

    def __call__(self, states):
        v = mlp_forward(ARRAY_OPS, self.params, "vf",
                        np.ascontiguousarray(np.atleast_2d(states), dtype=np.float64),
                        self.layers)
        return np.asarray(v).reshape(-1)

    def regress(self, states, targets, cfg):
        g = Graph()
        ops = GraphOps(g)
        handles = bind(ops, self.params)
        v = mlp_forward(ops, handles, "vf",
                        g.constant(np.ascontiguousarray(states, dtype=np.float64)), self.layers)
        err = ops.sub(ops.reshape(v, (targets.shape[0],)), ops.constant(targets))
        loss = ops.mean(ops.square(err))
        grads = grad_values(backward(g, loss, self.params.keys(), record=False))
        clipped, _ = clip_global_norm(grads, cfg.grad_clip)
        self.params = adam_step(self.adam, self.params, clipped, cfg.value_lr)
        return np.asarray(ops.value(loss)).item()


def make_value_net(rng, state_dim, width, layers):
    params = init_mlp(rng, "vf", state_dim, 1, width, layers)
    return ValueNet(params, AdamState(params), layers)


@dataclass
class CriticValue:
    """Gradient-stopped V(s) = Q1(s, mean(s)) from a TD-trained twin critic —
    the same value source the learned objective sees. The critic is trained
    by its own TD loop, so regress() here is a no-op."""

    theta: dict
    policy_params: dict
    pspec: PolicySpec
    cspec: CriticSpec

    def __call__(self, states):
        v = value_estimate(ARRAY_OPS, self.theta, self.policy_params,
                           np.ascontiguousarray(np.atleast_2d(states), dtype=np.float64),
                           self.pspec, self.cspec)
        return np.asarray(v).reshape(-1)

    def regress(self, states, targets, cfg):
        return float("nan")


# -- the estimator -------------------------------------------------------------


def _episode_rows(trajectories, value_fn):
    rows = []
    for traj in trajectories:
        if not hasattr(traj, "states") or traj.states.shape[0] != traj.rewards.shape[0] + 1:
            raise TypeError("on_policy mode expects full episode trajectories")
        v = value_fn(traj.states).copy()
        if traj.dones[-1]:
            v[-1] = 0.0
        rows.append((traj.states[:-1], traj.actions, traj.rewards, v))
    return rows


def _segment_rows(batch, value_fn):
    if not isinstance(batch, SegmentBatch):
        raise TypeError("off_policy mode expects a replay segment batch")
    b, k = batch.batch_size, batch.segment_len
    ds = batch.states.shape[-1]
    v = value_fn(batch.states.reshape(b * (k + 1), ds)).reshape(b, k + 1)
    v[:, -1] = v[:, -1] * (1.0 - batch.dones[:, -1])
    return [(batch.states[i, :-1], batch.actions[i], batch.rewards[i], v[i]) for i in range(b)]


def reinforce_gae_update(policy, trajectories, value_fn, cfg, mode="on_policy"):
    """One likelihood-ratio ascent step on sum_t log pi(a_t|s_t) * A_t.

    on_policy consumes freshly collected full episodes and regresses the
    value net to (bootstrapped) discounted returns; off_policy consumes
    replay segments with critic-derived values and no importance
    correction — the estimator is knowingly biased there.
    Returns (policy, info).
    """
    if mode == "on_policy":
        rows = _episode_rows(trajectories, value_fn)
    elif mode == "off_policy":
        rows = _segment_rows(trajectories, value_fn)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    states = np.concatenate([r[0] for r in rows])
    actions = np.concatenate([r[1] for r in rows])
    adv = np.concatenate([gae(r[2], r[3], cfg.gamma, cfg.lam) for r in rows])
    targets = np.concatenate([reward_to_go(r[2], cfg.gamma, bootstrap=r[3][-1]) for r in rows])
    if cfg.standardize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    g = Graph()
    ops = GraphOps(g)
    handles = bind(ops, policy.params)
    logp = gaussian_logp(ops, handles, policy.spec, states, actions)
    loss = ops.scale(ops.mean(ops.mul(logp, ops.constant(adv))), -1.0)
    grads = grad_values(backward(g, loss, policy.params.keys(), record=False))
    clipped, _ = clip_global_norm(grads, cfg.grad_clip)
    policy.params = adam_step(policy.adam, policy.params, clipped, cfg.policy_lr)

    value_loss = value_fn.regress(states, targets, cfg)
    return policy, {"policy_loss": np.asarray(ops.value(loss)).item(), "value_loss": value_loss}


# -- runners -------------------------------------------------------------------


def _metrics_row(index, env_name, env_steps, traj, critic_loss):
    return {
        "agent_id": index,
        "env": env_name,
        "env_steps": env_steps,
        "episode_return": traj.episode_return,
        "critic_loss": critic_loss,
        "anneal_beta": float("nan"),
        "objective_value": float("nan"),
    }


def run_onpolicy_reinforce(env_name, total_steps, master_seed=0, index=0,
                           cfg=None, width=64, layers=3):
    cfg = cfg or ReinforceConfig()
    env = make(env_name)
    pspec = PolicySpec.for_env(env.spec, width=width, layers=layers)
    policy = make_reinforce_policy(stream(master_seed, "policy_init", index), pspec,
                                   cfg.logstd_init)
    value = make_value_net(stream(master_seed, "critic_init", index),
                           env.spec.state_dim, width, layers)
    env_rng = stream(master_seed, "env", index)

    rows, batch = [], []
    env_steps = 0
    value_loss = float("nan")
    while env_steps < total_steps:
        traj = rollout(env, lambda s: sample_actions(policy.params, pspec, s, env_rng), env_rng)
        env_steps += len(traj)
        batch.append(traj)
        if len(batch) >= cfg.episodes_per_update:
            policy, info = reinforce_gae_update(policy, batch, value, cfg, "on_policy")
            value_loss = info["value_loss"]
            batch = []
        rows.append(_metrics_row(index, env_name, env_steps, traj, value_loss))
    return rows


def run_offpolicy_reinforce(env_name, total_steps, master_seed=0, index=0,
                            lcfg=None, rcfg=None, width=64, layers=3,
                            capacity=100_000, segment_len=20):
    """Replay-fed REINFORCE on the deterministic learner's skeleton: same
    warmup, replay, TD-trained twin critic (supplying the values), polyak
    targets, and 2:1 critic-to-policy cadence — only the policy update rule
    differs."""
    lcfg = lcfg or LearnerConfig()
    rcfg = rcfg or ReinforceConfig()
    env = make(env_name)
    pspec = PolicySpec.for_env(env.spec, width=width, layers=layers)
    cspec = CriticSpec(env.spec.state_dim, env.spec.action_dim, width=width, layers=layers)
    policy = make_reinforce_policy(stream(master_seed, "policy_init", index), pspec,
                                   rcfg.logstd_init)
    theta = init_twin_critic(stream(master_seed, "critic_init", index), cspec)
    theta_target = copy_params(theta)
    mean_target = copy_params(policy.params)
    critic_adam = AdamState(theta)
    buf = ReplayBuffer(capacity=capacity, segment_len=segment_len)
    env_rng = stream(master_seed, "env", index)
    target_rng = stream(master_seed, "noise", index)
    sampler_rng = stream(master_seed, "sampler", index)

    rows = []
    env_steps = 0
    ticks = 0
    while env_steps < total_steps:
        if env_steps < lcfg.warmup_steps:
            traj = rollout(env, random_policy(env, env_rng), env_rng)
        else:
            traj = rollout(env, lambda s: sample_actions(policy.params, pspec, s, env_rng),
                           env_rng)
        buf.add(traj)
        env_steps += len(traj)
        losses = []
        if env_steps >= lcfg.warmup_steps:
            for _ in range(len(traj)):
                ticks += 1
                s, a, r, s2, d = buf.sample_segments(lcfg.batch_size, sampler_rng).flat()
                y = td_targets(theta_target, mean_target, r, s2, d, lcfg, pspec, cspec,
                               target_rng)
                grads, closs = critic_loss_grads(theta, s, a, y, cspec)
                clipped, _ = clip_global_norm(grads, lcfg.grad_clip)
                theta = adam_step(critic_adam, theta, clipped, lcfg.critic_lr)
                theta_target = polyak_update(theta_target, theta, lcfg.polyak)
                losses.append(closs)
                if ticks % lcfg.critic_per_policy == 0:
                    pbatch = buf.sample_segments(lcfg.batch_size, sampler_rng)
                    values = CriticValue(theta, policy.params, pspec, cspec)
                    policy, _ = reinforce_gae_update(policy, pbatch, values, rcfg, "off_policy")
                    mean_target = polyak_update(mean_target, policy.params, lcfg.polyak)
        critic_loss = float(np.mean(losses)) if losses else float("nan")
        rows.append(_metrics_row(index, env_name, env_steps, traj, critic_loss))
    return rows


def run_td3(env_name, total_steps, cfg=None, master_seed=0, index=0,
            width=64, layers=3, capacity=100_000, segment_len=20):
    # the learner with no objective is exactly the deterministic baseline:
    # beta stays 0 and every policy update is the DDPG-style critic ascent
    agent = make_agent(make(env_name), cfg or LearnerConfig(), master_seed, index,
                       width=width, layers=layers, capacity=capacity,
                       segment_len=segment_len)
    rows = []
    while agent.env_steps < total_steps:
        rows.append(agent.run_episode())
    return rows
