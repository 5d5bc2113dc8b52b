"""Deterministic toy continuous-control environments.

All three tasks are pure functions of (state, action) with explicit Euler
dynamics, bounded rewards, and 200-step episodes. `step` never looks at a
clock: the `done` it returns is the terminal predicate only, and time-limit
ends are handled by `rollout` (and bootstrap as non-terminal downstream).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    episode_len: int
    dt: float
    reward_bound: float  # |r| <= reward_bound for every reachable transition


@dataclass
class Trajectory:
    """One rollout. states has length len(actions)+1 (trailing next-state).

    dones flags the terminal predicate; an episode cut by the time limit has
    dones[-1] == False.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self):
        return float(np.sum(self.rewards))


class Env:
    spec: EnvSpec

    def reset(self, rng):
        raise NotImplementedError

    def step(self, state, action):
        raise NotImplementedError

    def _clip_action(self, action):
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise ValueError(
                f"{self.spec.name}: action shape {action.shape} != ({self.spec.action_dim},)"
            )
        return np.clip(action, self.spec.action_low, self.spec.action_high)


class PointMass(Env):
    """Force-controlled point mass on a bounded plane; goal at the origin.

    reward = -(dist to goal)^2 - 0.01 |a|^2, evaluated at the pre-step state.
    """

    spec = EnvSpec("point_mass", 4, 2, -1.0, 1.0, 200, 0.05, 9.0)

    def reset(self, rng):
        pos = rng.uniform(-1.0, 1.0, size=2)
        return np.concatenate([pos, np.zeros(2)])

    def step(self, state, action):
        a = self._clip_action(action)
        pos, vel = state[:2], state[2:]
        reward = -float(pos @ pos) - 0.01 * float(a @ a)
        new_pos = np.clip(pos + self.spec.dt * vel, -2.0, 2.0)
        new_vel = np.clip(vel + self.spec.dt * a, -2.0, 2.0)
        return np.concatenate([new_pos, new_vel]), reward, False


class PendulumSwingup(Env):
    """Torque-limited pendulum; angle 0 is upright, state is [cos, sin, omega].

    Semi-implicit Euler, speed clipped to +-8. reward =
    -(angle^2 + 0.1 omega^2 + 0.001 u^2) at the pre-step state.
    """

    spec = EnvSpec("pendulum_swingup", 3, 1, -2.0, 2.0, 200, 0.05, 17.0)

    _g = 10.0
    _m = 1.0
    _l = 1.0

    def reset(self, rng):
        theta = rng.uniform(-np.pi, np.pi)
        omega = rng.uniform(-1.0, 1.0)
        return np.array([np.cos(theta), np.sin(theta), omega])

    def step(self, state, action):
        u = float(self._clip_action(action)[0])
        theta = np.arctan2(state[1], state[0])
        omega = float(state[2])
        reward = -(theta * theta + 0.1 * omega * omega + 0.001 * u * u)
        dt = self.spec.dt
        accel = (3.0 * self._g / (2.0 * self._l)) * np.sin(theta) + (
            3.0 / (self._m * self._l**2)
        ) * u
        omega = float(np.clip(omega + accel * dt, -8.0, 8.0))
        theta = theta + omega * dt
        return np.array([np.cos(theta), np.sin(theta), omega]), reward, False


class HillCar(Env):
    """Under-powered car in a valley; sparse +100 bonus for cresting the hill.

    reward = -0.01 u^2 per step plus the bonus on the transition that reaches
    the goal position; reaching the goal ends the episode.
    """

    spec = EnvSpec("hill_car", 2, 1, -1.0, 1.0, 200, 0.05, 101.0)

    _power = 0.060  # per-unit-time force scale
    _gravity = 0.050
    _vmax = 0.06
    _goal = 0.45
    _bonus = 100.0

    def reset(self, rng):
        # start spread keeps the bonus discoverable by undirected exploration
        # (a few percent of random episodes) while keeping every successful
        # episode longer than a replay segment
        return np.array([rng.uniform(-1.1, -0.25), rng.uniform(-0.03, 0.03)])

    def step(self, state, action):
        u = float(self._clip_action(action)[0])
        x, v = float(state[0]), float(state[1])
        dt = self.spec.dt
        v = v + dt * (u * self._power - self._gravity * np.cos(3.0 * x))
        v = float(np.clip(v, -self._vmax, self._vmax))
        x = x + v
        if x <= -1.2:
            x, v = -1.2, 0.0
        done = x >= self._goal
        reward = -0.01 * u * u + (self._bonus if done else 0.0)
        return np.array([min(x, 0.6), v]), reward, bool(done)


_REGISTRY = {cls.spec.name: cls for cls in (PointMass, PendulumSwingup, HillCar)}

ENV_NAMES = tuple(sorted(_REGISTRY))


def make(name):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown env {name!r}; known: {list(ENV_NAMES)}") from None


def reset(env, seed):
    """Initial state from the start-state distribution; int seed or Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return env.reset(rng)


def step(env, state, action):
    return env.step(np.asarray(state, dtype=np.float64), action)


def rollout(env, policy, rng, noise_std=0.0, max_steps=None):
    """Run one episode: actions are policy(state) plus optional exploration
    noise, clipped to the action bounds. Stops at the terminal predicate or
    the env's episode length."""
    T = env.spec.episode_len if max_steps is None else min(max_steps, env.spec.episode_len)
    state = env.reset(rng)
    states = [state]
    actions = []
    rewards = []
    dones = []
    for _ in range(T):
        a = np.asarray(policy(state), dtype=np.float64)
        if noise_std > 0.0:
            a = a + rng.normal(0.0, noise_std, size=a.shape)
        a = np.clip(a, env.spec.action_low, env.spec.action_high)
        state, r, done = env.step(state, a)
        states.append(state)
        actions.append(a)
        rewards.append(r)
        dones.append(done)
        if done:
            break
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards),
        dones=np.asarray(dones, dtype=bool),
    )


def random_policy(env, rng):
    """Uniform-random policy over the action box (warmup exploration)."""
    low, high = env.spec.action_low, env.spec.action_high

    def policy(_state):
        return rng.uniform(low, high, size=env.spec.action_dim)

    return policy


def pd_controller(kp=4.0, kd=4.0):
    """Hand-written PD reference for point_mass (the performance yardstick)."""

    def policy(state):
        return np.clip(-kp * state[:2] - kd * state[2:], -1.0, 1.0)

    return policy
