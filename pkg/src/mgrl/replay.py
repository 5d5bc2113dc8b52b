"""Per-agent episodic replay with fixed-length segment sampling.

Episodes are stored whole and evicted whole (FIFO) once the transition
capacity is exceeded. Sampling draws (episode, start) pairs uniformly over
all valid starts, so segments never cross an episode boundary; episodes
shorter than the segment length contribute no starts. Critic updates consume
the same batches as flat transitions.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class SegmentBatch:
    """states has one trailing next-state column: states[:, k+1] follows
    actions[:, k]. dones holds terminal-predicate flags (time-limit ends stay
    zero and bootstrap downstream)."""

    states: np.ndarray  # (B, K+1, state_dim)
    actions: np.ndarray  # (B, K, action_dim)
    rewards: np.ndarray  # (B, K)
    dones: np.ndarray  # (B, K)
    starts: np.ndarray  # (B,)
    ep_lens: np.ndarray  # (B,)
    episodes: np.ndarray  # (B,) stable episode ids

    @property
    def batch_size(self):
        return self.actions.shape[0]

    @property
    def segment_len(self):
        return self.actions.shape[1]

    def time_frac(self):
        """Episode-relative time in [0, 1]: exactly 1 at the episode's final
        transition regardless of where the segment sits."""
        k = np.arange(self.segment_len)
        denom = np.maximum(self.ep_lens - 1, 1).astype(np.float64)
        return (self.starts[:, None] + k[None, :]) / denom[:, None]

    def flat(self):
        """(s, a, r, s_next, done) with the batch and time axes merged."""
        b, k = self.actions.shape[:2]
        return (
            self.states[:, :-1].reshape(b * k, -1),
            self.actions.reshape(b * k, -1),
            self.rewards.reshape(b * k, 1),
            self.states[:, 1:].reshape(b * k, -1),
            self.dones.reshape(b * k, 1),
        )


class ReplayBuffer:
    def __init__(self, capacity=100_000, segment_len=20):
        if segment_len < 1:
            raise ValueError("segment_len must be positive")
        self.capacity = int(capacity)
        self.segment_len = int(segment_len)
        self._episodes = []
        self._size = 0
        self._next_id = 0
        self._cumstarts = None

    def __len__(self):
        return self._size

    @property
    def num_episodes(self):
        return len(self._episodes)

    def add(self, trajectory):
        """Store one Trajectory; evict oldest episodes past capacity."""
        ep = {
            "id": self._next_id,
            "states": np.asarray(trajectory.states, dtype=np.float64),
            "actions": np.asarray(trajectory.actions, dtype=np.float64),
            "rewards": np.asarray(trajectory.rewards, dtype=np.float64),
            "dones": np.asarray(trajectory.dones, dtype=np.float64),
        }
        self._next_id += 1
        self._episodes.append(ep)
        self._size += len(ep["actions"])
        while self._size > self.capacity and len(self._episodes) > 1:
            gone = self._episodes.pop(0)
            self._size -= len(gone["actions"])
        self._cumstarts = None

    def _starts_index(self):
        if self._cumstarts is None:
            counts = [
                max(0, len(ep["actions"]) - self.segment_len + 1) for ep in self._episodes
            ]
            self._cumstarts = np.cumsum(counts)
        return self._cumstarts

    @property
    def total_starts(self):
        idx = self._starts_index()
        return int(idx[-1]) if len(idx) else 0

    def _gather(self, flat_ids):
        cum = self._starts_index()
        k = self.segment_len
        states, actions, rewards, dones = [], [], [], []
        starts, ep_lens, ids = [], [], []
        for fid in flat_ids:
            e = int(np.searchsorted(cum, fid, side="right"))
            start = int(fid - (cum[e - 1] if e else 0))
            ep = self._episodes[e]
            states.append(ep["states"][start : start + k + 1])
            actions.append(ep["actions"][start : start + k])
            rewards.append(ep["rewards"][start : start + k])
            dones.append(ep["dones"][start : start + k])
            starts.append(start)
            ep_lens.append(len(ep["actions"]))
            ids.append(ep["id"])
        return SegmentBatch(
            states=np.stack(states),
            actions=np.stack(actions),
            rewards=np.stack(rewards),
            dones=np.stack(dones),
            starts=np.asarray(starts),
            ep_lens=np.asarray(ep_lens),
            episodes=np.asarray(ids),
        )

    def sample_segments(self, batch_size, rng):
        """Uniform over (episode, start) pairs, with replacement."""
        total = self.total_starts
        if total == 0:
            raise ValueError("replay holds no episode long enough for a segment")
        return self._gather(rng.integers(0, total, size=batch_size))

    def sample_disjoint(self, count, batch_size, rng):
        """`count` batches sharing no (episode, start) pair."""
        total = self.total_starts
        wanted = count * batch_size
        if total < wanted:
            raise ValueError(
                f"need {wanted} distinct segment starts for {count} disjoint "
                f"batches, replay has {total}"
            )
        flat = rng.choice(total, size=wanted, replace=False)
        return [self._gather(flat[i * batch_size : (i + 1) * batch_size]) for i in range(count)]
