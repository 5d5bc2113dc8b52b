"""Metrics persistence: one CSV schema shared by meta runs and baselines so
curves plot together. Floats are written with repr (shortest round-trip), so
a seeded single-worker run reproduces the file byte for byte; in
deterministic mode the wall-clock column is pinned to zero for the same
reason."""

import csv
import time

COLUMNS = (
    "run_id", "phase", "agent_id", "env", "env_steps", "episode_return",
    "critic_loss", "objective_value", "anneal_beta", "wall_ms",
)

PHASES = ("meta_train", "meta_test", "baseline")


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    def __init__(self, path, run_id, phase, deterministic=True):
        if phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
        self.run_id = run_id
        self.phase = phase
        self.deterministic = deterministic
        self._t0 = time.perf_counter()
        self._f = open(path, "a", newline="", encoding="utf-8")
        if self._f.tell() == 0:
            self._f.write(",".join(COLUMNS) + "\n")

    def write(self, row):
        """row: a per-episode metrics dict from a learner/runner."""
        wall = 0 if self.deterministic else int((time.perf_counter() - self._t0) * 1000)
        record = {
            "run_id": self.run_id,
            "phase": self.phase,
            "wall_ms": wall,
            **{k: row[k] for k in ("agent_id", "env", "env_steps", "episode_return",
                                   "critic_loss", "objective_value", "anneal_beta")},
        }
        self._f.write(",".join(_format(record[c]) for c in COLUMNS) + "\n")

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_rows(path, run_id, phase, rows, deterministic=True):
    with MetricsWriter(path, run_id, phase, deterministic) as w:
        for row in rows:
            w.write(row)
    return path


def read_metrics(path):
    """Rows back as typed dicts (ints/floats restored, names left as str)."""
    out = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append({
                "run_id": row["run_id"],
                "phase": row["phase"],
                "agent_id": int(row["agent_id"]),
                "env": row["env"],
                "env_steps": int(row["env_steps"]),
                "episode_return": float(row["episode_return"]),
                "critic_loss": float(row["critic_loss"]),
                "objective_value": float(row["objective_value"]),
                "anneal_beta": float(row["anneal_beta"]),
                "wall_ms": int(row["wall_ms"]),
            })
    return out
