"""Line-oriented experiment configuration.

Files are plain `key = value` entries under `[section]` headers (one section
per config dataclass), trivially diffable and serializable back to the same
text. Unknown sections or keys are hard errors; values are typed by the
dataclass field they land in, so a bad entry fails at parse time rather than
mid-run.

Two named profiles exist: "paper" carries the published hyperparameters
(wide networks, 100-segment batches, a million steps per agent) and "desk"
shrinks widths and budgets so full meta-training fits in minutes on a laptop.
"""

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .baselines import ReinforceConfig
from .learner import LearnerConfig
from .meta import MetaConfig
from .objective import ObjectiveSpec


class ConfigError(ValueError):
    """Unknown key/section or an untypeable value."""


@dataclass
class RunConfig:
    env: str = "hill_car"  # meta-test / baseline target
    budget_steps: int = 1_000_000
    baseline: str = "td3"  # td3 | reinforce | offpolicy_reinforce
    seeds: tuple = (0, 1, 2)
    out_dir: str = "runs"
    deterministic: bool = True  # zero the wall-clock column for byte-stable CSVs
    width: int = 350
    layers: int = 3

    def __post_init__(self):
        if self.baseline not in ("td3", "reinforce", "offpolicy_reinforce"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.budget_steps <= 0:
            raise ValueError("budget_steps must be positive")


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)


def paper_profile():
    """Published hyperparameters wherever the source tables pin one."""
    return ExperimentConfig(
        run=RunConfig(),
        learner=LearnerConfig(batch_size=100),
        meta=MetaConfig(population=20, steps_per_agent=1_000_000),
        objective=ObjectiveSpec(conv_layers=3, conv_filters=32),
        reinforce=ReinforceConfig(),
    )


def desk_profile():
    """Shrunk widths and budgets: full meta-training in minutes, not days."""
    return ExperimentConfig(
        run=RunConfig(budget_steps=100_000, width=64, layers=3),
        learner=LearnerConfig(warmup_steps=2_000, anneal_steps=2_000, batch_size=16),
        meta=MetaConfig(population=4, steps_per_agent=60_000),
        objective=ObjectiveSpec(conv_layers=2, conv_filters=16),
        reinforce=ReinforceConfig(),
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(section, key, raw, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(current, int):
            return int(raw.replace("_", ""))
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(current[0]) if current else str
            return tuple(kind(p) for p in parts)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {section}.{key}: {e}") from None


def _apply(cfg, section, key, raw):
    if not hasattr(cfg, section):
        raise ConfigError(f"unknown section [{section}]")
    sub = getattr(cfg, section)
    names = {f.name for f in fields(sub)}
    if key not in names:
        raise ConfigError(f"unknown key {section}.{key}")
    value = _convert(section, key, raw, getattr(sub, key))
    try:
        return replace(cfg, **{section: replace(sub, **{key: value})})
    except ValueError as e:  # the dataclass' own validation
        raise ConfigError(f"invalid {section}.{key}: {e}") from None


def parse_config(text, base=None):
    cfg = base if base is not None else paper_profile()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    for section in cp.sections():
        for key, raw in cp.items(section):
            cfg = _apply(cfg, section, key, raw)
    return cfg


def apply_overrides(cfg, overrides):
    """Each override is SECTION.KEY=VALUE, as passed to --set."""
    for item in overrides:
        head, sep, raw = item.partition("=")
        section, dot, key = head.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg = _apply(cfg, section.strip(), key.strip(), raw)
    return cfg


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg):
    out = io.StringIO()
    for section_field in fields(cfg):
        sub = getattr(cfg, section_field.name)
        out.write(f"[{section_field.name}]\n")
        for f in fields(sub):
            out.write(f"{f.name} = {_format(getattr(sub, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path=None, profile="paper", overrides=()):
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    cfg = PROFILES[profile]()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            cfg = parse_config(f.read(), base=cfg)
    return apply_overrides(cfg, overrides)
