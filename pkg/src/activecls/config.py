"""JSON experiment configuration.

A config file is an object whose optional sections map onto the dataclasses
below; unknown keys are rejected so typos fail loudly::

    {"world": {"arena_width": 15, "arena_height": 15},
     "episode": {"num_targets_range": [1, 3]},
     "ppo": {"steps_per_update": 8000},
     "train": {"budget": 400000, "phase_boundary": 0.75}}
"""
import json
from dataclasses import dataclass, field, fields, replace

from .env import EnvSpec, EpisodeConfig, RewardWeights
from .mpc import MPCConfig
from .policy import NetDims
from .ppo import PPOHyperparams
from .sensor import CameraModel, SensorLaw
from .world import SocialForcesConfig, WorldConfig


@dataclass
class ExperimentConfig:
    spec: EnvSpec = field(default_factory=EnvSpec)
    ppo: PPOHyperparams = field(default_factory=PPOHyperparams)
    dims: NetDims = field(default_factory=NetDims)
    mpc: MPCConfig = field(default_factory=MPCConfig)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)


_SPEC_SECTIONS = {
    "world": ("world", WorldConfig),
    "episode": ("episode", EpisodeConfig),
    "camera": ("camera", CameraModel),
    "sensor": ("law", SensorLaw),
    "rewards": ("rewards", RewardWeights),
    "social": ("social", SocialForcesConfig),
}


def _coerce(cls, base, values):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return replace(base, **vals)


def from_dict(d):
    allowed = set(_SPEC_SECTIONS) | {"ppo", "network", "mpc", "train", "eval"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    cfg = ExperimentConfig()
    spec = cfg.spec
    for key, (attr, cls) in _SPEC_SECTIONS.items():
        if key in d:
            spec = replace(spec, **{attr: _coerce(cls, getattr(spec, attr), d[key])})
    cfg.spec = spec
    if "ppo" in d:
        cfg.ppo = _coerce(PPOHyperparams, cfg.ppo, d["ppo"])
    if "network" in d:
        cfg.dims = _coerce(NetDims, cfg.dims, d["network"])
    if "mpc" in d:
        cfg.mpc = _coerce(MPCConfig, cfg.mpc, d["mpc"])
    cfg.train = dict(d.get("train", {}))
    cfg.eval = dict(d.get("eval", {}))
    return cfg


def load(path):
    with open(path) as fh:
        return from_dict(json.load(fh))
