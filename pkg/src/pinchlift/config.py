"""Experiment configuration: one versioned JSON document per run.

Unknown keys anywhere are errors, and the canonical form of a loaded config
hashes to a stable hex digest that every output file carries.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .commands import CommandRanges
from .curriculum import AnnealStage, ObservabilityMode, ObservationNoise, RandomizationConfig
from .policy import ActionBounds
from .rewards import DEFAULT_SCHEDULE, RewardShaping, RewardWeights
from .world import DEFAULT_BOX, SMALL_BOX, PayloadShape

CONFIG_VERSION = 1
CONTROLLERS = ("scripted", "rigid_oracle", "learned")
OUT_DIR_ENV = "PINCHLIFT_OUT_DIR"

_NAMED_SHAPES = {"small_box": SMALL_BOX, "default_box": DEFAULT_BOX}


class ConfigError(ValueError):
    """Invalid experiment configuration (exit status 3 on the command line)."""


def _strict(cls, data, where):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    extra = sorted(set(data) - names)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")
    kw = {}
    for k, v in data.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass(frozen=True)
class SceneSection:
    shape: str = "small_box"                # small_box | default_box | box | cylinder
    dims: Optional[tuple] = None            # required for box / cylinder
    mass: Optional[float] = None            # None: the phase decides
    n_robots: int = 2
    arrangement: str = "nominal"               # nominal | sampled

    def payload(self) -> PayloadShape:
        if self.shape in _NAMED_SHAPES:
            if self.dims is not None:
                raise ValueError(f"dims must be omitted for named shape {self.shape!r}")
            return _NAMED_SHAPES[self.shape]
        if self.shape in ("box", "cylinder"):
            if self.dims is None:
                raise ValueError(f"shape {self.shape!r} needs dims")
            return PayloadShape(self.shape, tuple(float(d) for d in self.dims))
        raise ValueError(f"unknown shape {self.shape!r}")

    def __post_init__(self):
        if int(self.n_robots) != self.n_robots or self.n_robots < 2:
            raise ValueError("n_robots must be an integer >= 2")
        if self.arrangement not in ("nominal", "sampled"):
            raise ValueError(f"unknown arrangement {self.arrangement!r}")
        if self.mass is not None and not (self.mass > 0 and math.isfinite(self.mass)):
            raise ValueError("mass must be positive")
        self.payload()


@dataclass(frozen=True)
class ControllerSection:
    kind: str = "scripted"
    params_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.kind!r}; expected one of {', '.join(CONTROLLERS)}")
        if self.kind == "learned" and not self.params_path:
            raise ValueError("learned controller needs params_path")


@dataclass(frozen=True)
class CommandSection:
    eval_commands: bool = True              # full uniform draw instead of the phase pool
    vx: tuple = (-0.4, 0.4)
    vy: tuple = (-0.4, 0.4)
    omega: tuple = (-0.4, 0.4)
    h: tuple = (0.1, 0.3)

    def ranges(self) -> CommandRanges:
        return CommandRanges(self.vx, self.vy, self.omega, self.h)

    def __post_init__(self):
        self.ranges()


@dataclass(frozen=True)
class TrainStage:
    phase: int = 1
    generations: int = 50
    anneal_stage: float = 0.0
    mode: str = "cf_plus"

    def __post_init__(self):
        if self.phase not in (1, 2, 3):
            raise ValueError("stage phase must be 1, 2 or 3")
        if self.generations < 0:
            raise ValueError("stage generations must be >= 0")
        ObservabilityMode(self.mode, self.anneal_stage)


def _default_stages():
    return (TrainStage(1, 50), TrainStage(2, 50), TrainStage(3, 50, 50.0, "cf_init"),
            TrainStage(3, 25, 5.0, "cf_init"), TrainStage(3, 25, 0.0, "cf_init"))


@dataclass(frozen=True)
class TrainingSection:
    population_size: int = 16
    sigma: float = 0.05
    learning_rate: float = 0.02
    lr_decay: float = 1.0
    sigma_decay: float = 1.0
    weight_decay: float = 0.0
    hidden: int = 64
    init_scale: float = 1.0
    episodes_per_member: int = 1
    checkpoint_every: int = 10
    stages: tuple = field(default_factory=_default_stages)

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be an even number >= 2")
        if self.sigma < 0 or self.learning_rate < 0:
            raise ValueError("sigma and learning_rate must be >= 0")
        if self.hidden < 1 or self.episodes_per_member < 1 or self.checkpoint_every < 1:
            raise ValueError("hidden, episodes_per_member and checkpoint_every must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    scene: SceneSection = field(default_factory=SceneSection)
    phase: int = 3
    mode: str = "cf_plus"
    anneal_stage: float = 0.0
    controller: ControllerSection = field(default_factory=ControllerSection)
    commands: CommandSection = field(default_factory=CommandSection)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    shaping: RewardShaping = field(default_factory=RewardShaping)
    schedule: Optional[dict] = None         # term -> [phases, t_start, t_end]; None = default
    bounds: ActionBounds = field(default_factory=ActionBounds)
    training: TrainingSection = field(default_factory=TrainingSection)
    seed: int = 0
    episodes: int = 10
    episode_length: Optional[float] = None
    rewards: bool = True
    out_dir: Optional[str] = None
    base_dir: str = field(default=".", compare=False)   # for relative paths; not serialized

    def observability(self) -> ObservabilityMode:
        return ObservabilityMode(self.mode, self.anneal_stage)

    def resolve(self, path) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def output_dir(self, override=None) -> str:
        return override or self.out_dir or os.environ.get(OUT_DIR_ENV) or "pinchlift_out"

    def reward_schedule(self) -> Optional[dict]:
        if self.schedule is None:
            return None
        out = dict(DEFAULT_SCHEDULE)
        for k, (phases, t0, t1) in self.schedule.items():
            out[k] = (set(phases), float(t0), math.inf if t1 is None else float(t1))
        return out

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            d[f.name] = _plain(getattr(self, f.name))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Command-line overrides; ``controller`` may be a kind string."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if "controller" in kw and isinstance(kw["controller"], str):
            kw["controller"] = ControllerSection(kw["controller"], self.controller.params_path)
        try:
            out = replace(self, **kw)
            _validate_top(out)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        return out


def _plain(v):
    if hasattr(v, "__dataclass_fields__"):
        return {f.name: _plain(getattr(v, f.name)) for f in fields(v)}
    if isinstance(v, AnnealStage):
        return v.value
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, set):
        return sorted(v)
    if isinstance(v, float) and math.isinf(v):
        return None
    return v


def _validate_top(c: ExperimentConfig):
    if c.version != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {c.version}; expected {CONFIG_VERSION}")
    if c.phase not in (1, 2, 3):
        raise ValueError("phase must be 1, 2 or 3")
    c.observability()
    if c.episodes < 1:
        raise ValueError("episodes must be >= 1")
    if not isinstance(c.seed, int) or c.seed < 0:
        raise ValueError("seed must be a non-negative integer")
    if c.episode_length is not None and not c.episode_length > 0:
        raise ValueError("episode_length must be positive")
    if c.schedule is not None:
        unknown = sorted(set(c.schedule) - set(DEFAULT_SCHEDULE))
        if unknown:
            raise ValueError(f"schedule: unknown term(s) {', '.join(unknown)}")
        for k, v in c.schedule.items():
            if not (isinstance(v, (list, tuple)) and len(v) == 3):
                raise ValueError(f"schedule.{k}: expected [phases, t_start, t_end]")
    if c.controller.kind == "learned":
        path = c.resolve(c.controller.params_path)
        if not os.path.isfile(path):
            raise ValueError(f"controller.params_path: no such file {path}")


def config_from_dict(d: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    names = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    extra = sorted(set(d) - names)
    if extra:
        raise ConfigError(f"config: unknown key(s) {', '.join(extra)}")
    d = dict(d)
    if "version" not in d:
        raise ConfigError("config: missing 'version'")
    kw = {"base_dir": base_dir}
    for k, v in d.items():
        if k == "scene":
            kw[k] = _strict(SceneSection, v, "scene")
        elif k == "controller":
            kw[k] = _strict(ControllerSection, v, "controller")
        elif k == "commands":
            kw[k] = _strict(CommandSection, v, "commands")
        elif k == "randomization":
            if isinstance(v, dict) and "obs_noise" in v:
                v = dict(v, obs_noise=_strict(ObservationNoise, v["obs_noise"], "randomization.obs_noise"))
            kw[k] = _strict(RandomizationConfig, v, "randomization")
        elif k == "weights":
            kw[k] = _strict(RewardWeights, v, "weights")
        elif k == "shaping":
            kw[k] = _strict(RewardShaping, v, "shaping")
        elif k == "bounds":
            kw[k] = _strict(ActionBounds, v, "bounds")
        elif k == "training":
            if isinstance(v, dict) and "stages" in v:
                if not isinstance(v["stages"], list):
                    raise ConfigError("training.stages: expected a list")
                v = dict(v, stages=tuple(_strict(TrainStage, s, f"training.stages[{i}]")
                                         for i, s in enumerate(v["stages"])))
            kw[k] = _strict(TrainingSection, v, "training")
        else:
            kw[k] = v
    try:
        cfg = ExperimentConfig(**kw)
        _validate_top(cfg)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"config: {e}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return config_from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))


def default_config_dict() -> dict:
    return ExperimentConfig().to_dict()
