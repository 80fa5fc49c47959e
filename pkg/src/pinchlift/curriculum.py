"""Training phases, episode generation, domain randomization and the
contact-frame observation anneal."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from ._validation import check_random_state, check_range
from .commands import CommandRanges, PayloadCommand
from .geometry import Pose, quat_from_yaw
from .grasp import force_closure_check
from .rewards import Phase
from .world import PayloadShape, SceneConfig, WorldParams

CONTROL_HZ = 50
CF_INIT_WINDOW = 2.0  # seconds of contact-frame pose before masking


@dataclass(frozen=True)
class PhaseConfig:
    phase: Phase
    episode_length: float
    command_pool: str                 # "zero" | "height" | "full"
    payload_mass: object              # float, or (low, high) range
    leg_motion_penalty_active: bool


def make_phase_config(phase) -> PhaseConfig:
    try:
        phase = Phase.from_id(phase)
    except (ValueError, KeyError):
        raise ValueError(f"unknown training phase {phase!r}; expected 1, 2 or 3") from None
    if phase is Phase.PINCH:
        return PhaseConfig(phase, 7.0, "zero", 100.0, True)
    if phase is Phase.PINCH_LIFT:
        return PhaseConfig(phase, 14.0, "height", (0.1, 2.0), True)
    return PhaseConfig(phase, 14.0, "full", (0.1, 2.0), False)


def sample_phase_command(pc: PhaseConfig, rng, ranges: CommandRanges = CommandRanges(),
                         p_zero: float = 0.25) -> PayloadCommand:
    """Draw from the phase's command pool; each component may also be zero."""
    if pc.command_pool == "zero":
        return PayloadCommand()
    h = 0.0 if rng.random() < p_zero else rng.uniform(*ranges.h)
    if pc.command_pool == "height":
        return PayloadCommand(np.zeros(2), 0.0, h)
    comps = []
    for rng_range in (ranges.vx, ranges.vy, ranges.omega):
        comps.append(0.0 if rng.random() < p_zero else rng.uniform(*rng_range))
    return PayloadCommand(np.array(comps[:2]), comps[2], h)


# ---------------------------------------------------------------------------
# domain randomization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationNoise:
    # defaults chosen here; no published magnitudes
    position: float = 0.005
    rotation: float = 0.01
    velocity: float = 0.02
    force: float = 0.5
    t_sync: float = 0.01

    def scaled(self, k: float) -> "ObservationNoise":
        return ObservationNoise(*(k * getattr(self, f) for f in
                                  ("position", "rotation", "velocity", "force", "t_sync")))


ZERO_NOISE = ObservationNoise(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RandomizationConfig:
    mass_range: tuple = (0.1, 2.0)
    friction_range: tuple = (0.5, 1.0)
    base_tau_range: tuple = (0.12, 0.18)
    base_accel_range: tuple = (1.8, 2.2)
    pose_noise_pos: float = 0.05
    pose_noise_yaw: float = 0.1
    obs_noise: ObservationNoise = field(default_factory=ObservationNoise)
    action_noise: float = 0.0
    pulse_rate: float = 0.1          # expected external pushes per second
    pulse_force_range: tuple = (0.0, 3.0)
    pulse_duration: float = 0.2

    def __post_init__(self):
        for name in ("mass_range", "friction_range", "base_tau_range", "base_accel_range",
                     "pulse_force_range"):
            object.__setattr__(self, name, check_range(getattr(self, name), name, lo=0.0))
        for name in ("pose_noise_pos", "pose_noise_yaw", "action_noise", "pulse_rate", "pulse_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def none(cls) -> "RandomizationConfig":
        return cls(mass_range=(2.0, 2.0), friction_range=(0.8, 0.8), base_tau_range=(0.15, 0.15),
                   base_accel_range=(2.0, 2.0), pose_noise_pos=0.0, pose_noise_yaw=0.0,
                   obs_noise=ZERO_NOISE, pulse_rate=0.0)


@dataclass(frozen=True)
class DomainDraw:
    mass: float
    mu: float
    base_tau: tuple
    base_accel: tuple
    pulses: tuple                    # (t_start, duration, fx, fy, fz)
    obs_noise: ObservationNoise
    action_noise: float
    pose_noise_pos: float
    pose_noise_yaw: float

    def as_dict(self) -> dict:
        return {
            "mass": self.mass, "mu": self.mu, "base_tau": list(self.base_tau),
            "base_accel": list(self.base_accel), "pulses": [list(p) for p in self.pulses],
            "obs_noise": vars(self.obs_noise).copy(), "action_noise": self.action_noise,
            "pose_noise_pos": self.pose_noise_pos, "pose_noise_yaw": self.pose_noise_yaw,
        }


def _uniform(rng, r):
    lo, hi = r
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def randomize_domain(cfg: RandomizationConfig, rng, n_robots: int = 2,
                     episode_length: float = 14.0) -> DomainDraw:
    rng = check_random_state(rng)
    mass = _uniform(rng, cfg.mass_range)
    mu = _uniform(rng, cfg.friction_range)
    tau = tuple(_uniform(rng, cfg.base_tau_range) for _ in range(n_robots))
    acc = tuple(_uniform(rng, cfg.base_accel_range) for _ in range(n_robots))
    pulses = []
    if cfg.pulse_rate > 0:
        t = rng.exponential(1.0 / cfg.pulse_rate)
        while t < episode_length:
            mag = _uniform(rng, cfg.pulse_force_range)
            ang = rng.uniform(0.0, 2 * math.pi)
            pulses.append((round(float(t), 6), cfg.pulse_duration,
                           mag * math.cos(ang), mag * math.sin(ang), 0.0))
            t += rng.exponential(1.0 / cfg.pulse_rate)
    return DomainDraw(mass, mu, tau, acc, tuple(pulses), cfg.obs_noise, cfg.action_noise,
                      cfg.pose_noise_pos, cfg.pose_noise_yaw)


# ---------------------------------------------------------------------------
# contact-frame observability
# ---------------------------------------------------------------------------

class AnnealStage(Enum):
    HZ50 = 50.0
    HZ25 = 25.0
    HZ5 = 5.0
    HZ0_25 = 0.25
    HZ0 = 0.0

    @classmethod
    def parse(cls, v) -> "AnnealStage":
        if isinstance(v, cls):
            return v
        if isinstance(v, str):
            v = float(v.lower().replace("hz", ""))
        return cls(float(v))


ANNEAL_SEQUENCE = (AnnealStage.HZ50, AnnealStage.HZ25, AnnealStage.HZ5, AnnealStage.HZ0_25, AnnealStage.HZ0)


@dataclass(frozen=True)
class ObservabilityMode:
    mode: str = "cf_plus"                       # "cf_plus" | "cf_init"
    anneal_stage: AnnealStage = AnnealStage.HZ0

    def __post_init__(self):
        if self.mode not in ("cf_plus", "cf_init"):
            raise ValueError(f"unknown observability mode {self.mode!r}")
        object.__setattr__(self, "anneal_stage", AnnealStage.parse(self.anneal_stage))


def cf_pose_update_due(mode: ObservabilityMode, t: float, tick: int, control_hz: int = CONTROL_HZ) -> bool:
    if t < 0:
        raise ValueError("time must be non-negative")
    if mode.mode == "cf_plus":
        return True
    if t < CF_INIT_WINDOW:
        return True
    hz = mode.anneal_stage.value
    if hz <= 0:
        return False
    period = control_hz / hz
    # ticks on the f-Hz grid; works for non-integer periods too
    return math.floor(tick / period) != math.floor((tick - 1) / period) if tick > 0 else True


# ---------------------------------------------------------------------------
# contact-frame sampling
# ---------------------------------------------------------------------------

def _lateral_point(shape: PayloadShape, rng, height, pad_margin):
    """Random point on a lateral face (pad kept fully on it) and the inward yaw."""
    if shape.kind == "box":
        l, w, _ = shape.dims
        # (face length, fixed coordinate axis, sign) for -y, +x, +y, -x faces
        faces = ((l, 1, -1.0), (w, 0, 1.0), (l, 1, 1.0), (w, 0, -1.0))
        lengths = np.array([f[0] for f in faces])
        k = rng.choice(4, p=lengths / lengths.sum())
        length, axis, sign = faces[k]
        p = np.zeros(3)
        p[axis] = sign * 0.5 * (l if axis == 0 else w)
        half = max(0.5 * length - pad_margin, 0.0)
        p[1 - axis] = rng.uniform(-half, half)
        p[2] = height
        inward = np.zeros(2)
        inward[axis] = -sign
        return p, math.atan2(inward[1], inward[0])
    r = shape.dims[0]
    a = rng.uniform(0.0, 2 * math.pi)
    return np.array([r * math.cos(a), r * math.sin(a), height]), a + math.pi


def sample_contact_frames(shape: PayloadShape, n: int, rng, mu: float = 0.8,
                          height_range=(0.40, 0.50), max_attempts: int = 100,
                          pad_half_size: float = 0.03, return_attempts: bool = False):
    """Rejection-sample ``n`` lateral contact frames until force closure holds."""
    if n < 2:
        raise ValueError("need at least two contact frames")
    rng = check_random_state(rng)
    lo, hi = check_range(height_range, "height_range", lo=0.0)
    for attempt in range(1, max_attempts + 1):
        frames = []
        for _ in range(n):
            p, yaw = _lateral_point(shape, rng, rng.uniform(lo, hi), pad_half_size)
            frames.append(Pose(p, quat_from_yaw(yaw)))
        if force_closure_check(frames, mu, pad_half_size=pad_half_size):
            return (frames, attempt) if return_attempts else frames
    raise RuntimeError(f"no force-closure contact set after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# episode generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeConfig:
    """Everything that, with a seed, pins down one episode."""

    phase: PhaseConfig
    scene: SceneConfig
    command: PayloadCommand
    mode: ObservabilityMode
    draw: DomainDraw
    seed: int
    spawn_seed: int

    def header(self) -> dict:
        return {
            "seed": self.seed, "spawn_seed": self.spawn_seed, "phase": self.phase.phase.value,
            "episode_length": self.phase.episode_length,
            "n_robots": self.scene.n_robots, "shape": self.scene.shape.kind,
            "dims": list(self.scene.shape.dims), "arrangement": self.scene.arrangement,
            "contact_frames": [f.as_array().tolist() for f in (self.scene.contact_frames or ())],
            "command": self.command.as_array().tolist(),
            "mode": self.mode.mode, "anneal_stage": self.mode.anneal_stage.value,
            "draw": self.draw.as_dict(),
        }


def make_episode(seed: int, phase, shape: PayloadShape, n_robots: int,
                 randomization: RandomizationConfig = RandomizationConfig(),
                 mode: ObservabilityMode = ObservabilityMode(),
                 ranges: CommandRanges = CommandRanges(), arrangement: str = "nominal",
                 mass: Optional[float] = None, params: WorldParams = WorldParams(),
                 command: Optional[PayloadCommand] = None,
                 eval_commands: bool = False, episode_length: Optional[float] = None) -> EpisodeConfig:
    """Deterministic episode from ``(seed, phase, configs)``.

    ``eval_commands`` draws the full uniform command instead of the phase pool;
    ``mass`` pins the payload mass (otherwise the phase decides).
    """
    pc = make_phase_config(phase)
    if episode_length is not None:
        pc = replace(pc, episode_length=float(episode_length))
    ss = np.random.SeedSequence(seed)
    rng_cmd, rng_dom, rng_cf, rng_pose = (np.random.default_rng(s) for s in ss.spawn(4))
    draw = randomize_domain(randomization, rng_dom, n_robots, pc.episode_length)
    if mass is not None:
        draw = replace(draw, mass=float(mass))
    elif not isinstance(pc.payload_mass, tuple):
        draw = replace(draw, mass=float(pc.payload_mass))
    if command is None:
        if eval_commands:
            from .commands import sample_eval_command
            command = sample_eval_command(rng_cmd, ranges)
        else:
            command = sample_phase_command(pc, rng_cmd, ranges)
    frames = None
    if arrangement == "sampled":
        frames = tuple(sample_contact_frames(shape, n_robots, rng_cf, mu=draw.mu))
        arrangement = "given"
    scene = SceneConfig(shape=shape, mass=draw.mass, n_robots=n_robots, arrangement=arrangement,
                        contact_frames=frames, pose_noise_pos=draw.pose_noise_pos,
                        pose_noise_yaw=draw.pose_noise_yaw, params=replace(params, mu=draw.mu))
    # pose noise is drawn by spawn_scene from this seed
    return EpisodeConfig(pc, scene, command, mode, draw, int(seed), int(rng_pose.integers(2**31 - 1)))
