"""Per-robot reward terms, their activation schedule, and the weighted total."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ._validation import check_positive
from .geometry import (Pose, constellation_distance, make_base_constellation,
                       make_cf_constellation, make_pad_constellation, cross3,
                       tilt_angle, yaw_of)

TERMS = (
    "contact_constellation", "base_tracking", "binary_contact", "height_tracking",
    "velocity_tracking", "torque_joint_motion", "action_smoothness", "leg_motion",
    "levelness", "payload_acceleration", "outside_range",
)
PENALTY_TERMS = TERMS[5:]


class Phase(str, Enum):
    PINCH = "pinch"
    PINCH_LIFT = "pinch_lift"
    FULL_TRANSPORT = "full_transport"

    @classmethod
    def from_id(cls, phase) -> "Phase":
        if isinstance(phase, cls):
            return phase
        table = {1: cls.PINCH, 2: cls.PINCH_LIFT, 3: cls.FULL_TRANSPORT}
        if phase in table:
            return table[phase]
        return cls(phase)

    @property
    def index(self) -> int:
        return {Phase.PINCH: 1, Phase.PINCH_LIFT: 2, Phase.FULL_TRANSPORT: 3}[self]


@dataclass(frozen=True)
class RewardWeights:
    contact_constellation: float = 2.0
    base_tracking: float = 2.0
    binary_contact: float = 0.5
    height_tracking: float = 1.0
    velocity_tracking: float = 1.5
    torque_joint_motion: float = 0.01
    action_smoothness: float = 0.01
    leg_motion: float = 0.1
    levelness: float = 0.1
    payload_acceleration: float = 0.01
    outside_range: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise ValueError(f"weight {f.name} must be finite")
            object.__setattr__(self, f.name, v)

    def as_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "RewardWeights":
        d = self.as_dict()
        d.update(kw)
        return RewardWeights(**d)


@dataclass(frozen=True)
class RewardShaping:
    sigma_velocity: float = 0.25
    sigma_height: float = 0.1
    contact_force_threshold: float = 1.0
    outside_radius: float = 0.2
    force_scale: float = 60.0

    def __post_init__(self):
        check_positive(self.sigma_velocity, "sigma_velocity")
        check_positive(self.sigma_height, "sigma_height")


# term -> (phases where active, t_start, t_end) in seconds of episode time
DEFAULT_SCHEDULE = {
    "contact_constellation": ({"pinch", "pinch_lift", "full_transport"}, 0.0, math.inf),
    "binary_contact": ({"pinch", "pinch_lift", "full_transport"}, 0.0, 5.0),
    "leg_motion": ({"pinch", "pinch_lift"}, 0.0, 4.0),
    "height_tracking": ({"pinch_lift", "full_transport"}, 5.0, math.inf),
    "levelness": ({"pinch_lift", "full_transport"}, 5.0, math.inf),
    "velocity_tracking": ({"full_transport"}, 5.0, math.inf),
    "base_tracking": ({"full_transport"}, 5.0, math.inf),
    "payload_acceleration": ({"full_transport"}, 5.0, math.inf),
    "torque_joint_motion": ({"pinch", "pinch_lift", "full_transport"}, 0.0, math.inf),
    "action_smoothness": ({"pinch", "pinch_lift", "full_transport"}, 0.0, math.inf),
    "outside_range": ({"pinch", "pinch_lift", "full_transport"}, 0.0, math.inf),
}


@dataclass(frozen=True)
class ScheduleState:
    phase: Phase
    episode_time: float

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase.from_id(self.phase))


def schedule_weights(s: ScheduleState, base: RewardWeights, schedule: Optional[dict] = None) -> RewardWeights:
    """Zero every weight whose term is inactive at ``s``."""
    schedule = DEFAULT_SCHEDULE if schedule is None else schedule
    out = {}
    for name, w in base.as_dict().items():
        phases, t0, t1 = schedule[name]
        active = s.phase.value in phases and t0 <= s.episode_time < t1
        out[name] = w if active else 0.0
    return RewardWeights(**out)


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------

def r_contact(pad_pose: Pose, cf_pose: Pose) -> float:
    return -constellation_distance(make_pad_constellation(pad_pose), make_cf_constellation(cf_pose))


def r_track(base_pose: Pose, rigid_targets) -> float:
    """``rigid_targets`` is a base-offset constellation (or the rigid base pose)."""
    if isinstance(rigid_targets, Pose):
        rigid_targets = make_base_constellation(rigid_targets)
    return -constellation_distance(make_base_constellation(base_pose), rigid_targets)


def r_constellation(pad_pose: Pose, cf_pose: Pose, base_pose: Pose, rigid_targets) -> float:
    return r_contact(pad_pose, cf_pose) + r_track(base_pose, rigid_targets)


def exp_tracking_reward(error, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"kernel scale must be positive, got {sigma!r}")
    e = np.asarray(error, dtype=float)
    return float(np.exp(-np.sum(e * e) / (sigma * sigma)))


def binary_contact_reward(c, threshold: float = 1.0) -> float:
    if c is None:
        return 0.0
    return 1.0 if (c.in_contact and c.normal_force > threshold) else 0.0


def regularization_penalties(state: dict, action, prev_action,
                             shaping: RewardShaping = RewardShaping()) -> dict:
    """Quadratic penalty terms, each <= 0 and zero at the ideal.

    ``state`` keys: ``servo_force``, ``pad_rel_velocity``, ``base_velocity``
    (vx, vy, omega), ``payload_q``, ``payload_acc``, ``pad_pos``, ``cf_pos``.
    """
    a = np.asarray(action, float)
    a0 = np.zeros_like(a) if prev_action is None else np.asarray(prev_action, float)
    f = np.asarray(state.get("servo_force", np.zeros(3)), float) / shaping.force_scale
    vrel = np.asarray(state.get("pad_rel_velocity", np.zeros(3)), float)
    vb = np.asarray(state.get("base_velocity", np.zeros(3)), float)
    q = state.get("payload_q", np.array([1.0, 0.0, 0.0, 0.0]))
    acc = np.asarray(state.get("payload_acc", np.zeros(3)), float)
    pad = np.asarray(state.get("pad_pos", np.zeros(3)), float)
    cf = np.asarray(state.get("cf_pos", pad), float)
    outside = max(0.0, float(np.linalg.norm(pad - cf)) - shaping.outside_radius)
    return {
        "torque_joint_motion": -float(f @ f + vrel @ vrel),
        "action_smoothness": -float(np.sum((a - a0) ** 2)),
        "leg_motion": -float(vb @ vb),
        "levelness": -float(tilt_angle(q)) ** 2,
        "payload_acceleration": -float(acc @ acc),
        "outside_range": -outside * outside,
    }


@dataclass
class RewardBreakdown:
    terms: dict
    weights: dict
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(self.weights[k] * self.terms[k] for k in TERMS))


@dataclass
class RewardContext:
    """Quantities the reward needs beyond the world snapshot."""

    cf_commands: Sequence          # per-robot ContactFrameCommand, payload-heading axes
    rigid_base_poses: Sequence     # per-robot Pose the base should occupy
    tracking_active: bool = True   # commands only meaningful after the lift window


def compute_terms(world, r: int, action, prev_action, ctx: RewardContext,
                  shaping: RewardShaping = RewardShaping()) -> dict:
    """Raw (unweighted) value of every term for robot ``r``."""
    pad = world.pad_pose(r)
    cf = world.cf_pose(r)
    base = world.base_pose(r)
    terms = {
        "contact_constellation": r_contact(pad, cf),
        "base_tracking": r_track(base, ctx.rigid_base_poses[r]),
    }
    terms["binary_contact"] = binary_contact_reward(world.contact(r), shaping.contact_force_threshold)
    cmd = ctx.cf_commands[r]
    root = world.payload_root_pose()
    twist = world.payload_root_twist()
    yaw = float(yaw_of(root.orientation))
    c, s = math.cos(yaw), math.sin(yaw)
    v_cmd = np.array([c * cmd.v_cf[0] - s * cmd.v_cf[1], s * cmd.v_cf[0] + c * cmd.v_cf[1]])
    v_cf = twist.linear + cross3(twist.angular, cf.position - root.position)
    vel_err = np.array([v_cf[0] - v_cmd[0], v_cf[1] - v_cmd[1], twist.angular[2] - cmd.omega_cf])
    terms["velocity_tracking"] = exp_tracking_reward(vel_err, shaping.sigma_velocity)
    terms["height_tracking"] = exp_tracking_reward(cf.position[2] - cmd.h_cf, shaping.sigma_height)
    vb = world.base_world_velocity(r)
    state = {
        "servo_force": world.rec_servo[r] if world.rec_servo is not None else np.zeros(3),
        "pad_rel_velocity": world.pad_vel[r] - vb,
        "base_velocity": np.array([vb[0], vb[1], world.base_omega[r]]),
        "payload_q": world.pl_q,
        "payload_acc": world.pl_acc,
        "pad_pos": pad.position,
        "cf_pos": cf.position,
    }
    terms.update(regularization_penalties(state, action, prev_action, shaping))
    return terms


def total_reward(world, actions, prev_actions, schedule: ScheduleState, ctx: RewardContext,
                 weights: RewardWeights = RewardWeights(), shaping: RewardShaping = RewardShaping(),
                 table: Optional[dict] = None) -> list:
    """Per-robot :class:`RewardBreakdown` with schedule-masked weights."""
    w = schedule_weights(schedule, weights, table).as_dict()
    out = []
    for r in range(world.n_robots):
        prev = None if prev_actions is None else prev_actions[r]
        terms = compute_terms(world, r, actions[r], prev, ctx, shaping)
        out.append(RewardBreakdown(terms, dict(w)))
    return out
