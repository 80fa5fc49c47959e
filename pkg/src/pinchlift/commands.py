"""Team payload commands and their per-robot contact-frame decomposition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_range, check_vector
from .geometry import Pose, quat_from_yaw, quat_mul, yaw_of

SYNC_HORIZON = 5.0  # seconds; the pinch-lift window ends here


@dataclass(frozen=True)
class PayloadCommand:
    """Joystick-style command for the payload root: planar velocity in the
    payload heading frame, yaw rate, and absolute root height above ground."""

    v_pl: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega_pl: float = 0.0
    h_pl: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_pl", check_vector(self.v_pl, 2, "v_pl"))
        for name in ("omega_pl", "h_pl"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.v_pl[0], self.v_pl[1], self.omega_pl, self.h_pl])

    @classmethod
    def from_array(cls, a) -> "PayloadCommand":
        a = check_vector(a, 4, "payload command")
        return cls(a[:2], a[2], a[3])


@dataclass(frozen=True)
class ContactFrameCommand:
    v_cf: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega_cf: float = 0.0
    h_cf: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_cf", check_vector(self.v_cf, 2, "v_cf"))
        object.__setattr__(self, "omega_cf", float(self.omega_cf))
        object.__setattr__(self, "h_cf", float(self.h_cf))

    def as_array(self) -> np.ndarray:
        return np.array([self.v_cf[0], self.v_cf[1], self.omega_cf, self.h_cf])


@dataclass(frozen=True)
class ContactOffset:
    """Fixed offset of a contact frame from the payload root, payload axes."""

    p_offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_offset", check_vector(self.p_offset, 3, "p_offset"))


@dataclass(frozen=True)
class CommandRanges:
    vx: tuple = (-0.4, 0.4)
    vy: tuple = (-0.4, 0.4)
    omega: tuple = (-0.4, 0.4)
    h: tuple = (0.1, 0.3)

    def __post_init__(self):
        for name in ("vx", "vy", "omega", "h"):
            object.__setattr__(self, name, check_range(getattr(self, name), name))


def decompose_command(c: PayloadCommand, off: ContactOffset) -> ContactFrameCommand:
    """Rigid-offset velocity of the contact frame; no state, no other robots.

    Components stay in the payload heading frame.
    """
    p = off.p_offset
    # (0, 0, w) x (px, py, pz) = (-w py, w px, 0)
    v = c.v_pl + c.omega_pl * np.array([-p[1], p[0]])
    return ContactFrameCommand(v, c.omega_pl, c.h_pl + p[2])


def express_in_frame(cmd: ContactFrameCommand, frame_yaw: float) -> ContactFrameCommand:
    """Rotate the planar velocity into axes yawed by ``frame_yaw`` relative to
    the payload heading (e.g. the contact frame's own axes)."""
    c, s = np.cos(frame_yaw), np.sin(frame_yaw)
    vx, vy = cmd.v_cf
    return ContactFrameCommand(np.array([c * vx + s * vy, -s * vx + c * vy]),
                               cmd.omega_cf, cmd.h_cf)


def sample_eval_command(rng: np.random.Generator, ranges: CommandRanges = CommandRanges()) -> PayloadCommand:
    vx = rng.uniform(*ranges.vx)
    vy = rng.uniform(*ranges.vy)
    w = rng.uniform(*ranges.omega)
    h = rng.uniform(*ranges.h)
    return PayloadCommand(np.array([vx, vy]), w, h)


def sync_signal(t: float) -> float:
    if t < 0:
        raise ValueError(f"sync signal undefined for negative time {t}")
    return min(float(t), SYNC_HORIZON)


def lift_fraction(t: float, start: float = 2.5, end: float = 4.5) -> float:
    """Smoothstep 0 -> 1 over the lift window."""
    if t <= start:
        return 0.0
    if t >= end:
        return 1.0
    s = (t - start) / (end - start)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True)
class TargetFrame:
    """Virtual commanded payload-root frame, seeded at lift completion."""

    pose: Pose


def planar_displacement(v, omega: float, dt: float) -> np.ndarray:
    """Exact body-frame displacement of a unicycle with constant (v, omega)."""
    vx, vy = v
    th = omega * dt
    if abs(th) < 1e-9:
        # second-order series keeps the limit smooth
        return np.array([vx * dt - 0.5 * vy * omega * dt * dt,
                         vy * dt + 0.5 * vx * omega * dt * dt])
    s, c1 = np.sin(th), 1.0 - np.cos(th)
    return np.array([(s * vx - c1 * vy) / omega, (c1 * vx + s * vy) / omega])


def target_frame_integrate(tf: TargetFrame, c: PayloadCommand, dt: float,
                           height_rate: float = 0.2) -> TargetFrame:
    check_positive(dt, "dt")
    pose = tf.pose
    yaw = float(yaw_of(pose.orientation))
    d = planar_displacement(c.v_pl, c.omega_pl, dt)
    cy, sy = np.cos(yaw), np.sin(yaw)
    pos = pose.position.copy()
    pos[0] += cy * d[0] - sy * d[1]
    pos[1] += sy * d[0] + cy * d[1]
    dz = np.clip(c.h_pl - pos[2], -height_rate * dt, height_rate * dt)
    pos[2] += dz
    q = quat_mul(quat_from_yaw(c.omega_pl * dt), pose.orientation)
    return TargetFrame(Pose(pos, q))


def commanded_world_velocity(c: PayloadCommand, payload_yaw: float) -> np.ndarray:
    """Planar world velocity the command asks of the payload root."""
    cy, sy = np.cos(payload_yaw), np.sin(payload_yaw)
    vx, vy = c.v_pl
    return np.array([cy * vx - sy * vy, sy * vx + cy * vy])
