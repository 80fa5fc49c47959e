"""Desk-scale rigid-body world: payload, velocity-tracked bases, servo pads.

A :class:`WorldState` is mutated by exactly one stepping context. The heavy
lifting happens in :func:`pinchlift._physics.step_substeps`; this module owns
the state layout, scene construction, and the failure detectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _physics
from ._validation import check_positive, check_random_state, check_vector
from .geometry import (Pose, Twist, _trusted_pose, compose, cross3, inverse, quat_from_yaw, quat_mul,
                       quat_rotate, quat_to_matrix, tilt_angle, transform_point,
                       yaw_of)

__all__ = [
    "PayloadShape", "PayloadBody", "RobotBody", "ContactRecord", "WorldParams",
    "SceneConfig", "WorldState", "SimulationDiverged", "InfeasibleArrangement",
    "spawn_scene", "step", "detect_drop", "detect_robot_failure",
    "contact_wrench_summary", "nominal_contact_frames", "weld",
    "pinch_hold_bound", "pinch_hold_trial", "DEFAULT_BOX", "SMALL_BOX",
]


class SimulationDiverged(RuntimeError):
    """Non-finite state after a step; ``last_valid`` holds the pre-step state."""

    def __init__(self, message, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid


class InfeasibleArrangement(ValueError):
    pass


@dataclass(frozen=True)
class PayloadShape:
    """``box``: dims ``(l, w, h)``; ``cylinder``: dims ``(radius, length)``, axis vertical."""

    kind: str = "box"
    dims: tuple = (1.0, 1.5, 0.7)

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError(f"unknown payload shape {self.kind!r}")
        dims = tuple(float(d) for d in self.dims)
        need = 3 if self.kind == "box" else 2
        if len(dims) != need or min(dims) <= 0:
            raise ValueError(f"{self.kind} needs {need} positive dims, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def height(self) -> float:
        return self.dims[2] if self.kind == "box" else self.dims[1]

    @property
    def shape_id(self) -> int:
        return _physics.BOX if self.kind == "box" else _physics.CYLINDER

    def kernel_dims(self) -> np.ndarray:
        d = np.zeros(3)
        d[:len(self.dims)] = self.dims
        return d

    def inertia_diag(self, mass: float) -> np.ndarray:
        if self.kind == "box":
            l, w, h = self.dims
            return mass / 12.0 * np.array([w * w + h * h, l * l + h * h, l * l + w * w])
        r, L = self.dims
        ixx = mass * (3 * r * r + L * L) / 12.0
        return np.array([ixx, ixx, 0.5 * mass * r * r])

    def support_points(self) -> np.ndarray:
        """Ground-contact probe points relative to the centre of mass."""
        if self.kind == "box":
            l, w, h = self.dims
            s = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
            return s * (0.5 * np.array([l, w, h]))
        r, L = self.dims
        ang = np.linspace(0.0, 2 * np.pi, 12, endpoint=False)
        ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        return np.concatenate([np.column_stack([ring, np.full(12, z)]) for z in (-0.5 * L, 0.5 * L)])


DEFAULT_BOX = PayloadShape("box", (1.0, 1.5, 0.7))
SMALL_BOX = PayloadShape("box", (0.5, 0.4, 0.7))


@dataclass
class PayloadBody:
    shape: PayloadShape
    mass: float
    inertia: np.ndarray
    pose: Pose
    twist: Twist


@dataclass
class RobotBody:
    base_pose: Pose
    base_twist: Twist
    pad_pose: Pose
    pad_twist: Twist
    commanded_base: np.ndarray
    pad_target: Pose


@dataclass(frozen=True)
class ContactRecord:
    robot_id: int
    point: np.ndarray
    normal: np.ndarray
    normal_force: float
    tangent_force: np.ndarray
    in_contact: bool


@dataclass(frozen=True)
class WorldParams:
    """Physics constants; immutable for the duration of an episode."""

    control_dt: float = 0.02
    substep: float = 0.0025
    gravity: float = 9.81
    contact_stiffness: float = 5e3      # N/m per pad corner / ground probe
    contact_damping: float = 50.0
    tangential_damping: float = 5.0
    mu: float = 0.8
    ground_mu: float = 0.6
    pad_mass: float = 1.0
    pad_half_size: float = 0.03         # 6 x 6 cm square pad
    servo_kp: float = 800.0
    pad_force_limit: float = 60.0
    base_tau: float = 0.15
    base_accel: float = 2.0
    base_yaw_accel: float = 4.0
    base_vmax: float = 0.6
    base_wmax: float = 0.6
    stance_height: float = 0.3
    base_radius: float = 0.2
    reach_forward: tuple = (0.3, 0.8)
    reach_lateral: tuple = (-0.3, 0.3)
    reach_vertical: tuple = (0.1, 0.6)
    ground_penetration_target: float = 0.002
    drop_height: float = 0.05
    contact_loss_window: float = 0.5
    tilt_limit_deg: float = 30.0
    collision_tolerance: float = 0.01

    @property
    def servo_kd(self) -> float:
        # critically damped pad servo
        return 2.0 * math.sqrt(self.servo_kp * self.pad_mass)


@dataclass(frozen=True)
class SceneConfig:
    shape: PayloadShape = SMALL_BOX
    mass: float = 2.0
    n_robots: int = 2
    arrangement: str = "nominal"                 # "nominal" | "given"
    contact_frames: Optional[tuple] = None    # payload-root poses when arrangement == "given"
    cf_height: float = 0.42
    standoff: float = 0.45
    pose_noise_pos: float = 0.0
    pose_noise_yaw: float = 0.0
    pad_home: tuple = (0.3, 0.0, 0.12)
    params: WorldParams = field(default_factory=WorldParams)


@dataclass
class WorldState:
    """Arrays over robots; payload is stored at its centre of mass."""

    shape: PayloadShape
    mass: float
    inertia_diag: np.ndarray
    com_offset: np.ndarray          # COM in the payload root frame
    pl_pos: np.ndarray
    pl_q: np.ndarray
    pl_vel: np.ndarray
    pl_omega: np.ndarray
    ground_pts: np.ndarray
    ground_disp: np.ndarray
    base_pos: np.ndarray
    base_q: np.ndarray
    base_vel: np.ndarray            # body frame planar
    base_omega: np.ndarray
    base_cmd: np.ndarray
    base_tau: np.ndarray
    base_acc: np.ndarray
    pad_pos: np.ndarray
    pad_vel: np.ndarray
    pad_q: np.ndarray
    tgt_pos: np.ndarray             # pad target in base frame
    tgt_q: np.ndarray
    pad_disp: np.ndarray
    corners: np.ndarray
    cf_local: list                  # contact frames in the payload root frame
    params: WorldParams
    kernel_params: np.ndarray
    n_sub: int
    t: float = 0.0
    ext_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rec_fn: np.ndarray = None
    rec_ft: np.ndarray = None
    rec_pt: np.ndarray = None
    rec_n: np.ndarray = None
    rec_contact: np.ndarray = None
    rec_servo: np.ndarray = None
    stats: np.ndarray = field(default_factory=lambda: np.zeros(4))
    last_contact_t: float = 0.0
    ever_contact: bool = False
    pl_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    force_history: list = field(default_factory=list)
    welded: bool = False

    @property
    def n_robots(self) -> int:
        return self.base_pos.shape[0]

    def copy(self, history: bool = True) -> "WorldState":
        out = replace(self)
        for name, val in vars(self).items():
            if isinstance(val, np.ndarray):
                setattr(out, name, val.copy())
        out.force_history = list(self.force_history) if history else []
        out.cf_local = list(self.cf_local)
        return out

    # ---- typed snapshots -------------------------------------------------
    def payload_root_pose(self) -> Pose:
        root = self.pl_pos - quat_rotate(self.pl_q, self.com_offset)
        return _trusted_pose(root, self.pl_q)

    def payload_root_twist(self) -> Twist:
        arm = -quat_rotate(self.pl_q, self.com_offset)
        return Twist(self.pl_vel + cross3(self.pl_omega, arm), self.pl_omega)

    @property
    def payload(self) -> PayloadBody:
        R = quat_to_matrix(self.pl_q)
        return PayloadBody(self.shape, self.mass, R @ np.diag(self.inertia_diag) @ R.T,
                           self.payload_root_pose(), self.payload_root_twist())

    def base_pose(self, r: int) -> Pose:
        # state is finite after every step, so skip Pose validation
        return _trusted_pose(self.base_pos[r].copy(), self.base_q[r])

    def base_world_velocity(self, r: int) -> np.ndarray:
        yaw = float(yaw_of(self.base_q[r]))
        c, s = math.cos(yaw), math.sin(yaw)
        vx, vy = self.base_vel[r]
        return np.array([c * vx - s * vy, s * vx + c * vy, 0.0])

    def pad_pose(self, r: int) -> Pose:
        return _trusted_pose(self.pad_pos[r].copy(), self.pad_q[r])

    def pad_target(self, r: int) -> Pose:
        return _trusted_pose(self.tgt_pos[r].copy(), self.tgt_q[r])

    def cf_pose(self, r: int) -> Pose:
        return compose(self.payload_root_pose(), self.cf_local[r])

    def robot(self, r: int) -> RobotBody:
        return RobotBody(
            base_pose=self.base_pose(r),
            base_twist=Twist(self.base_world_velocity(r), np.array([0.0, 0.0, self.base_omega[r]])),
            pad_pose=self.pad_pose(r),
            pad_twist=Twist(self.pad_vel[r], np.zeros(3)),
            commanded_base=self.base_cmd[r].copy(),
            pad_target=self.pad_target(r),
        )

    @property
    def robots(self) -> list:
        return [self.robot(r) for r in range(self.n_robots)]

    def contact(self, r: int) -> Optional[ContactRecord]:
        if self.rec_fn is None:
            return None
        ft = self.rec_ft[r]
        n = self.rec_n[r]
        # tangent components in an orthonormal basis of the contact plane
        t1 = cross3(n, [0.0, 0.0, 1.0])
        if np.linalg.norm(t1) < 1e-9:
            t1 = np.array([1.0, 0.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = cross3(n, t1)
        return ContactRecord(
            robot_id=r, point=self.rec_pt[r].copy(), normal=n.copy(),
            normal_force=float(self.rec_fn[r]),
            tangent_force=np.array([ft @ t1, ft @ t2]),
            in_contact=bool(self.rec_contact[r] > 0))

    @property
    def contacts(self) -> list:
        if self.rec_fn is None:
            return []
        return [self.contact(r) for r in range(self.n_robots)]


# ---------------------------------------------------------------------------
# scene construction
# ---------------------------------------------------------------------------

def _cf_pose_local(point, inward_xy) -> Pose:
    yaw = math.atan2(inward_xy[1], inward_xy[0])
    return Pose(np.asarray(point, float), quat_from_yaw(yaw))


def nominal_contact_frames(shape: PayloadShape, n: int, height: float = 0.42) -> list:
    """Team arrangement in payload-root coordinates, indexed clockwise from the
    top-right corner (top view, +x right, +y up)."""
    if n < 2:
        raise ValueError("at least two robots are needed to pinch")
    frames = []
    if shape.kind == "box":
        l, w, _ = shape.dims
        # robots go on the pair of faces with the longer horizontal extent
        if w >= l:
            face_len, half_depth, axis = w, 0.5 * l, 0
        else:
            face_len, half_depth, axis = l, 0.5 * w, 1
        n_a = (n + 1) // 2
        for side, count in ((1.0, n_a), (-1.0, n - n_a)):
            for i in range(count):
                s = (i + 0.5) / count * face_len - 0.5 * face_len
                p = np.zeros(3)
                p[axis] = side * half_depth
                p[1 - axis] = s
                p[2] = height
                inward = np.zeros(2)
                inward[axis] = -side
                frames.append(_cf_pose_local(p, inward))
        corner = math.atan2(0.5 * w, 0.5 * l)
    else:
        r = shape.dims[0]
        for i in range(n):
            a = 2 * math.pi * i / n + math.pi / n
            p = np.array([r * math.cos(a), r * math.sin(a), height])
            frames.append(_cf_pose_local(p, -p[:2]))
        corner = math.pi / 4

    def clockwise_key(f):
        a = math.atan2(f.position[1], f.position[0])
        return (corner - a) % (2 * math.pi)

    return sorted(frames, key=clockwise_key)


def _stability(shape, mass, n_robots, p: WorldParams, n_corners: int = 4):
    """Substep count and damping caps keeping the explicit contact model stable."""
    k = p.contact_stiffness
    k_ground = max(k, mass * p.gravity / (4 * p.ground_penetration_target))
    k_payload = n_robots * n_corners * k + 4 * k_ground
    w_payload = math.sqrt(k_payload / mass)
    w_pad = math.sqrt((n_corners * k + p.servo_kp) / p.pad_mass)
    w_max = max(w_payload, w_pad)
    dt = min(p.substep, 0.5 / w_max)
    n_sub = max(int(round(p.control_dt / p.substep)), math.ceil(p.control_dt / dt - 1e-9))
    dt = p.control_dt / n_sub
    c_cap = min(mass / (n_robots * n_corners), p.pad_mass / n_corners) / dt
    c = min(p.contact_damping, c_cap)
    c_ground = max(p.contact_damping, 0.6 * math.sqrt(k_ground * mass / 4))
    c_ground = min(c_ground, mass / (4 * dt))
    ct = min(p.tangential_damping, c_cap)
    return n_sub, k_ground, c, c_ground, ct


def _kernel_params(p: WorldParams, k_ground, c, c_ground, ct) -> np.ndarray:
    kp = np.zeros(_physics.N_PARAMS)
    kp[_physics.P_K] = p.contact_stiffness
    kp[_physics.P_C] = c
    kp[_physics.P_KT] = p.contact_stiffness
    kp[_physics.P_CT] = ct
    kp[_physics.P_MU] = p.mu
    kp[_physics.P_KG] = k_ground
    kp[_physics.P_CG] = c_ground
    kp[_physics.P_MUG] = p.ground_mu
    kp[_physics.P_PADM] = p.pad_mass
    kp[_physics.P_KP] = p.servo_kp
    kp[_physics.P_KD] = p.servo_kd
    kp[_physics.P_FMAX] = p.pad_force_limit
    kp[_physics.P_G] = p.gravity
    kp[_physics.P_VMAX] = p.base_vmax
    kp[_physics.P_WMAX] = p.base_wmax
    return kp


def spawn_scene(cfg, rng=None, base_tau=None, base_acc=None, max_redraws: int = 50) -> WorldState:
    """Payload at rest on the ground, robots facing their contact frames.

    ``cfg`` is a :class:`SceneConfig` (or anything with a ``scene`` attribute
    holding one). ``base_tau``/``base_acc`` optionally override the per-robot
    base dynamics (domain randomization).
    """
    cfg = getattr(cfg, "scene", cfg)
    rng = check_random_state(rng)
    p = cfg.params
    n = int(cfg.n_robots)
    if n < 2:
        raise ValueError("a scene needs N >= 2 robots")
    check_positive(cfg.mass, "payload mass")
    shape = cfg.shape

    if cfg.arrangement == "nominal":
        cf_local = nominal_contact_frames(shape, n, cfg.cf_height)
    elif cfg.arrangement == "given":
        if cfg.contact_frames is None or len(cfg.contact_frames) != n:
            raise ValueError("arrangement 'given' needs one contact frame per robot")
        cf_local = list(cfg.contact_frames)
    else:
        raise ValueError(f"unknown arrangement {cfg.arrangement!r}")

    com_offset = np.array([0.0, 0.0, 0.5 * shape.height])
    root = Pose.identity()
    nominal = []
    for cf in cf_local:
        cf_w = compose(root, cf)
        inward = quat_rotate(cf_w.orientation, [1.0, 0.0, 0.0])
        pos = cf_w.position - cfg.standoff * np.array([inward[0], inward[1], 0.0])
        pos[2] = p.stance_height
        nominal.append((pos, math.atan2(inward[1], inward[0])))
    base_pos = np.array([b[0] for b in nominal])
    base_q = np.array([quat_from_yaw(b[1]) for b in nominal])
    _check_overlap_xy(base_pos, p, shape)
    if cfg.pose_noise_pos > 0 or cfg.pose_noise_yaw > 0:
        # noisy placements that collide are redrawn; the nominal layout is feasible
        for _ in range(max_redraws):
            pos = base_pos + np.column_stack([rng.normal(0.0, cfg.pose_noise_pos, (n, 2)), np.zeros(n)])
            yaw = np.array([b[1] for b in nominal]) + rng.normal(0.0, cfg.pose_noise_yaw, n)
            try:
                _check_overlap_xy(pos, p, shape)
            except InfeasibleArrangement:
                continue
            base_pos = pos
            base_q = np.array([quat_from_yaw(y) for y in yaw])
            break
        else:
            raise InfeasibleArrangement(f"no collision-free noisy placement in {max_redraws} draws")

    home = Pose(np.asarray(cfg.pad_home, float))
    tgt_pos = np.tile(home.position, (n, 1))
    tgt_q = np.tile(home.orientation, (n, 1))
    pad_pos = np.array([transform_point(Pose(base_pos[r], base_q[r]), home.position) for r in range(n)])
    pad_q = np.array([quat_mul(base_q[r], home.orientation) for r in range(n)])

    n_sub, k_ground, c, c_ground, ct = _stability(shape, cfg.mass, n, p)
    h = p.pad_half_size
    corners = np.array([[0.0, sy * h, sz * h] for sy in (-1, 1) for sz in (-1, 1)])
    w = WorldState(
        shape=shape, mass=float(cfg.mass), inertia_diag=shape.inertia_diag(cfg.mass),
        com_offset=com_offset,
        pl_pos=com_offset.copy(), pl_q=np.array([1.0, 0.0, 0.0, 0.0]),
        pl_vel=np.zeros(3), pl_omega=np.zeros(3),
        ground_pts=shape.support_points(), ground_disp=np.zeros((len(shape.support_points()), 3)),
        base_pos=base_pos, base_q=base_q, base_vel=np.zeros((n, 2)), base_omega=np.zeros(n),
        base_cmd=np.zeros((n, 3)),
        base_tau=np.full(n, p.base_tau) if base_tau is None else np.asarray(base_tau, float).copy(),
        base_acc=np.full(n, p.base_accel) if base_acc is None else np.asarray(base_acc, float).copy(),
        pad_pos=pad_pos, pad_vel=np.zeros((n, 3)), pad_q=pad_q,
        tgt_pos=tgt_pos, tgt_q=tgt_q, pad_disp=np.zeros((n, 4, 3)), corners=corners,
        cf_local=cf_local, params=p, kernel_params=_kernel_params(p, k_ground, c, c_ground, ct),
        n_sub=n_sub,
    )
    return w


def _footprint_penetration(shape: PayloadShape, root: Pose, xy, radius) -> float:
    """How far a disc of ``radius`` at ``xy`` intrudes into the payload footprint."""
    yaw = root.yaw
    d = np.asarray(xy, float) - root.position[:2]
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
    if shape.kind == "box":
        half = 0.5 * np.array(shape.dims[:2])
        q = np.abs(local) - half
        outside = np.linalg.norm(np.maximum(q, 0.0))
        dist = outside if outside > 0 else max(q[0], q[1])
    else:
        dist = np.linalg.norm(local) - shape.dims[0]
    return radius - dist


def _payload_footprint_penetration(w: WorldState, xy, radius) -> float:
    return _footprint_penetration(w.shape, w.payload_root_pose(), xy, radius)


def _check_overlap_xy(base_pos, p: WorldParams, shape: PayloadShape, root: Pose = Pose()):
    n = len(base_pos)
    for i in range(n):
        if _footprint_penetration(shape, root, base_pos[i, :2], p.base_radius) > 0:
            raise InfeasibleArrangement(f"robot {i} base overlaps the payload")
        for j in range(i + 1, n):
            if np.linalg.norm(base_pos[i, :2] - base_pos[j, :2]) < 2 * p.base_radius:
                raise InfeasibleArrangement(f"robots {i} and {j} overlap")


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def clip_to_reach(target_pos, p: WorldParams) -> np.ndarray:
    lo = np.array([p.reach_forward[0], p.reach_lateral[0], p.reach_vertical[0]])
    hi = np.array([p.reach_forward[1], p.reach_lateral[1], p.reach_vertical[1]])
    return np.minimum(np.maximum(np.asarray(target_pos, dtype=float), lo), hi)


def set_actions(w: WorldState, pad_targets, base_cmds):
    """Install per-robot pad targets (poses relative to base, or ``(n, 7)``
    arrays) and base commands ``(n, 3)`` = (vx, vy, omega) in base frame."""
    n = w.n_robots
    if pad_targets is not None:
        for r in range(n):
            t = pad_targets[r]
            if isinstance(t, Pose):
                pos, q = t.position, t.orientation
            else:
                t = np.asarray(t, float)
                pos, q = t[:3], t[3:] / np.linalg.norm(t[3:])
            w.tgt_pos[r] = clip_to_reach(pos, w.params)
            w.tgt_q[r] = q
    if base_cmds is not None:
        cmds = np.asarray(base_cmds, float).reshape(n, 3)
        if not np.all(np.isfinite(cmds)):
            raise ValueError("non-finite base command")
        w.base_cmd[:] = cmds


def step(w: WorldState, actions=None, dt: Optional[float] = None) -> WorldState:
    """Advance one control period in place and return ``w``.

    ``actions`` is a sequence of ``(pad_target, base_cmd)`` pairs, or None to
    keep the previous targets.
    """
    p = w.params
    if dt is not None and abs(dt - p.control_dt) > 1e-12:
        raise ValueError(f"step dt must equal the control period {p.control_dt}")
    if actions is not None:
        set_actions(w, [a[0] for a in actions], [np.ravel(a[1]) for a in actions])
    n = w.n_robots
    if w.rec_fn is None:
        w.rec_fn = np.zeros(n)
        w.rec_ft = np.zeros((n, 3))
        w.rec_pt = np.zeros((n, 3))
        w.rec_n = np.zeros((n, 3))
        w.rec_contact = np.zeros(n)
        w.rec_servo = np.zeros((n, 3))
    backup = w.copy(history=False)
    v_prev = w.pl_vel.copy()
    dt_sub = p.control_dt / w.n_sub
    try:
        _physics.step_substeps(
            w.n_sub, dt_sub,
            w.pl_pos, w.pl_q, w.pl_vel, w.pl_omega, w.mass, w.inertia_diag, w.shape.shape_id,
            w.shape.kernel_dims(), w.ground_pts, w.ground_disp,
            w.base_pos, w.base_q, w.base_vel, w.base_omega, w.base_cmd, w.base_tau, w.base_acc,
            p.base_yaw_accel,
            w.pad_pos, w.pad_vel, w.pad_q, w.tgt_pos, w.tgt_q, w.pad_disp, w.corners,
            w.kernel_params, w.ext_force,
            w.rec_fn, w.rec_ft, w.rec_pt, w.rec_n, w.rec_contact, w.rec_servo, w.stats)
    except (np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError):
        raise SimulationDiverged(f"kernel failure at t={w.t + p.control_dt:.3f}", backup) from None
    if not (np.all(np.isfinite(w.pl_pos)) and np.all(np.isfinite(w.pl_vel))
            and np.all(np.isfinite(w.pad_pos)) and np.all(np.isfinite(w.base_pos))):
        raise SimulationDiverged(f"non-finite state at t={w.t + p.control_dt:.3f}", backup)
    w.pl_acc = (w.pl_vel - v_prev) / p.control_dt
    w.t = round(w.t + p.control_dt, 10)
    if np.any(w.rec_contact > 0):
        w.last_contact_t = w.t
        w.ever_contact = True
    w.force_history.append((w.t, w.rec_fn.copy()))
    return w


def weld(w: WorldState, root_pose: Pose, root_twist: Twist, base_poses: Sequence[Pose],
         root_accel=None, squeeze: float = 30.0) -> WorldState:
    """Kinematically weld the team to a prescribed payload motion (privileged).

    The payload root follows ``root_pose``; each pad sits exactly on its
    contact frame and each base on ``base_poses[r]``. Contact forces are the
    constraint forces holding the payload on that motion: the minimum-norm
    solution of Newton-Euler plus an internal squeeze along the normals.
    """
    p = w.params
    n = w.n_robots
    w.welded = True
    acc = np.zeros(3) if root_accel is None else np.asarray(root_accel, float)
    w.pl_q = root_pose.orientation.copy()
    w.pl_pos = root_pose.position + quat_rotate(w.pl_q, w.com_offset)
    w.pl_omega = root_twist.angular.copy()
    arm = quat_rotate(w.pl_q, w.com_offset)
    w.pl_vel = root_twist.linear + cross3(w.pl_omega, arm)
    w.pl_acc = acc
    for r in range(n):
        cf = w.cf_pose(r)
        w.pad_pos[r] = cf.position
        w.pad_q[r] = cf.orientation
        w.pad_vel[r] = w.pl_vel + cross3(w.pl_omega, cf.position - w.pl_pos)
        b = base_poses[r]
        w.base_pos[r] = b.position
        w.base_q[r] = b.orientation
        rel = compose(inverse(b), cf)
        w.tgt_pos[r] = rel.position
        w.tgt_q[r] = rel.orientation

    # constraint forces on the payload at the contact points
    pts = np.array([w.cf_pose(r).position for r in range(n)])
    inward = np.array([quat_rotate(w.cf_pose(r).orientation, [1.0, 0.0, 0.0]) for r in range(n)])
    G = np.zeros((6, 3 * n))
    for r in range(n):
        G[:3, 3 * r:3 * r + 3] = np.eye(3)
        d = pts[r] - w.pl_pos
        G[3:, 3 * r:3 * r + 3] = np.array([[0, -d[2], d[1]], [d[2], 0, -d[0]], [-d[1], d[0], 0]])
    R = quat_to_matrix(w.pl_q)
    I_w = R @ np.diag(w.inertia_diag) @ R.T
    om = w.pl_omega
    wrench = np.concatenate([w.mass * (acc + np.array([0.0, 0.0, p.gravity])),
                             cross3(om, I_w @ om)])
    Gp = np.linalg.pinv(G)
    f = Gp @ wrench
    internal = inward.reshape(-1)
    internal = internal - Gp @ (G @ internal)
    nrm = np.linalg.norm(internal)
    if nrm > 1e-9:
        # scale so the mean normal component equals ``squeeze``
        per = np.einsum("ij,ij->i", internal.reshape(n, 3), inward)
        f = f + internal * (squeeze / max(np.mean(per), 1e-9))
    f = f.reshape(n, 3)
    w.rec_fn = np.maximum(np.einsum("ij,ij->i", f, inward), 0.0)
    w.rec_ft = f - w.rec_fn[:, None] * inward
    w.rec_pt = pts
    w.rec_n = -inward
    w.rec_contact = np.ones(n)
    w.rec_servo = -f
    w.t = round(w.t + p.control_dt, 10)
    w.last_contact_t = w.t
    w.ever_contact = True
    w.force_history.append((w.t, w.rec_fn.copy()))
    return w


# ---------------------------------------------------------------------------
# detectors
# ---------------------------------------------------------------------------

def detect_drop(w: WorldState, commanded_h: float, params: Optional[WorldParams] = None,
                lift_done_t: float = 5.0) -> bool:
    """Payload dropped or never lifted; only meaningful once the lift window closed."""
    p = params or w.params
    if w.t < lift_done_t:
        return False
    root_z = w.payload_root_pose().position[2]
    if commanded_h >= 0.1 and root_z < p.drop_height:
        return True
    return (w.t - w.last_contact_t) > p.contact_loss_window


def detect_robot_failure(w: WorldState) -> bool:
    """Base-base or base-payload intrusion beyond tolerance, or a tipped base."""
    p = w.params
    tol = p.collision_tolerance
    tilt = np.degrees(tilt_angle(w.base_q))
    if np.any(tilt > p.tilt_limit_deg):
        return True
    n = w.n_robots
    root = w.payload_root_pose()
    for i in range(n):
        if _footprint_penetration(w.shape, root, w.base_pos[i, :2], p.base_radius) > tol:
            return True
        for j in range(i + 1, n):
            gap = np.linalg.norm(w.base_pos[i, :2] - w.base_pos[j, :2]) - 2 * p.base_radius
            if gap < -tol:
                return True
    return False


def contact_wrench_summary(w, window=(5.0, np.inf)) -> np.ndarray:
    """Per-robot mean normal force over ticks with ``window[0] <= t <= window[1]``.

    Accepts a :class:`WorldState` or a plain sequence of ``(t, forces)``.
    """
    hist = w.force_history if isinstance(w, WorldState) else w
    lo, hi = window
    sel = [np.asarray(f, float) for t, f in hist if lo - 1e-9 <= t <= hi + 1e-9]
    if not sel:
        raise ValueError(f"no recorded ticks inside window {window}")
    return np.mean(np.stack(sel), axis=0)


# ---------------------------------------------------------------------------
# friction pinch probe
# ---------------------------------------------------------------------------

def pinch_hold_bound(mu: float, squeeze: float, mass: float, gravity: float = 9.81) -> bool:
    """Antipodal two-pad bound: friction can carry the weight iff 2 mu N >= m g."""
    return 2.0 * mu * squeeze >= mass * gravity


def pinch_hold_trial(mu: float, squeeze: float, mass: float = 2.0, shape: PayloadShape = SMALL_BOX,
                     duration: float = 1.5, lift: float = 0.1, slip_tol: float = 0.01,
                     params: WorldParams = WorldParams()) -> tuple:
    """Hold a raised payload between two antipodal pads and watch it.

    Both pads start flush on their contact frames, pre-loaded so the servo
    presses with ``squeeze`` newtons. Returns ``(held, slip)`` where ``slip``
    is the largest downward slide of the payload relative to the mean pad
    height over ``duration`` seconds.
    """
    check_positive(mass, "payload mass")
    if squeeze < 0 or squeeze > params.pad_force_limit:
        raise ValueError(f"squeeze must lie in [0, {params.pad_force_limit}] N")
    p = replace(params, mu=float(mu))
    w = spawn_scene(SceneConfig(shape=shape, mass=mass, n_robots=2, params=p))
    w.pl_pos[2] += lift
    n_corner = w.corners.shape[0]
    pen = squeeze / (n_corner * p.contact_stiffness)
    for r in range(2):
        cf = w.cf_pose(r)
        inward = quat_rotate(cf.orientation, [1.0, 0.0, 0.0])
        w.pad_pos[r] = cf.position + pen * inward
        w.pad_q[r] = cf.orientation
        tgt = Pose(cf.position + (pen + squeeze / p.servo_kp) * inward, cf.orientation)
        rel = compose(inverse(w.base_pose(r)), tgt)
        w.tgt_pos[r] = rel.position
        w.tgt_q[r] = rel.orientation
    rel0 = w.pl_pos[2] - w.pad_pos[:, 2].mean()
    slip = 0.0
    for _ in range(int(round(duration / p.control_dt))):
        step(w)
        slip = max(slip, rel0 - (w.pl_pos[2] - w.pad_pos[:, 2].mean()))
    return slip <= slip_tol, float(slip)
