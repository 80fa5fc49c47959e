"""Per-robot observations and actions, and the controllers that map one to the other.

Every controller here except :class:`RigidOracleController` sees only its
own robot's :class:`Observation`; per-robot internal state is keyed by the
robot index and never shared.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_random_state
from .commands import ContactFrameCommand, lift_fraction, sync_signal
from .curriculum import ZERO_NOISE, ObservabilityMode, ObservationNoise, cf_pose_update_due
from .geometry import (Pose, compose, inverse, quat_from_rotvec, quat_from_yaw, quat_mul,
                       quat_rotate, quat_to_rotvec, yaw_of)

OBS_VERSION = 1
OBS_LAYOUT = (
    ("base_twist", 3),      # body vx, vy, yaw rate
    ("base_height", 1),
    ("pad_pose", 7),        # pad in base frame
    ("pad_target", 7),      # own servo target in base frame
    ("servo_force", 3),     # base frame
    ("cf_pose", 7),         # last received contact frame, base frame at receipt
    ("odometry", 3),        # base motion since that receipt: x, y, yaw
    ("cf_age", 1),
    ("cf_command", 4),      # contact-frame axes
    ("t_sync", 1),
    ("prev_action", 9),
)
OBS_DIM = sum(n for _, n in OBS_LAYOUT)
ACTION_DIM = 9

# rough per-feature scales so network inputs are O(1)
_SCALE = {
    "base_twist": 0.5, "base_height": 0.3, "pad_pose": 0.5, "pad_target": 0.5,
    "servo_force": 30.0, "cf_pose": 0.5, "odometry": 1.0, "cf_age": 5.0,
    "cf_command": 0.4, "t_sync": 5.0, "prev_action": 0.05,
}
OBS_SCALE = np.concatenate([np.full(n, _SCALE[k]) for k, n in OBS_LAYOUT])


@dataclass(frozen=True)
class ActionBounds:
    pad_translation: float = 0.02   # m per tick
    pad_rotation: float = 0.05      # rad per tick
    base_v: float = 0.6
    base_omega: float = 0.6

    def vector(self) -> np.ndarray:
        return np.array([self.pad_translation] * 3 + [self.pad_rotation] * 3
                        + [self.base_v] * 2 + [self.base_omega])


def clip_action(a, bounds: ActionBounds = ActionBounds()) -> np.ndarray:
    a = np.asarray(a, float)
    if a.shape[-1] != ACTION_DIM:
        raise ValueError(f"action must have {ACTION_DIM} components, got {a.shape}")
    b = _bound_vector(bounds)
    a = np.where(np.isnan(a), 0.0, a)
    return np.minimum(np.maximum(a, -b), b)


@functools.lru_cache(maxsize=32)
def _bound_vector(bounds: ActionBounds) -> np.ndarray:
    v = bounds.vector()
    v.setflags(write=False)
    return v


def _q_pos(q):
    q = np.asarray(q, float)
    return -q if q[0] < 0 else q


def _pose7(p: Pose) -> np.ndarray:
    return np.concatenate([p.position, _q_pos(p.orientation)])


def _add_noise(rng, x, sigma):
    if sigma <= 0 or rng is None:
        return x
    return x + rng.normal(0.0, sigma, np.shape(x))


def _noisy_pose(rng, p: Pose, ns: ObservationNoise) -> Pose:
    if rng is None or (ns.position <= 0 and ns.rotation <= 0):
        return p
    dq = quat_from_rotvec(rng.normal(0.0, ns.rotation, 3)) if ns.rotation > 0 else np.array([1.0, 0, 0, 0])
    return Pose(_add_noise(rng, p.position, ns.position), quat_mul(dq, p.orientation))


@dataclass
class Observation:
    base_twist: np.ndarray
    base_height: float
    pad_pose: Pose
    pad_target: Pose
    servo_force: np.ndarray
    cf_pose: Pose
    odometry: np.ndarray
    cf_age: float
    cf_command: ContactFrameCommand
    t_sync: float
    prev_action: np.ndarray
    cf_updated: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.base_twist, [self.base_height], _pose7(self.pad_pose), _pose7(self.pad_target),
            self.servo_force, _pose7(self.cf_pose), self.odometry, [self.cf_age],
            self.cf_command.as_array(), [self.t_sync], self.prev_action,
        ])


@dataclass
class HeldContactFrame:
    """A robot's latest contact-frame reading and where its base was at the time.

    ``base_at_receipt`` is only used to produce the odometry feature (the
    robot's own dead-reckoned motion), never fed to the policy directly.
    """

    cf_b: Optional[Pose] = None
    base_at_receipt: Optional[Pose] = None
    t_receipt: float = 0.0
    n_updates: int = 0
    last_update_t: float = -1.0


def build_observation(r: int, world, mode: ObservabilityMode, held: HeldContactFrame,
                      cmd: ContactFrameCommand, t: float, tick: int,
                      prev_action=None, noise: ObservationNoise = ZERO_NOISE, rng=None) -> Observation:
    """Robot ``r``'s local observation; refreshes ``held`` when an update is due."""
    base = world.base_pose(r)
    inv_base = inverse(base)
    updated = False
    if held.cf_b is None or cf_pose_update_due(mode, t, tick):
        cf_b = compose(inv_base, world.cf_pose(r))
        held.cf_b = _noisy_pose(rng, cf_b, noise)
        held.base_at_receipt = base
        held.t_receipt = t
        held.n_updates += 1
        held.last_update_t = t
        updated = True
    odo = compose(inverse(held.base_at_receipt), base)
    odometry = np.array([odo.position[0], odo.position[1], odo.yaw])
    pad_b = compose(inv_base, world.pad_pose(r))
    servo_b = quat_rotate(inv_base.orientation, world.rec_servo[r]) if world.rec_servo is not None else np.zeros(3)
    twist = np.array([world.base_vel[r, 0], world.base_vel[r, 1], world.base_omega[r]])
    prev = np.zeros(ACTION_DIM) if prev_action is None else np.asarray(prev_action, float)
    return Observation(
        base_twist=_add_noise(rng, twist, noise.velocity),
        base_height=float(_add_noise(rng, base.position[2], noise.position)),
        pad_pose=_noisy_pose(rng, pad_b, noise),
        pad_target=world.pad_target(r),
        servo_force=_add_noise(rng, servo_b, noise.force),
        cf_pose=held.cf_b,
        odometry=_add_noise(rng, odometry, noise.position),
        cf_age=float(t - held.t_receipt),
        cf_command=cmd,
        t_sync=min(max(float(_add_noise(rng, sync_signal(t), noise.t_sync)), 0.0), 5.0),
        prev_action=prev,
        cf_updated=updated,
    )


def action_to_commands(pad_target: Pose, action, bounds: ActionBounds = ActionBounds()):
    """New pad target (base frame) and base command from a clipped action."""
    a = clip_action(action, bounds)
    pos = pad_target.position + a[:3]
    q = quat_mul(quat_from_rotvec(a[3:6]), pad_target.orientation)
    return Pose(pos, q), a[6:9].copy()


def estimate_cf(obs: Observation) -> Pose:
    """Held contact frame carried into the current base frame by odometry."""
    x, y, yaw = obs.odometry
    odo = Pose(np.array([x, y, 0.0]), quat_from_yaw(yaw))
    return compose(inverse(odo), obs.cf_pose)


def _pose_delta(current: Pose, desired: Pose) -> np.ndarray:
    """Action-space delta taking ``current`` to ``desired`` (before clipping)."""
    dq = quat_mul(desired.orientation, np.array([current.orientation[0], *(-current.orientation[1:])]))
    return np.concatenate([desired.position - current.position, quat_to_rotvec(dq)])


# ---------------------------------------------------------------------------
# scripted pinch-lift-move
# ---------------------------------------------------------------------------

class ScriptedPLMController(BaseEstimator):
    """Hand-written pinch-lift-move behavior driven by one robot's observation.

    Stages follow the team clock: approach to a standoff in front of the
    contact frame, ramp the pad into the surface, lift with a smoothstep plus
    an integral height correction, then carry the rigid-offset base velocity
    while the pad target stays latched. During the carry the base also
    follows the pad's deflection from its latched value, which is how the
    payload's actual motion reaches the robot without any pose feedback.
    """

    privileged = False

    def __init__(self, standoff=0.04, depth=0.045, approach_end=1.5, squeeze_end=2.5,
                 lift_window=(2.5, 4.5), move_start=4.6, k_follow=4.0, k_yaw=1.0,
                 ki_height=3.0, max_integral=0.06, dt=0.02, bounds=ActionBounds()):
        self.standoff = standoff
        self.depth = depth
        self.approach_end = approach_end
        self.squeeze_end = squeeze_end
        self.lift_window = lift_window
        self.move_start = move_start
        self.k_follow = k_follow
        self.k_yaw = k_yaw
        self.ki_height = ki_height
        self.max_integral = max_integral
        self.dt = dt
        self.bounds = bounds

    def reset(self, n_robots: int):
        self.state_ = [dict(clock=0.0) for _ in range(n_robots)]
        return self

    def _depth(self, t):
        if t <= self.approach_end:
            return -self.standoff
        if t >= self.squeeze_end:
            return self.depth
        s = (t - self.approach_end) / (self.squeeze_end - self.approach_end)
        return -self.standoff + s * (self.standoff + self.depth)

    def act(self, r: int, obs: Observation) -> np.ndarray:
        st = self.state_[r]
        # local clock: t_sync until it saturates, then own tick counting
        t = obs.t_sync if obs.t_sync < 5.0 - 1e-9 else max(st["clock"], 5.0)
        st["clock"] = t + self.dt
        base_cmd = np.zeros(3)
        if t < self.squeeze_end:
            cf = estimate_cf(obs)
            desired = compose(cf, Pose(np.array([self._depth(t), 0.0, 0.0])))
            st["latched"] = desired
            st["cf_yaw"] = cf.yaw
        else:
            if "z0" not in st:
                cf = estimate_cf(obs)
                st["z0"] = obs.base_height + cf.position[2]
                st["pad_z0"] = obs.base_height + obs.pad_pose.position[2]
                st["integral"] = 0.0
            dh = obs.cf_command.h_cf - st["z0"]
            frac = lift_fraction(t, *self.lift_window)
            err = st["pad_z0"] + frac * dh - (obs.base_height + obs.pad_pose.position[2])
            st["integral"] = float(np.clip(st["integral"] + self.ki_height * err * self.dt,
                                           -self.max_integral, self.max_integral))
            lat = st["latched"]
            pos = lat.position.copy()
            pos[2] += frac * dh + st["integral"]
            desired = Pose(pos, lat.orientation)
            if t >= self.move_start:
                base_cmd = self._carry(st, obs, lat)
        a = np.concatenate([_pose_delta(obs.pad_target, desired), base_cmd])
        return clip_action(a, self.bounds)

    def _carry(self, st, obs: Observation, lat: Pose) -> np.ndarray:
        cmd = obs.cf_command
        psi = st["cf_yaw"]
        c, s = math.cos(psi), math.sin(psi)
        v = np.array([c * cmd.v_cf[0] - s * cmd.v_cf[1], s * cmd.v_cf[0] + c * cmd.v_cf[1]])
        w = cmd.omega_cf
        p = lat.position
        v = v + np.array([w * p[1], -w * p[0]])
        defl = obs.pad_pose.position[:2] - obs.pad_target.position[:2]
        if "defl0" not in st:
            st["defl0"] = defl.copy()
        v = v + self.k_follow * (defl - st["defl0"])
        if obs.cf_age < 1e-6:
            # fresh contact-frame reading: also square up to the surface
            w = w + self.k_yaw * _wrap(estimate_cf(obs).yaw - psi)
        return np.array([v[0], v[1], w])


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# privileged oracle
# ---------------------------------------------------------------------------

class RigidOracleController(BaseEstimator):
    """Welds the team to the commanded payload motion (privileged, validation only).

    The episode loop recognizes ``privileged = True`` and calls
    :meth:`root_motion` instead of building observations.
    """

    privileged = True

    def __init__(self, squeeze: float = 30.0, lift_window=(2.5, 4.5)):
        self.squeeze = squeeze
        self.lift_window = lift_window

    def reset(self, n_robots: int):
        self.n_robots_ = n_robots
        return self

    def root_motion(self, t: float, root0: Pose, h_cmd: float, target_pose: Optional[Pose], cmd,
                    moving: bool = False):
        """(pose, linear velocity, angular velocity, linear acceleration) of the payload root.

        Before the commanded frame exists the root rises on the lift
        smoothstep; ``moving`` switches the velocity to the command from the
        first post-lift instant.
        """
        if target_pose is None:
            t0, t1 = self.lift_window
            dh = h_cmd - root0.position[2]
            pos = root0.position.copy()
            pos[2] += lift_fraction(t, t0, t1) * dh
            pose = Pose(pos, root0.orientation)
            v = np.zeros(3)
            acc = np.zeros(3)
            if t0 < t < t1:
                s = (t - t0) / (t1 - t0)
                v[2] = 6 * s * (1 - s) / (t1 - t0) * dh
                acc[2] = 6 * (1 - 2 * s) / (t1 - t0) ** 2 * dh
            if not moving:
                return pose, v, np.zeros(3), acc
        else:
            pose = target_pose
        yaw = pose.yaw
        cy, sy = math.cos(yaw), math.sin(yaw)
        vx, vy = cmd.v_pl
        v = np.array([cy * vx - sy * vy, sy * vx + cy * vy, 0.0])
        om = np.array([0.0, 0.0, cmd.omega_pl])
        return pose, v, om, np.cross(om, v)


# ---------------------------------------------------------------------------
# shared-parameter neural policy
# ---------------------------------------------------------------------------

def _layer_shapes(n_in, hidden, n_layers, n_out):
    sizes = [n_in] + [hidden] * n_layers + [n_out]
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def n_policy_params(hidden: int = 64, n_layers: int = 2, n_in: int = OBS_DIM, n_out: int = ACTION_DIM) -> int:
    return sum(a * b + b for a, b in _layer_shapes(n_in, hidden, n_layers, n_out))


def policy_forward(theta, X, hidden: int = 64, n_layers: int = 2,
                   bounds: ActionBounds = ActionBounds()) -> np.ndarray:
    """tanh MLP on scaled observations, outputs scaled to the action bounds."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != OBS_DIM:
        raise ValueError(f"observation must have {OBS_DIM} features, got {X.shape[1]}")
    theta = np.asarray(theta, float)
    shapes = _layer_shapes(OBS_DIM, hidden, n_layers, ACTION_DIM)
    need = sum(a * b + b for a, b in shapes)
    if theta.size != need:
        raise ValueError(f"parameter vector has {theta.size} entries, network needs {need}")
    h = X / OBS_SCALE
    i = 0
    for a, b in shapes:
        W = theta[i:i + a * b].reshape(a, b)
        i += a * b
        h = np.tanh(h @ W + theta[i:i + b])
        i += b
    return h * bounds.vector()


class MLPPolicy(BaseEstimator):
    """Two hidden tanh layers; one flat parameter vector shared by every robot.

    ``fit`` only initializes ``theta_`` (training is done by the evolution
    strategy, which calls :meth:`set_flat`); ``predict`` maps observation rows
    to actions.
    """

    def __init__(self, hidden: int = 64, n_layers: int = 2, init_scale: float = 1.0,
                 random_state=None, bounds: ActionBounds = ActionBounds()):
        self.hidden = hidden
        self.n_layers = n_layers
        self.init_scale = init_scale
        self.random_state = random_state
        self.bounds = bounds

    def fit(self, X=None, y=None):
        if X is not None and np.atleast_2d(X).shape[1] != OBS_DIM:
            raise ValueError(f"observation must have {OBS_DIM} features")
        rng = check_random_state(self.random_state)
        parts = []
        for a, b in _layer_shapes(OBS_DIM, self.hidden, self.n_layers, ACTION_DIM):
            parts.append(rng.normal(0.0, self.init_scale / math.sqrt(a), a * b))
            parts.append(np.zeros(b))
        self.theta_ = np.concatenate(parts)
        self.n_features_in_ = OBS_DIM
        return self

    @property
    def n_params(self) -> int:
        return n_policy_params(self.hidden, self.n_layers)

    def get_flat(self) -> np.ndarray:
        check_is_fitted(self, "theta_")
        return self.theta_.copy()

    def set_flat(self, theta):
        theta = np.asarray(theta, float).ravel()
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        self.theta_ = theta.copy()
        self.n_features_in_ = OBS_DIM
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        return policy_forward(self.theta_, X, self.hidden, self.n_layers, self.bounds)


class PolicyController:
    """Adapter giving an :class:`MLPPolicy` the controller interface."""

    privileged = False

    def __init__(self, policy: MLPPolicy):
        self.policy = policy

    def reset(self, n_robots: int):
        return self

    def act(self, r: int, obs: Observation) -> np.ndarray:
        return self.policy.predict(obs.vector()[None])[0]
