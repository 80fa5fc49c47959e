"""The per-tick episode loop: observations, actions, physics, rewards, detectors, log."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .commands import (SYNC_HORIZON, ContactOffset, TargetFrame, commanded_world_velocity,
                       decompose_command, express_in_frame, target_frame_integrate)
from .curriculum import EpisodeConfig
from .geometry import Pose, Twist, compose, inverse, quat_from_yaw
from .metrics import EpisodeOutcome, rms_error
from .policy import (ACTION_DIM, ActionBounds, HeldContactFrame, action_to_commands,
                     build_observation)
from .rewards import (TERMS, RewardContext, RewardShaping, RewardWeights, ScheduleState,
                      total_reward)
from .world import (SimulationDiverged, WorldState, contact_wrench_summary, detect_drop,
                    detect_robot_failure, spawn_scene, step, weld)

LOG_VERSION = 1


@dataclass
class EpisodeResult:
    header: dict
    outcome: EpisodeOutcome
    returns: np.ndarray                 # per-robot summed weighted reward
    n_ticks: int
    records: list = field(default_factory=list)
    cf_update_times: list = field(default_factory=list)
    world: Optional[WorldState] = None
    max_reward_abs: dict = field(default_factory=dict)   # per constellation term, max |value|

    def log_lines(self) -> list:
        return [json.dumps({"header": self.header}, sort_keys=True)] + \
               [json.dumps(r, sort_keys=True) for r in self.records]


def _planar(p: Pose) -> Pose:
    return Pose(p.position, quat_from_yaw(p.yaw))


def _pulse_force(pulses, t):
    f = np.zeros(3)
    for t0, dur, fx, fy, fz in pulses:
        if t0 <= t < t0 + dur:
            f += (fx, fy, fz)
    return f


def _rounded(a, nd=9):
    return [round(float(x), nd) for x in np.ravel(a)]


def run_episode(ep: EpisodeConfig, controller, weights: RewardWeights = RewardWeights(),
                shaping: RewardShaping = RewardShaping(), schedule: Optional[dict] = None,
                bounds: ActionBounds = ActionBounds(), rewards: bool = True, log: bool = False,
                terminate: bool = True, keep_world: bool = False) -> EpisodeResult:
    """Simulate one episode. Decentralized controllers get one observation per
    robot per tick; a ``privileged`` controller drives the weld instead."""
    w = spawn_scene(ep.scene, ep.spawn_seed, base_tau=ep.draw.base_tau, base_acc=ep.draw.base_accel)
    p = w.params
    dt = p.control_dt
    n = w.n_robots
    cmd = ep.command
    noise_rng = np.random.default_rng([int(ep.seed), 17])
    obs_noise = ep.draw.obs_noise
    root0 = w.payload_root_pose()
    spawn_bases = [w.base_pose(r) for r in range(n)]
    stance_z = [b.position[2] for b in spawn_bases]
    # per-robot commands: payload-heading axes (reward) and contact-frame axes (observation)
    cf_cmd_pl = [decompose_command(cmd, ContactOffset(w.cf_local[r].position)) for r in range(n)]
    cf_cmd_obs = [express_in_frame(c, w.cf_local[r].yaw) for r, c in enumerate(cf_cmd_pl)]
    privileged = bool(getattr(controller, "privileged", False))
    controller.reset(n)
    held = [HeldContactFrame() for _ in range(n)]
    cf_times = [[] for _ in range(n)]
    prev = np.zeros((n, ACTION_DIM))
    returns = np.zeros(n)
    max_abs = {"contact_constellation": 0.0, "base_tracking": 0.0}
    records = []
    tf: Optional[TargetFrame] = None
    base_rel = None
    lin_a, lin_c, ang_a, ang_c, h_a, h_c = [], [], [], [], [], []
    dropped = failed = diverged = False
    n_ticks = int(round(ep.phase.episode_length / dt))
    header = ep.header()
    header.update({"log_version": LOG_VERSION, "controller": type(controller).__name__,
                   "cf_local": [f.as_array().tolist() for f in w.cf_local]})
    k_done = 0
    for k in range(n_ticks):
        t = w.t
        t_next = round(t + dt, 10)
        moving = t_next >= SYNC_HORIZON - 1e-9
        tf_next = target_frame_integrate(tf, cmd, dt) if tf is not None else None
        w.ext_force = _pulse_force(ep.draw.pulses, t)

        actions = np.zeros((n, ACTION_DIM))
        cf_flags = [False] * n
        try:
            if privileged:
                pose, v, om, acc = controller.root_motion(
                    t_next, root0, cmd.h_pl, None if tf_next is None else tf_next.pose, cmd, moving)
                if tf_next is None:
                    bases = spawn_bases
                else:
                    bases = [_with_z(compose(tf_next.pose, base_rel[r]), stance_z[r]) for r in range(n)]
                weld(w, pose, Twist(v, om), bases, root_accel=acc, squeeze=controller.squeeze)
            else:
                targets, bcmds = [], []
                for r in range(n):
                    obs = build_observation(r, w, ep.mode, held[r], cf_cmd_obs[r], t, k,
                                            prev[r], obs_noise, noise_rng)
                    if obs.cf_updated:
                        cf_flags[r] = True
                        cf_times[r].append(t)
                    a = np.asarray(controller.act(r, obs), float)
                    if ep.draw.action_noise > 0:
                        a = a + noise_rng.normal(0.0, ep.draw.action_noise, ACTION_DIM) * bounds.vector()
                    tgt, bc = action_to_commands(w.pad_target(r), a, bounds)
                    actions[r] = a
                    targets.append(tgt)
                    bcmds.append(bc)
                step(w, list(zip(targets, bcmds)))
        except SimulationDiverged:
            diverged = True
            k_done = k
            break
        tf = tf_next
        k_done = k + 1
        if tf is None and moving:
            # lift window just closed: the commanded frame starts where the payload is
            tf = TargetFrame(_planar(w.payload_root_pose()))
            base_rel = [compose(inverse(tf.pose), w.base_pose(r)) for r in range(n)]

        # tracking samples for metrics
        root = w.payload_root_pose()
        if moving:
            tw = w.payload_root_twist()
            lin_a.append(tw.linear[:2])
            lin_c.append(commanded_world_velocity(cmd, root.yaw))
            ang_a.append([tw.angular[2]])
            ang_c.append([cmd.omega_pl])
            h_a.append([root.position[2]])
            h_c.append([cmd.h_pl])

        rec_rewards = None
        if rewards:
            if tf is None:
                rigid = spawn_bases
            else:
                rigid = [_with_z(compose(tf.pose, base_rel[r]), stance_z[r]) for r in range(n)]
            ctx = RewardContext(cf_cmd_pl, rigid, tf is not None)
            br = total_reward(w, actions, prev, ScheduleState(ep.phase.phase, t_next), ctx,
                              weights, shaping, schedule)
            for r, b in enumerate(br):
                returns[r] += b.total
                for name in max_abs:
                    max_abs[name] = max(max_abs[name], abs(b.terms[name]))
            rec_rewards = [{**{kk: round(float(b.terms[kk]), 9) for kk in TERMS},
                            "total": round(b.total, 9)} for b in br]
        prev = actions

        if log:
            records.append(_record(w, t_next, cmd, cf_flags, rec_rewards))
        if detect_drop(w, cmd.h_pl):
            dropped = True
        if detect_robot_failure(w):
            failed = True
        if terminate and (dropped or failed):
            break

    if lin_a:
        lin = rms_error(lin_a, lin_c)
        ang = rms_error(ang_a, ang_c)
        hgt = rms_error(h_a, h_c)
    else:
        lin = ang = hgt = float("nan")
    try:
        forces = contact_wrench_summary(w, (SYNC_HORIZON, math.inf))
    except ValueError:
        forces = np.full(n, np.nan)
    outcome = _Outcome(lin, ang, hgt, dropped or diverged, failed, forces, ep.seed, diverged)
    return EpisodeResult(header, outcome, returns, k_done, records, cf_times,
                         w if keep_world else None, max_abs)


def _Outcome(lin, ang, hgt, dropped, failed, forces, seed, diverged):
    # NaN errors (no post-lift samples) are allowed through as NaN
    o = EpisodeOutcome.__new__(EpisodeOutcome)
    o.lin_vel_rmse, o.ang_vel_rmse, o.height_rmse = float(lin), float(ang), float(hgt)
    o.dropped, o.robot_failed = bool(dropped), bool(failed)
    o.per_robot_mean_normal_force = np.asarray(forces, float)
    o.seed, o.diverged = int(seed), bool(diverged)
    return o


def _with_z(p: Pose, z: float) -> Pose:
    pos = p.position.copy()
    pos[2] = z
    return Pose(pos, p.orientation)


def _record(w: WorldState, t, cmd, cf_flags, rew) -> dict:
    root = w.payload_root_pose()
    tw = w.payload_root_twist()
    n = w.n_robots
    return {
        "t": t,
        "payload": {"pose": _rounded(root.as_array()), "lin": _rounded(tw.linear), "ang": _rounded(tw.angular)},
        "bases": [_rounded(np.concatenate([w.base_pos[r], w.base_q[r]])) for r in range(n)],
        "pads": [_rounded(np.concatenate([w.pad_pos[r], w.pad_q[r]])) for r in range(n)],
        "contacts": [{"fn": round(float(w.rec_fn[r]), 9), "ft": _rounded(w.rec_ft[r]),
                      "point": _rounded(w.rec_pt[r]), "normal": _rounded(w.rec_n[r]),
                      "in_contact": bool(w.rec_contact[r] > 0)} for r in range(n)],
        "command": _rounded(cmd.as_array()),
        "cf_update": [bool(x) for x in cf_flags],
        "reward": rew,
    }


def parse_log(lines) -> tuple:
    """(header, records) from JSON lines; raises ``ValueError`` naming the bad line."""
    header, records = None, []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"line {i}: malformed JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise ValueError(f"line {i}: expected a JSON object")
        if "header" in obj:
            if header is not None:
                raise ValueError(f"line {i}: duplicate header")
            header = obj["header"]
        else:
            if "t" not in obj or "contacts" not in obj:
                raise ValueError(f"line {i}: record lacks 't' or 'contacts'")
            records.append(obj)
    if header is None:
        raise ValueError("log has no header line")
    return header, records
