"""Config-driven runners behind the command line: single episodes, batches,
staged training and log export. Everything here is deterministic in
``(config, seed)`` whatever the worker count."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .commands import SYNC_HORIZON, PayloadCommand, commanded_world_velocity
from .config import ExperimentConfig
from .curriculum import ObservabilityMode, make_episode
from .episode import EpisodeResult, parse_log, run_episode
from .es import ESTrainer, PolicyObjective, _Adam, write_history_csv
from .geometry import Pose
from .metrics import (EpisodeOutcome, summarize_batch, write_episode_csv, write_summary_csv,
                      rms_error)
from .params_io import read_checkpoint, read_params, write_checkpoint, write_params
from .policy import MLPPolicy, PolicyController, RigidOracleController, ScriptedPLMController


def episode_seeds(master_seed: int, n: int) -> list:
    """Per-episode seeds; episode ``i`` gets the same seed in any batch size."""
    return [int(np.random.SeedSequence([int(master_seed), i]).generate_state(1)[0]) for i in range(n)]


def build_controller(cfg: ExperimentConfig):
    kind = cfg.controller.kind
    if kind == "scripted":
        return ScriptedPLMController(bounds=cfg.bounds)
    if kind == "rigid_oracle":
        return RigidOracleController()
    theta, hdr = read_params(cfg.resolve(cfg.controller.params_path))
    pol = MLPPolicy(hidden=hdr["hidden"], n_layers=hdr["n_layers"], bounds=cfg.bounds)
    return PolicyController(pol.set_flat(theta))


def episode_config(cfg: ExperimentConfig, seed: int):
    sc = cfg.scene
    return make_episode(seed, cfg.phase, sc.payload(), sc.n_robots, cfg.randomization,
                        mode=cfg.observability(), ranges=cfg.commands.ranges(),
                        arrangement=sc.arrangement, mass=sc.mass,
                        eval_commands=cfg.commands.eval_commands,
                        episode_length=cfg.episode_length)


def run_config_episode(cfg: ExperimentConfig, seed: int, log: bool = False,
                       controller=None) -> EpisodeResult:
    ctl = build_controller(cfg) if controller is None else controller
    res = run_episode(episode_config(cfg, seed), ctl, cfg.weights, cfg.shaping,
                      cfg.reward_schedule(), cfg.bounds, rewards=cfg.rewards, log=log)
    res.header["config_hash"] = cfg.config_hash()
    res.header["run_seed"] = int(seed)
    return res


def write_log(path, res: EpisodeResult):
    with open(path, "w") as fh:
        for line in res.log_lines():
            fh.write(line + "\n")


def _failed_outcome(seed):
    return EpisodeOutcome(math.nan, math.nan, math.nan, True, False, np.zeros(0), seed, False)


def _eval_one(args):
    cfg, seed, log_path = args
    try:
        res = run_config_episode(cfg, seed, log=log_path is not None)
    except Exception as e:        # recorded per episode; the batch carries on
        return _failed_outcome(seed), cfg.scene.n_robots, f"{type(e).__name__}: {e}"
    if log_path is not None:
        write_log(log_path, res)
    return res.outcome, cfg.scene.n_robots, ""


def evaluate_batch(cfg: ExperimentConfig, out_dir: str, workers: int = 1, logs: bool = False):
    """Run ``cfg.episodes`` episodes and write per-episode and summary CSVs.

    Returns ``(summary, outcomes, errors)``; results are merged by episode index.
    """
    seeds = episode_seeds(cfg.seed, cfg.episodes)
    jobs = [(cfg, s, os.path.join(out_dir, f"episode_{i:04d}.jsonl") if logs else None)
            for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    outcomes = [r[0] for r in results]
    errors = [r[2] for r in results]
    h = cfg.config_hash()
    write_episode_csv(os.path.join(out_dir, "episodes.csv"), outcomes, h, [r[1] for r in results], errors)
    summary = summarize_batch(outcomes)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), summary, h, cfg.seed)
    return summary, outcomes, errors


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def stage_objective(cfg: ExperimentConfig, stage) -> PolicyObjective:
    sc = cfg.scene
    return PolicyObjective(phase=stage.phase, n_robots=sc.n_robots, shape=sc.payload(),
                           episodes=cfg.training.episodes_per_member, master_seed=cfg.seed,
                           hidden=cfg.training.hidden, randomization=cfg.randomization,
                           mode=ObservabilityMode(stage.mode, stage.anneal_stage),
                           weights=cfg.weights, shaping=cfg.shaping, arrangement=sc.arrangement,
                           episode_length=cfg.episode_length)


@dataclass
class TrainResult:
    theta: np.ndarray
    history: list
    generation: int


def train(cfg: ExperimentConfig, out_dir: str, workers: int = 1, resume: bool = False,
          log=None) -> TrainResult:
    """ES through the configured stages, checkpointing every K generations.

    The per-generation random stream depends only on ``(seed, generation)``,
    so a resumed run continues exactly where the interrupted one stopped.
    """
    tr = cfg.training
    h = cfg.config_hash()
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    theta = MLPPolicy(hidden=tr.hidden, init_scale=tr.init_scale, random_state=cfg.seed).fit().theta_
    opt = _Adam(theta.size)
    history = []
    stage_i, stage_g = 0, 0
    if resume:
        theta, m, v, hdr = read_checkpoint(ckpt)
        if hdr.get("config_hash") != h:
            raise ValueError(f"{ckpt}: written by a different config ({hdr.get('config_hash')})")
        opt.m, opt.v, opt.t = m, v, hdr["adam_t"]
        history = hdr["history"]
        stage_i, stage_g = hdr["stage"], hdr["stage_generation"]
    g_global = len(history)
    while stage_i < len(tr.stages):
        stage = tr.stages[stage_i]
        if stage_g >= stage.generations:
            stage_i, stage_g = stage_i + 1, 0
            continue
        label = f"phase{stage.phase}:{stage.mode}@{stage.anneal_stage:g}Hz"
        chunk = min(tr.checkpoint_every, stage.generations - stage_g)
        es = ESTrainer(population_size=tr.population_size, sigma=tr.sigma,
                       learning_rate=tr.learning_rate, n_generations=chunk,
                       lr_decay=tr.lr_decay, sigma_decay=tr.sigma_decay,
                       weight_decay=tr.weight_decay, random_state=cfg.seed, n_workers=workers)
        es.fit(stage_objective(cfg, stage), theta, anneal_stage=label, start_generation=g_global,
               state={"history": history, "optimizer": opt})
        theta, history, opt = es.params_, es.history_, es.optimizer_
        stage_g += chunk
        g_global += chunk
        if stage_g >= stage.generations:
            stage_i, stage_g = stage_i + 1, 0
        write_checkpoint(ckpt, theta, opt.m, opt.v, opt.t,
                         {"config_hash": h, "seed": cfg.seed, "stage": stage_i,
                          "stage_generation": stage_g, "history": history})
        write_history_csv(os.path.join(out_dir, "fitness.csv"), history, h, cfg.seed)
        if log is not None:
            log(f"generation {g_global}: {label} mean fitness {history[-1]['fitness_mean']:.3f}")
    write_history_csv(os.path.join(out_dir, "fitness.csv"), history, h, cfg.seed)
    write_params(os.path.join(out_dir, "params.bin"), theta, tr.hidden, 2, cfg.seed, g_global, h)
    return TrainResult(theta, history, g_global)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

EXPORT_KINDS = ("forces", "errors", "metrics")


def export_log(lines, kind: str, out_path: str):
    """Per-tick force or tracking-error series, or the episode metric row, as CSV."""
    if kind not in EXPORT_KINDS:
        raise KeyError(kind)
    header, records = parse_log(lines)
    h = header.get("config_hash", "")
    seed = header.get("run_seed", header.get("seed", ""))
    n = len(records[0]["contacts"]) if records else 0
    with open(out_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if kind == "forces":
            wr.writerow(["t"] + [f"fn_{r}" for r in range(n)] + ["config_hash", "seed"])
            for rec in records:
                wr.writerow([repr(rec["t"])] + [repr(c["fn"]) for c in rec["contacts"]] + [h, seed])
            return
        rows = [_errors(rec) for rec in records]
        if kind == "errors":
            wr.writerow(["t", "lin_vel_err", "ang_vel_err", "height_err", "config_hash", "seed"])
            for rec, (lin_a, lin_c, om, om_c, z, zc) in zip(records, rows):
                wr.writerow([repr(rec["t"]), repr(float(np.linalg.norm(lin_a - lin_c))),
                             repr(abs(om - om_c)), repr(abs(z - zc)), h, seed])
            return
        win = [(rec, r) for rec, r in zip(records, rows) if rec["t"] >= SYNC_HORIZON - 1e-9]
        forces = [np.array([c["fn"] for c in rec["contacts"]]) for rec, _ in win]
        wr.writerow(["lin_vel_rmse", "ang_vel_rmse", "height_rmse"]
                    + [f"mean_fn_{r}" for r in range(n)] + ["config_hash", "seed"])
        if not win:
            wr.writerow(["nan"] * 3 + ["nan"] * n + [h, seed])
            return
        lin = rms_error([r[0] for _, r in win], [r[1] for _, r in win])
        ang = rms_error([[r[2]] for _, r in win], [[r[3]] for _, r in win])
        hgt = rms_error([[r[4]] for _, r in win], [[r[5]] for _, r in win])
        wr.writerow([repr(lin), repr(ang), repr(hgt)]
                    + [repr(float(x)) for x in np.mean(forces, axis=0)] + [h, seed])


def _errors(rec):
    pose = np.asarray(rec["payload"]["pose"])
    cmd = PayloadCommand.from_array(rec["command"])
    yaw = Pose(pose[:3], pose[3:]).yaw
    lin = np.asarray(rec["payload"]["lin"])[:2]
    return (lin, commanded_world_velocity(cmd, yaw), float(rec["payload"]["ang"][2]),
            cmd.omega_pl, float(pose[2]), cmd.h_pl)
