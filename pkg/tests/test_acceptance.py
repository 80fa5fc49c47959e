"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py``. The ES criterion dominates
the runtime; set ``PINCHLIFT_ES_SEEDS`` to a smaller count for a quick look.
"""
import dataclasses
import filecmp
import json
import os
import sys
import time

import numpy as np
import pytest

from pinchlift.cli import main as cli_main
from pinchlift.commands import (ContactOffset, PayloadCommand, TargetFrame, decompose_command,
                                target_frame_integrate)
from pinchlift.curriculum import ZERO_NOISE, ObservabilityMode, RandomizationConfig, make_episode
from pinchlift.episode import parse_log, run_episode
from pinchlift.es import ESTrainer, PolicyObjective
from pinchlift.geometry import (Pose, best_fit_transform, compose, constellation_distance,
                                quat_from_yaw, transform_point)
from pinchlift.grasp import force_closure_check
from pinchlift.metrics import force_distribution, side_labels, summarize_batch
from pinchlift.params_io import read_params
from pinchlift.policy import MLPPolicy, RigidOracleController, ScriptedPLMController
from pinchlift.world import DEFAULT_BOX, SMALL_BOX, pinch_hold_bound, pinch_hold_trial

sys.path.insert(0, os.path.dirname(__file__))
from test_grasp import hull_oracle, random_contact_set  # noqa: E402

RESULTS = {}


def report(n, ok, detail):
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n], flush=True)
    assert ok, RESULTS[n]


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return Pose(rng.uniform(-scale, scale, 3), q / np.linalg.norm(q))


# 1 -------------------------------------------------------------------------

def test_c1_constellation_math():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        P = rng.normal(size=(rng.integers(3, 8), 3))
        Q = P + 0.05 * rng.normal(size=P.shape)
        g, h = random_pose(rng), random_pose(rng)
        d = constellation_distance(P, Q)
        # same rigid motion on both sets leaves d unchanged
        worst = max(worst, abs(constellation_distance(transform_point(g, P), transform_point(g, Q)) - d))
        t = rng.normal(size=3)
        worst = max(worst, abs(constellation_distance(P + t, P) - t @ t))
        # equivariance of the best fit: fit(gP, hQ) = h fit(P, Q) g^-1
        T = best_fit_transform(P, Q)
        T2 = best_fit_transform(transform_point(g, P), transform_point(h, Q))
        worst = max(worst, np.abs(transform_point(T2, transform_point(g, P))
                                  - transform_point(h, transform_point(T, P))).max())
        # exact recovery of a known motion
        R = best_fit_transform(P, transform_point(g, P))
        worst = max(worst, np.abs(R.matrix() - g.matrix()).max())
    dt = time.perf_counter() - t0
    report(1, worst < 1e-6 and dt < 10, f"1000 cases, worst deviation {worst:.2e} (tol 1e-6), {dt:.1f} s (limit 10 s)")


# 2 -------------------------------------------------------------------------

def test_c2_rigid_oracle():
    t0 = time.perf_counter()
    worst_r, worst_rms, parts = 0.0, 0.0, []
    for n in (2, 3, 4, 5, 6):
        ep = make_episode(n, 3, DEFAULT_BOX, n, RandomizationConfig.none(), eval_commands=True,
                          episode_length=14.0)
        res = run_episode(ep, RigidOracleController())
        r = max(res.max_reward_abs.values())
        worst_r = max(worst_r, r)
        worst_rms = max(worst_rms, res.outcome.lin_vel_rmse)
        parts.append(f"N={n}: |r|max {r:.1e} rms {res.outcome.lin_vel_rmse:.1e}")
    dt = time.perf_counter() - t0
    ok = worst_r < 1e-6 and worst_rms < 0.01 and dt < 60
    report(2, ok, f"{'; '.join(parts)}; {dt:.1f} s (limit 60 s)")


# 3 -------------------------------------------------------------------------

def test_c3_command_decomposition():
    rng = np.random.default_rng(3)
    dt, worst = 1e-4, 0.0
    for _ in range(1000):
        cmd = PayloadCommand(rng.uniform(-0.4, 0.4, 2), rng.uniform(-0.4, 0.4), 0.2)
        off = rng.uniform(-0.5, 0.5, 3)
        yaw = rng.uniform(-np.pi, np.pi)
        tf = TargetFrame(Pose(np.array([*rng.uniform(-1, 1, 2), 0.2]), quat_from_yaw(yaw)))
        tf1 = target_frame_integrate(tf, cmd, dt)
        x0 = transform_point(tf.pose, off)
        x1 = transform_point(tf1.pose, off)
        v_world = (x1 - x0)[:2] / dt
        c, s = np.cos(yaw), np.sin(yaw)
        v_fd = np.array([c * v_world[0] + s * v_world[1], -s * v_world[0] + c * v_world[1]])
        v_an = decompose_command(cmd, ContactOffset(off)).v_cf
        worst = max(worst, np.linalg.norm(v_fd - v_an))
    report(3, worst < 1e-3, f"1000 pairs at dt=1e-4 s, worst |v_fd - v_analytic| {worst:.2e} m/s (tol 1e-3)")


# 4 -------------------------------------------------------------------------

def test_c4_friction_closure():
    bad = []
    for mu in np.linspace(0.2, 1.0, 10):
        for F in np.linspace(4.0, 40.0, 10):
            held, _ = pinch_hold_trial(mu, F, mass=2.0)
            if held != pinch_hold_bound(mu, F, 2.0):
                bad.append((round(float(mu), 2), round(float(F), 1)))
    rng = np.random.default_rng(11)
    disagree = 0
    for _ in range(200):
        frames, mu = random_contact_set(rng)
        disagree += force_closure_check(frames, mu) != hull_oracle(frames, mu)
    ok = len(bad) <= 2 and disagree == 0
    report(4, ok, f"pinch grid misclassified {len(bad)}/100 {bad} (limit 2); "
                  f"closure vs hull oracle {disagree}/200 disagreements (limit 0)")


# 5 -------------------------------------------------------------------------

def batch(shape, n, seeds, randomization, mode=ObservabilityMode(), **kw):
    outs = []
    for s in seeds:
        ep = make_episode(s, 3, shape, n, randomization, mode=mode, eval_commands=True, **kw)
        outs.append(run_episode(ep, ScriptedPLMController(), rewards=False).outcome)
    return summarize_batch(outs)


QUIET = dataclasses.replace(RandomizationConfig(), obs_noise=ZERO_NOISE, pulse_rate=0.0)


def test_c5_scripted_transport():
    t0 = time.perf_counter()
    quiet = batch(SMALL_BOX, 2, range(100), QUIET)
    noisy = batch(SMALL_BOX, 2, range(1000, 1100), RandomizationConfig())
    dt = time.perf_counter() - t0
    ok = (quiet.drop_pct == 0 and quiet.failure_pct == 0 and quiet.lin_vel_rmse_mean <= 0.08
          and noisy.drop_pct <= 10 and dt < 300)
    report(5, ok, f"zero noise: drop {quiet.drop_pct:.0f}% fail {quiet.failure_pct:.0f}% "
                  f"lin rms {quiet.lin_vel_rmse_mean:.4f} (limit 0.08); default noise: drop "
                  f"{noisy.drop_pct:.0f}% (limit 10%); {dt:.0f} s (limit 300 s)")


# 6 -------------------------------------------------------------------------

def test_c6_team_size():
    parts, ok = [], True
    for n in (2, 3, 4, 5, 6):
        s = batch(DEFAULT_BOX, n, range(100 * n, 100 * n + 20), RandomizationConfig(), mass=2.0)
        ep = make_episode(n, 3, DEFAULT_BOX, n, RandomizationConfig(), mass=2.0,
                          command=PayloadCommand(np.zeros(2), 0.0, 0.2), episode_length=8.0)
        res = run_episode(ep, ScriptedPLMController(), rewards=False, keep_world=True)
        fd = force_distribution(res.world.force_history, (6.0, 8.0), side_labels(res.world.cf_local))
        ok &= s.drop_pct <= 15 and fd["imbalance"] <= 0.15 and not res.outcome.dropped
        parts.append(f"N={n}: drop {s.drop_pct:.0f}% imbalance {fd['imbalance']:.3f}")
    report(6, ok, "; ".join(parts) + " (limits 15% / 0.15)")


# 7 -------------------------------------------------------------------------

def test_c7_observability():
    late = 0
    masked = ObservabilityMode("cf_init", 0.0)
    for s in range(10):
        ep = make_episode(s, 3, SMALL_BOX, 2, QUIET, mode=masked, eval_commands=True)
        res = run_episode(ep, ScriptedPLMController(), rewards=False, log=True)
        _, recs = parse_log(res.log_lines())
        late += sum(any(r["cf_update"]) for r in recs if r["t"] > 2.0 + 1e-9)
    plus = batch(SMALL_BOX, 2, range(700, 750), QUIET)
    init = batch(SMALL_BOX, 2, range(700, 750), QUIET, mode=masked)
    ok = late == 0 and init.drop_pct <= 2 * plus.drop_pct
    report(7, ok, f"cf updates after 2 s in 10 logged cf_init episodes: {late}; drop cf_init "
                  f"{init.drop_pct:.0f}% vs cf_plus {plus.drop_pct:.0f}% (limit 2x)")


# 8 -------------------------------------------------------------------------

def es_seed(seed, max_gen=200, check_every=5):
    obj = PolicyObjective(phase=1, n_robots=2, hidden=64, master_seed=seed)
    th0 = MLPPolicy(hidden=64, random_state=seed).fit().theta_
    eval_seeds = [10**6 + 10 * seed + i for i in range(2)]
    base = obj.evaluate(th0, eval_seeds)
    es = ESTrainer(population_size=8, sigma=0.05, learning_rate=0.06, n_generations=max_gen,
                   random_state=seed)
    best = {"ret": base, "gen": 0}

    def cb(g, theta):
        if g % check_every:
            return None
        v = obj.evaluate(theta, eval_seeds)
        if v > best["ret"]:
            best.update(ret=v, gen=g)
        if v - base >= 0.5 * abs(base):
            es.stop_ = True
        return v

    es.fit(obj, th0, callback=cb)
    return base, best["ret"], best["gen"]


def test_c8_es_training():
    n_seeds = int(os.environ.get("PINCHLIFT_ES_SEEDS", "10"))
    t0 = time.perf_counter()
    wins, parts = 0, []
    for seed in range(n_seeds):
        base, ret, gen = es_seed(seed)
        gain = (ret - base) / abs(base)
        wins += gain >= 0.5
        parts.append(f"s{seed}:{100 * gain:.0f}%@g{gen}")
    dt = time.perf_counter() - t0
    need = int(np.ceil(0.8 * n_seeds))
    report(8, wins >= need and dt <= 1800,
           f"{wins}/{n_seeds} seeds improve >= 50% within 200 generations (need {need}); "
           f"{' '.join(parts)}; {dt / 60:.1f} min on {os.cpu_count()} CPU(s) (limit 30 min)")


# 9 -------------------------------------------------------------------------

def test_c9_determinism(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "episodes": 4, "episode_length": 7.0, "seed": 9,
                               "training": {"population_size": 8, "hidden": 8, "checkpoint_every": 2,
                                            "stages": [{"phase": 1, "generations": 2}]}}))
    dirs = {}
    for w in (1, 8):
        d = tmp_path / f"w{w}"
        assert cli_main(["eval", "--config", str(cfg), "--out-dir", str(d), "--workers", str(w), "--logs"]) == 0
        assert cli_main(["train", "--config", str(cfg), "--out-dir", str(d), "--workers", str(w)]) == 0
        assert cli_main(["run", "--config", str(cfg), "--out-dir", str(d)]) == 0
        dirs[w] = d
    names = sorted(os.listdir(dirs[1]))
    match, mismatch, errors = filecmp.cmpfiles(dirs[1], dirs[8], names, shallow=False)
    same = names == sorted(os.listdir(dirs[8])) and not mismatch and not errors
    from pinchlift.config import load_config
    h = load_config(cfg).config_hash()
    missing = []
    for f in names:
        p = dirs[1] / f
        if f.endswith(".csv"):
            rows = p.read_text().splitlines()[1:]
            ok = bool(rows) and all(h in row for row in rows)
        elif f.endswith(".jsonl"):
            ok = parse_log(p.read_text().splitlines())[0]["config_hash"] == h
        elif f == "params.bin":
            ok = read_params(p)[1]["config_hash"] == h
        else:
            ok = h in p.read_bytes().decode("latin-1")
        if not ok:
            missing.append(f)
    report(9, same and not missing, f"{len(match)}/{len(names)} files byte-identical at 1 vs 8 workers; "
                                    f"config hash {h} embedded in all outputs"
                                    + (f" except {missing}" if missing else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
