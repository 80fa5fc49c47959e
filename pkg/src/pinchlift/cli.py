"""``pinchlift`` command line: run, eval, train, export.

Exit status: 0 ok, 2 usage, 3 config or input error, 4 payload dropped,
5 robot failure, 6 simulation diverged.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .params_io import CorruptFileError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DROP, EXIT_FAILURE, EXIT_DIVERGED = 0, 2, 3, 4, 5, 6


def _parser():
    ap = argparse.ArgumentParser(prog="pinchlift", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="output directory (else config out_dir, else $PINCHLIFT_OUT_DIR)")
        p.add_argument("--phase", type=int, choices=(1, 2, 3))
        p.add_argument("--controller", choices=("scripted", "rigid_oracle", "learned"))
        p.add_argument("--mode", choices=("cf_plus", "cf_init"))
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("run", help="simulate one episode and write its log")
    common(p)
    p = sub.add_parser("eval", help="batch evaluation to CSV")
    common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--logs", action="store_true", help="also write one log per episode")
    p = sub.add_parser("train", help="evolution-strategy training through the configured stages")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from out-dir/checkpoint.bin")
    p = sub.add_parser("export", help="CSV series or metrics from a trajectory log")
    p.add_argument("log", help="JSON-lines trajectory log written by 'run'")
    p.add_argument("--kind", required=True, choices=("forces", "errors", "metrics"))
    p.add_argument("--out", help="output CSV (default: next to the log)")
    return ap


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = dict(seed=args.seed, phase=args.phase, controller=args.controller, mode=args.mode)
    if getattr(args, "episodes", None) is not None:
        over["episodes"] = args.episodes
    return cfg.with_overrides(**over)


def _err(msg):
    print(f"pinchlift: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    from .experiment import run_config_episode, write_log
    from .metrics import write_episode_csv
    cfg = _load(args)
    res = run_config_episode(cfg, cfg.seed, log=True)
    out = cfg.output_dir(args.out_dir)
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, f"run_{cfg.seed}")
    write_log(stem + ".jsonl", res)
    write_episode_csv(stem + ".csv", [res.outcome], cfg.config_hash(), [cfg.scene.n_robots])
    o = res.outcome
    print(f"lin_vel_rmse={o.lin_vel_rmse:.4f} ang_vel_rmse={o.ang_vel_rmse:.4f} "
          f"height_rmse={o.height_rmse:.4f} dropped={o.dropped} robot_failed={o.robot_failed} "
          f"log={stem}.jsonl")
    if o.diverged:
        _err("simulation diverged")
        return EXIT_DIVERGED
    if o.robot_failed:
        _err("robot failure (collision or tipped base)")
        return EXIT_FAILURE
    if o.dropped:
        _err("payload dropped")
        return EXIT_DROP
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiment import evaluate_batch
    cfg = _load(args)
    out = cfg.output_dir(args.out_dir)
    os.makedirs(out, exist_ok=True)
    s, _, errors = evaluate_batch(cfg, out, workers=max(1, args.workers), logs=args.logs)
    for i, e in enumerate(errors):
        if e:
            _err(f"episode {i}: {e}")
    print(f"episodes={s.n_episodes} drop%={s.drop_pct:.1f} failure%={s.failure_pct:.1f} "
          f"lin_vel_rmse={s.lin_vel_rmse_mean:.4f}+-{s.lin_vel_rmse_se:.4f} "
          f"summary={os.path.join(out, 'summary.csv')}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiment import train
    cfg = _load(args)
    out = cfg.output_dir(args.out_dir)
    os.makedirs(out, exist_ok=True)
    res = train(cfg, out, workers=max(1, args.workers), resume=args.resume, log=print)
    print(f"generations={res.generation} params={os.path.join(out, 'params.bin')}")
    return EXIT_OK


def cmd_export(args) -> int:
    from .experiment import export_log
    try:
        with open(args.log) as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read log {args.log}: {e.strerror}") from None
    out = args.out or os.path.splitext(args.log)[0] + f"_{args.kind}.csv"
    export_log(lines, args.kind, out)
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if getattr(args, "workers", 1) < 1:
        _err("--workers must be >= 1")
        return EXIT_USAGE
    handler = {"run": cmd_run, "eval": cmd_eval, "train": cmd_train, "export": cmd_export}[args.cmd]
    try:
        return handler(args)
    except (ConfigError, CorruptFileError) as e:
        _err(str(e))
        return EXIT_CONFIG
    except ValueError as e:
        # malformed logs and mismatched checkpoints land here
        _err(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
