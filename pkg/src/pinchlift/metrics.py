"""Evaluation metrics: tracking errors, drop/failure rates and force distribution.

Tracking errors only use samples with ``t >= 5`` s (after the lift window)
and batch means only use episodes without a drop.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

TRACKING_CONVENTION = "post-lift window t>=5s; batch means exclude dropped episodes"

EPISODE_COLUMNS = (
    "episode", "seed", "n_robots", "lin_vel_rmse", "ang_vel_rmse", "height_rmse",
    "dropped", "robot_failed", "diverged", "mean_normal_force", "config_hash", "error",
)
SUMMARY_COLUMNS = (
    "n_episodes", "n_tracked", "lin_vel_rmse_mean", "lin_vel_rmse_se", "ang_vel_rmse_mean",
    "ang_vel_rmse_se", "height_rmse_mean", "height_rmse_se", "drop_pct", "failure_pct",
    "convention", "config_hash", "master_seed",
)


@dataclass
class EpisodeOutcome:
    lin_vel_rmse: float
    ang_vel_rmse: float
    height_rmse: float
    dropped: bool
    robot_failed: bool
    per_robot_mean_normal_force: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int = 0
    diverged: bool = False

    def __post_init__(self):
        for name in ("lin_vel_rmse", "ang_vel_rmse", "height_rmse"):
            v = float(getattr(self, name))
            if v < 0:
                raise ValueError(f"{name} must be >= 0")
            setattr(self, name, v)
        self.per_robot_mean_normal_force = np.asarray(self.per_robot_mean_normal_force, float)


@dataclass
class BatchSummary:
    n_episodes: int
    n_tracked: int
    lin_vel_rmse_mean: float
    lin_vel_rmse_se: float
    ang_vel_rmse_mean: float
    ang_vel_rmse_se: float
    height_rmse_mean: float
    height_rmse_se: float
    drop_pct: float
    failure_pct: float
    convention: str = TRACKING_CONVENTION

    def as_dict(self) -> dict:
        return asdict(self)


def rms_error(actual, commanded) -> float:
    """sqrt(mean_t ||actual_t - commanded_t||^2); rows are time samples."""
    a = np.asarray(actual, float)
    c = np.asarray(commanded, float)
    if a.shape != c.shape:
        raise ValueError(f"series shape mismatch {a.shape} vs {c.shape}")
    if a.shape[0] == 0:
        raise ValueError("empty tracking window")
    e = (a - c).reshape(a.shape[0], -1)
    return float(math.sqrt(np.mean(np.sum(e * e, axis=1))))


def _mean_se(x):
    x = np.asarray(x, float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def summarize_batch(outcomes: Sequence[EpisodeOutcome]) -> BatchSummary:
    if len(outcomes) == 0:
        raise ValueError("need at least one outcome")
    n = len(outcomes)
    kept = [o for o in outcomes if not o.dropped]
    lin = _mean_se([o.lin_vel_rmse for o in kept])
    ang = _mean_se([o.ang_vel_rmse for o in kept])
    hgt = _mean_se([o.height_rmse for o in kept])
    n_drop = sum(bool(o.dropped) for o in outcomes)
    n_fail = sum(bool(o.robot_failed) for o in outcomes)
    return BatchSummary(n, len(kept), lin[0], lin[1], ang[0], ang[1], hgt[0], hgt[1],
                        100.0 * n_drop / n, 100.0 * n_fail / n)


def side_labels(cf_local) -> list:
    """Group contact frames by which face they push on (rounded inward normal)."""
    keys = []
    for f in cf_local:
        R = f.rotation if hasattr(f, "rotation") else np.asarray(f)
        n = R[:, 0] if np.ndim(R) == 2 else R
        keys.append((round(float(n[0]), 3), round(float(n[1]), 3)))
    uniq = sorted(set(keys))
    return [uniq.index(k) for k in keys]


def force_distribution(history, window=(5.0, np.inf), sides: Optional[Sequence[int]] = None) -> dict:
    """Per-robot mean normal force over ``window`` plus per-side totals.

    ``history`` is a sequence of ``(t, forces)`` ticks (``WorldState.force_history``
    or parsed from a log). ``imbalance`` is ``|A - B| / max(A, B)`` for the first
    two sides.
    """
    lo, hi = window
    if lo < 5.0 - 1e-9:
        raise ValueError("force window must start after the lift window (t >= 5 s)")
    sel = [np.asarray(f, float) for t, f in history if lo - 1e-9 <= t <= hi + 1e-9]
    if not sel:
        raise ValueError(f"no ticks inside window {window}")
    per = np.mean(np.stack(sel), axis=0)
    out = {"per_robot": per}
    if sides is not None:
        sides = np.asarray(sides)
        sums = {int(s): float(per[sides == s].sum()) for s in np.unique(sides)}
        out["side_sums"] = sums
        vals = list(sums.values())
        if len(vals) >= 2:
            a, b = vals[0], vals[1]
            out["imbalance"] = abs(a - b) / max(a, b, 1e-12)
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_episode_csv(path, outcomes: Sequence[EpisodeOutcome], config_hash: str = "",
                      n_robots: Optional[Sequence[int]] = None, errors: Optional[Sequence[str]] = None):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(EPISODE_COLUMNS)
        for i, o in enumerate(outcomes):
            f = ";".join(repr(float(x)) for x in o.per_robot_mean_normal_force)
            wr.writerow([i, o.seed, "" if n_robots is None else n_robots[i],
                         _fmt(o.lin_vel_rmse), _fmt(o.ang_vel_rmse), _fmt(o.height_rmse),
                         _fmt(o.dropped), _fmt(o.robot_failed), _fmt(o.diverged), f, config_hash,
                         "" if errors is None else errors[i]])


def write_summary_csv(path, summary: BatchSummary, config_hash: str = "", master_seed: int = 0):
    d = summary.as_dict()
    d["config_hash"] = config_hash
    d["master_seed"] = master_seed
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        wr.writerow([_fmt(d[c]) for c in SUMMARY_COLUMNS])


def read_episode_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            forces = [float(x) for x in row["mean_normal_force"].split(";") if x]
            out.append(EpisodeOutcome(float(row["lin_vel_rmse"]), float(row["ang_vel_rmse"]),
                                      float(row["height_rmse"]), bool(int(row["dropped"])),
                                      bool(int(row["robot_failed"])), np.array(forces),
                                      int(row["seed"]), bool(int(row["diverged"]))))
    return out
