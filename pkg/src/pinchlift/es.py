"""Antithetic evolution strategy with rank-shaped fitness, plus the policy objective."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .curriculum import ObservabilityMode, RandomizationConfig, make_episode
from .episode import run_episode
from .policy import MLPPolicy, PolicyController
from .rewards import RewardShaping, RewardWeights
from .world import SMALL_BOX, PayloadShape

HISTORY_COLUMNS = ("generation", "fitness_mean", "fitness_max", "fitness_min", "n_discarded",
                   "sigma", "learning_rate", "anneal_stage", "center_fitness")


def centered_ranks(x) -> np.ndarray:
    """Ranks mapped to [-0.5, 0.5]; ties get their average rank."""
    x = np.asarray(x, float)
    n = x.size
    if n == 1:
        return np.zeros(1)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n, dtype=float)
    # average ties so equal fitness gets equal weight
    for v in np.unique(x):
        m = x == v
        if m.sum() > 1:
            ranks[m] = ranks[m].mean()
    return ranks / (n - 1) - 0.5


class _Adam:
    def __init__(self, dim, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, g, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return lr * mh / (np.sqrt(vh) + self.eps)


def _evaluate(args):
    objective, theta, gen = args
    return float(objective(theta, gen))


class ESTrainer(BaseEstimator):
    """Maximizes ``objective(theta, generation)`` by antithetic sampling.

    Each generation draws ``population_size // 2`` directions ``eps`` and
    evaluates ``theta +/- sigma * eps``. Fitnesses are replaced by centered
    ranks (so adding a constant to all of them changes nothing); a pair with
    a NaN member is dropped and counted. The gradient estimate feeds Adam.

    ``callback(generation, theta)`` may return a float (logged as the
    centre fitness) and may stop training by setting ``trainer.stop_ = True``.
    """

    def __init__(self, population_size: int = 16, sigma: float = 0.05, learning_rate: float = 0.02,
                 n_generations: int = 200, lr_decay: float = 1.0, sigma_decay: float = 1.0,
                 weight_decay: float = 0.0, random_state: int = 0, n_workers: int = 1):
        self.population_size = population_size
        self.sigma = sigma
        self.learning_rate = learning_rate
        self.n_generations = n_generations
        self.lr_decay = lr_decay
        self.sigma_decay = sigma_decay
        self.weight_decay = weight_decay
        self.random_state = random_state
        self.n_workers = n_workers

    def _check(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be an even number >= 2")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n_generations < 0:
            raise ValueError("n_generations must be >= 0")

    def fit(self, objective: Callable, theta0, callback: Optional[Callable] = None,
            anneal_stage=None, start_generation: int = 0, state: Optional[dict] = None):
        self._check()
        theta = np.array(theta0, dtype=float).ravel()
        self.n_features_in_ = theta.size
        if state is None:
            self.history_ = []
            opt = _Adam(theta.size)
        else:
            self.history_ = list(state["history"])
            opt = state["optimizer"]
        self.stop_ = False
        half = self.population_size // 2
        pool = ProcessPoolExecutor(self.n_workers) if self.n_workers > 1 else None
        try:
            for g in range(start_generation, start_generation + self.n_generations):
                sigma = self.sigma * self.sigma_decay ** g
                lr = self.learning_rate * self.lr_decay ** g
                # per-generation stream: resuming at generation g reproduces it exactly
                rng = np.random.default_rng([int(self.random_state), g])
                eps = rng.standard_normal((half, theta.size))
                if sigma == 0:
                    fit = np.full(2 * half, np.nan)
                    n_bad = 0
                    center = callback(g, theta) if callback else None
                    self._log(g, fit, n_bad, sigma, lr, anneal_stage, center)
                    if self.stop_:
                        break
                    continue
                members = np.concatenate([theta + sigma * eps, theta - sigma * eps])
                jobs = [(objective, m, g) for m in members]
                if pool is None:
                    fit = np.array([_evaluate(j) for j in jobs])
                else:
                    # map preserves submission order, so results never depend on timing
                    fit = np.array(list(pool.map(_evaluate, jobs)))
                ok = np.isfinite(fit[:half]) & np.isfinite(fit[half:])
                n_bad = int(np.sum(~ok))
                if ok.any():
                    shaped = centered_ranks(np.concatenate([fit[:half][ok], fit[half:][ok]]))
                    k = int(ok.sum())
                    grad = (shaped[:k] - shaped[k:]) @ eps[ok] / (2 * k * sigma)
                    theta = theta + opt.step(grad - self.weight_decay * theta, lr)
                center = callback(g + 1, theta) if callback else None
                self._log(g, fit, n_bad, sigma, lr, anneal_stage, center)
                if self.stop_:
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        self.params_ = theta
        self.optimizer_ = opt
        return self

    def _log(self, g, fit, n_bad, sigma, lr, stage, center):
        good = fit[np.isfinite(fit)]
        self.history_.append({
            "generation": g,
            "fitness_mean": float(good.mean()) if good.size else float("nan"),
            "fitness_max": float(good.max()) if good.size else float("nan"),
            "fitness_min": float(good.min()) if good.size else float("nan"),
            "n_discarded": n_bad,
            "sigma": sigma, "learning_rate": lr,
            "anneal_stage": "" if stage is None else str(stage),
            "center_fitness": "" if center is None else float(center),
        })

    def predict(self, X=None):
        check_is_fitted(self, "params_")
        return self.params_.copy()


def write_history_csv(path, history, config_hash: str = "", seed: int = 0):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HISTORY_COLUMNS + ("config_hash", "seed"))
        for h in history:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in (h[c] for c in HISTORY_COLUMNS)]
                        + [config_hash, seed])


@dataclass
class PolicyObjective:
    """Team fitness of a shared parameter vector: mean over robots and episode
    seeds of the summed weighted reward. Seeds depend on the generation so
    every member of one generation sees the same episodes."""

    phase: int = 1
    n_robots: int = 2
    shape: PayloadShape = SMALL_BOX
    episodes: int = 1
    master_seed: int = 0
    hidden: int = 64
    randomization: RandomizationConfig = RandomizationConfig()
    mode: ObservabilityMode = ObservabilityMode()
    weights: RewardWeights = RewardWeights()
    shaping: RewardShaping = RewardShaping()
    arrangement: str = "nominal"
    episode_length: Optional[float] = None

    def seeds(self, generation: int) -> list:
        ss = np.random.SeedSequence([self.master_seed, generation])
        return [int(s.generate_state(1)[0]) for s in ss.spawn(self.episodes)]

    def episode_return(self, theta, seed: int) -> float:
        pol = MLPPolicy(hidden=self.hidden).set_flat(theta)
        ep = make_episode(seed, self.phase, self.shape, self.n_robots, self.randomization,
                          mode=self.mode, arrangement=self.arrangement,
                          episode_length=self.episode_length)
        res = run_episode(ep, PolicyController(pol), self.weights, self.shaping, terminate=False)
        return float(np.mean(res.returns))

    def __call__(self, theta, generation: int) -> float:
        return float(np.mean([self.episode_return(theta, s) for s in self.seeds(generation)]))

    def evaluate(self, theta, seeds) -> float:
        return float(np.mean([self.episode_return(theta, s) for s in seeds]))
