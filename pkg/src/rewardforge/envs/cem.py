"""Cross-entropy method over linear policy parameters.

Plain diagonal-Gaussian CEM: sample a population around the current mean,
score every sample, refit mean and std on the top elite fraction, repeat.
The std is floored at 1e-3 so the search never collapses. Policy search for
a reward function scores candidates by the discounted sum of the combined
reward along a rollout; all candidates within one search share the same
seeded initial state so comparisons are apples to apples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dsl.evaluator import BoundReward
from ..seeds import derive_seed, generator
from .core import LinearPolicy, ToyEnv, Trajectory, rollout, rollout_batch

STD_FLOOR = 1e-3
INIT_STD = 1.0


@dataclass(frozen=True)
class SearchConfig:
    """CEM knobs: iterations, population size, elite fraction."""

    iters: int = 8
    pop: int = 32
    elite_frac: float = 0.25

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be at least 1")
        if self.pop < 4:
            raise ValueError("pop must be at least 4")
        if not 0.0 < self.elite_frac <= 0.5:
            raise ValueError("elite_frac must be in (0, 0.5]")

    @property
    def n_elite(self) -> int:
        return math.ceil(self.elite_frac * self.pop)

    def to_dict(self) -> dict:
        return {"iters": self.iters, "pop": self.pop,
                "elite_frac": self.elite_frac}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        return cls(iters=int(d["iters"]), pop=int(d["pop"]),
                   elite_frac=float(d["elite_frac"]))


@dataclass(frozen=True)
class FitnessStats:
    """Per-seed task fitness of a trained policy, with summary stats."""

    per_seed: tuple[float, ...]
    seeds: tuple[int, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def min(self) -> float:
        return float(np.min(self.per_seed))

    @property
    def max(self) -> float:
        return float(np.max(self.per_seed))

    def to_dict(self) -> dict:
        return {"per_seed": list(self.per_seed), "seeds": list(self.seeds),
                "mean": self.mean, "min": self.min, "max": self.max}


def cem_optimize(score_batch, dim: int, cfg: SearchConfig, seed: int
                 ) -> tuple[np.ndarray, list[dict]]:
    """Maximise score_batch: (pop, dim) array -> (pop,) scores.

    Elites persist across generations: each refit takes the top n_elite of
    the fresh samples pooled with the previous elite set, so on a
    deterministic objective the mean elite score never decreases. Returns
    the final elite mean and per-iteration stats (best score, mean elite
    score). Deterministic given the seed.
    """
    rng = generator(seed, "cem")
    mean = np.zeros(dim)
    std = np.full(dim, INIT_STD)
    history: list[dict] = []
    elite = np.zeros((0, dim))
    elite_scores = np.zeros(0)
    for _ in range(cfg.iters):
        samples = mean + std * rng.standard_normal((cfg.pop, dim))
        scores = np.asarray(score_batch(samples), dtype=float)
        pool = np.concatenate([samples, elite])
        pool_scores = np.concatenate([scores, elite_scores])
        order = np.argsort(-pool_scores, kind="stable")
        elite = pool[order[:cfg.n_elite]]
        elite_scores = pool_scores[order[:cfg.n_elite]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), STD_FLOOR)
        history.append({"best": float(pool_scores[order[0]]),
                        "elite_mean": float(elite_scores.mean())})
    return mean, history


def cem_search(env: ToyEnv, reward_eval, cfg: SearchConfig, seed: int
               ) -> LinearPolicy:
    """CEM policy search scoring candidates by reward_eval(trajectory).

    Every candidate in the search rolls out from the same seeded initial
    state (derived from the search seed), so the objective is stationary.
    """
    init_seed = derive_seed(seed, "search-init")
    dim = env.action_dim * env.state_dim + env.action_dim

    def score_batch(params: np.ndarray) -> np.ndarray:
        policies = [LinearPolicy.from_flat(p, env.state_dim, env.action_dim)
                    for p in params]
        trajs = rollout_batch(env, policies, [init_seed] * len(policies))
        return np.array([reward_eval(tr) for tr in trajs])

    mean, _ = cem_optimize(score_batch, dim, cfg, seed)
    return LinearPolicy.from_flat(mean, env.state_dim, env.action_dim)


def discounted_return(bound: BoundReward, traj: Trajectory, gamma: float
                      ) -> float:
    """Sum of gamma^t * r(s_t, a_t) over the executed steps."""
    if traj.steps == 0:
        return 0.0
    r = bound.combined(traj.states[:-1], traj.actions)
    weights = np.power(gamma, np.arange(traj.steps))
    return float(np.sum(weights * r))


def evaluate_reward(env: ToyEnv, bound: BoundReward, cfg: SearchConfig,
                    seeds: list[int]) -> FitnessStats:
    """Train one policy per seed on the shaped reward, score task fitness.

    Each seed drives an independent CEM search (and its shared initial
    state); fitness comes from rolling out the trained policy from that same
    search seed.
    """
    per_seed = []
    for s in seeds:
        policy = cem_search(
            env, lambda tr: discounted_return(bound, tr, env.gamma), cfg, s)
        traj = rollout(env, policy, derive_seed(s, "search-init"))
        per_seed.append(env.fitness(traj))
    return FitnessStats(per_seed=tuple(per_seed), seeds=tuple(int(s) for s in seeds))
