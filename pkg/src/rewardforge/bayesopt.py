"""Sequential model-based maximisation with expected improvement.

The loop is the classic one: seed the model with a Latin hypercube design,
then repeat fit / propose / evaluate until the evaluation budget is spent.
Proposals maximise EI over a scrambled Sobol candidate set plus coordinate
hill-climbing with a shrinking step, ties resolving to the lowest candidate
index. Objective failures are recorded as -inf and excluded from the model;
a trace where everything failed carries the empty_improvement flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InsufficientBudgetError
from .gp import GPModel, SearchSpace, ei_value, gp_fit
from .seeds import derive_seed, generator

N_CANDIDATES = 512
N_REFINE_ROUNDS = 8
REFINE_STEP0 = 0.1
REFINE_SHRINK = 3.0
_MAX_LINE_STEPS = 20


def default_init_evals(total: int) -> int:
    return min(max(2, math.ceil(total / 4)), total)


@dataclass(frozen=True)
class OptimizationBudget:
    """Evaluation budget: total objective calls and how many seed the design."""

    total_evals: int
    init_evals: int | None = None

    def __post_init__(self):
        if self.total_evals < 1:
            raise InsufficientBudgetError("total_evals must be at least 1")
        init = self.init_evals
        if init is None:
            init = default_init_evals(self.total_evals)
            object.__setattr__(self, "init_evals", init)
        if not 1 <= init <= self.total_evals:
            raise InsufficientBudgetError(
                f"init_evals must be in [1, total_evals], got {init}")


@dataclass
class BOTrace:
    """Evaluation log: points (as name -> value dicts), values, best-so-far."""

    entries: list[dict] = field(default_factory=list)
    empty_improvement: bool = False

    def record(self, point: dict[str, float], value: float) -> None:
        self.entries.append({
            "iteration": len(self.entries),
            "point": dict(point),
            "value": float(value),
        })

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def values(self) -> list[float]:
        return [e["value"] for e in self.entries]

    @property
    def best_value(self) -> float:
        return max(self.values) if self.entries else -math.inf

    @property
    def best_point(self) -> dict[str, float]:
        best = -math.inf
        out: dict[str, float] = {}
        for e in self.entries:
            if e["value"] > best:
                best = e["value"]
                out = e["point"]
        return dict(out)

    def to_dict(self) -> dict:
        return {"entries": [dict(e, point=dict(e["point"])) for e in self.entries],
                "empty_improvement": self.empty_improvement,
                "best_value": self.best_value,
                "best_point": self.best_point}


def latin_hypercube(space: SearchSpace, n: int, seed: int) -> np.ndarray:
    """n stratified points, one per stratum per dimension, strictly inside.

    Per dimension the n strata are permuted independently and the point falls
    uniformly inside its stratum, nudged off the boundary.
    """
    if n < 1:
        raise ValueError("need at least one point")
    rng = generator(seed, "lhs")
    d = space.ndim
    unit = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        offsets = np.clip(rng.random(n), 1e-12, 1.0 - 1e-12)
        unit[:, j] = (strata + offsets) / n
    return space.denormalize(unit)


def _sobol_unit(n: int, d: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=d, scramble=True, seed=seed)
    return sampler.random(n)


def _argmax_first(values: np.ndarray) -> int:
    """Index of the maximum, first occurrence on exact ties."""
    return int(np.argmax(values))


def propose_next(model: GPModel, space: SearchSpace, seed: int) -> np.ndarray:
    """Point (original units) maximising EI over Sobol candidates + refinement.

    512 scrambled Sobol candidates are scored in a batch; the best (lowest
    index on ties) seeds N_REFINE_ROUNDS of coordinate hill-climbing with a
    step that shrinks by REFINE_SHRINK each round. Moves happen only on
    strict EI improvement, so a flat EI surface returns the first candidate.
    """
    best_y = float(np.max(model.y))
    cands = _sobol_unit(N_CANDIDATES, space.ndim, derive_seed(seed, "sobol"))
    ei = ei_value(*_mu_sigma(model, cands), best_y)
    idx = _argmax_first(ei)
    x = cands[idx].copy()
    fx = float(ei[idx])
    for r in range(N_REFINE_ROUNDS):
        step = REFINE_STEP0 / (REFINE_SHRINK ** r)
        for j in range(space.ndim):
            for direction in (1.0, -1.0):
                moved = False
                for _ in range(_MAX_LINE_STEPS):
                    trial = x.copy()
                    trial[j] = min(1.0, max(0.0, trial[j] + direction * step))
                    if trial[j] == x[j]:
                        break
                    ft = float(ei_value(*_mu_sigma(model, trial[None, :]), best_y)[0])
                    if ft > fx:
                        x, fx = trial, ft
                        moved = True
                    else:
                        break
                if moved:
                    break  # this coordinate already improved one way
    return space.denormalize(x)


def _mu_sigma(model: GPModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, var = model.posterior(x)
    return mu, np.sqrt(var)


def bo_maximize(objective, space: SearchSpace, budget: OptimizationBudget,
                seed: int, noise: float = 1e-6) -> BOTrace:
    """Maximise ``objective`` (dict point -> float) with exactly
    budget.total_evals evaluations.

    Objective exceptions are swallowed: the point is logged with value -inf
    and never enters the GP. If no evaluation ever succeeds the trace is
    flagged empty_improvement.
    """
    trace = BOTrace()
    X_ok: list[np.ndarray] = []
    y_ok: list[float] = []

    def run(x_unit: np.ndarray) -> None:
        x = space.denormalize(np.clip(x_unit, 0.0, 1.0))
        point = space.point_dict(x)
        try:
            value = float(objective(point))
        except Exception:
            trace.record(point, -math.inf)
            return
        if not math.isfinite(value):
            trace.record(point, -math.inf)
            return
        trace.record(point, value)
        X_ok.append(np.clip(x_unit, 0.0, 1.0))
        y_ok.append(value)

    init = latin_hypercube(space, budget.init_evals, derive_seed(seed, "init"))
    for row in space.normalize(init):
        if len(trace) >= budget.total_evals:
            break
        run(row)

    fallback = generator(seed, "fallback")
    i = 0
    while len(trace) < budget.total_evals:
        if X_ok:
            model = gp_fit(np.array(X_ok), np.array(y_ok), noise)
            x = space.normalize(propose_next(model, space, derive_seed(seed, "propose", i)))
        else:
            x = fallback.random(space.ndim)
        run(x)
        i += 1

    if not X_ok:
        trace.empty_improvement = True
    return trace


def random_search(objective, space: SearchSpace, budget: OptimizationBudget,
                  seed: int) -> BOTrace:
    """Uniform random baseline with the same trace shape and budget."""
    trace = BOTrace()
    rng = generator(seed, "random-search")
    any_ok = False
    for _ in range(budget.total_evals):
        x = space.denormalize(rng.random(space.ndim))
        point = space.point_dict(x)
        try:
            value = float(objective(point))
        except Exception:
            trace.record(point, -math.inf)
            continue
        if not math.isfinite(value):
            trace.record(point, -math.inf)
            continue
        trace.record(point, value)
        any_ok = True
    if not any_ok:
        trace.empty_improvement = True
    return trace
