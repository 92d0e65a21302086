"""Bayesian decoupling optimization of composite reward functions.

Each term's hyperparameters are tuned against that term's own aspect
metric with a budget proportional to its uncertainty score; the
recombination weights are then tuned against task fitness.  Every
objective evaluation also probes task fitness, so runs can later be
compared by evaluations-to-threshold regardless of mode.

Ablation modes share this module: ``monolithic-bo`` optimizes all
hyperparameters and weights in one joint space, ``llm-tune`` swaps the
Bayesian optimizer for provider-proposed values at identical budgets,
and ``coupled-theta`` trains term stages on the full composite reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bayesopt import BOTrace, OptimizationBudget, bo_maximize
from .dsl.evaluator import BoundReward
from .dsl.nodes import RewardFunction, RewardTerm
from .dsl.printer import print_canonical
from .errors import InsufficientBudgetError
from .envs.cem import SearchConfig, cem_search, discounted_return
from .envs.core import ToyEnv, rollout
from .gp import SearchSpace
from .seeds import derive_seed

MODES = ("cour", "monolithic-bo", "no-cuq", "llm-tune", "coupled-theta")

DEFAULT_EVAL_SEEDS = (0, 1, 2, 3, 4)


def allocate_budget(u_scores: dict[str, float], total: int,
                    min_evals: int = 4) -> dict[str, int]:
    """Split an evaluation budget proportionally to uncertainty.

    Every key receives min_evals; the remainder is apportioned to u by the
    largest-remainder method (ties broken by key insertion order).  With
    all-zero scores the remainder is split equally.  The result always sums
    to total exactly.
    """
    names = list(u_scores)
    if not names:
        raise ValueError("u_scores must not be empty")
    for name, u in u_scores.items():
        if not math.isfinite(u) or u < 0.0:
            raise ValueError(f"u score for {name} must be finite and >= 0, got {u}")
    n = len(names)
    if total < n * min_evals:
        raise InsufficientBudgetError(
            f"budget {total} cannot give {n} terms {min_evals} evaluations each")

    remainder = total - n * min_evals
    mass = sum(u_scores.values())
    if mass == 0.0:
        shares = {name: remainder / n for name in names}
    else:
        shares = {name: remainder * u / mass for name, u in u_scores.items()}

    out = {name: min_evals + int(math.floor(shares[name])) for name in names}
    leftover = total - sum(out.values())
    # largest fractional part first; insertion order breaks exact ties
    order = sorted(range(n), key=lambda i: -(shares[names[i]] - math.floor(shares[names[i]])))
    for i in order[:leftover]:
        out[names[i]] += 1
    assert sum(out.values()) == total
    return out


def normalize_weights(raw: dict[str, float]) -> dict[str, float]:
    """Project raw box values onto the simplex; all-zero becomes uniform."""
    for name, v in raw.items():
        if not math.isfinite(v) or v < 0.0:
            raise ValueError(f"weight for {name} must be finite and >= 0, got {v}")
    mass = sum(raw.values())
    if mass == 0.0:
        return {name: 1.0 / len(raw) for name in raw}
    return {name: v / mass for name, v in raw.items()}


@dataclass(frozen=True)
class TermObjectiveBinding:
    """Which aspect metric a term stage optimizes, and on which seeds."""

    term_name: str
    aspect: str
    eval_seeds: tuple[int, ...] = DEFAULT_EVAL_SEEDS

    def __post_init__(self):
        if not self.eval_seeds:
            raise ValueError("eval_seeds must not be empty")


@dataclass(frozen=True)
class BDOConfig:
    total_evals: int = 30
    min_evals: int = 4
    weight_budget: int | None = None  # None: ceil(total / 3)
    eval_seeds: tuple[int, ...] = DEFAULT_EVAL_SEEDS
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        if self.total_evals < 1:
            raise ValueError("total_evals must be >= 1")
        if self.min_evals < 1:
            raise ValueError("min_evals must be >= 1")
        if self.weight_budget is not None and self.weight_budget < 0:
            raise ValueError("weight_budget must be >= 0")
        if not self.eval_seeds:
            raise ValueError("eval_seeds must not be empty")

    def resolved_weight_budget(self) -> int:
        if self.weight_budget is not None:
            return self.weight_budget
        return math.ceil(self.total_evals / 3)

    def to_dict(self) -> dict:
        return {
            "total_evals": self.total_evals,
            "min_evals": self.min_evals,
            "weight_budget": self.weight_budget,
            "eval_seeds": list(self.eval_seeds),
            "search": self.search.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BDOConfig":
        raw = dict(raw)
        raw["eval_seeds"] = tuple(raw.get("eval_seeds", DEFAULT_EVAL_SEEDS))
        if "search" in raw:
            raw["search"] = SearchConfig.from_dict(raw["search"])
        return cls(**raw)


@dataclass(frozen=True)
class BDOPlan:
    """How the budget was split before any evaluation ran."""

    u_scores: dict[str, float]
    term_budgets: dict[str, int]
    weight_budget: int
    joint_budget: int
    min_evals: int
    total: int

    def to_dict(self) -> dict:
        return {
            "u_scores": dict(self.u_scores),
            "term_budgets": dict(self.term_budgets),
            "weight_budget": self.weight_budget,
            "joint_budget": self.joint_budget,
            "min_evals": self.min_evals,
            "total": self.total,
        }


@dataclass
class OptimizedReward:
    """Final composite reward with everything the optimizer learned."""

    reward: RewardFunction
    thetas: dict[str, dict[str, float]]
    alphas: dict[str, float]
    plan: BDOPlan
    term_traces: dict[str, BOTrace]
    weight_trace: BOTrace
    joint_trace: BOTrace | None
    probe: list[dict]
    total_evaluations: int
    notes: list[str]

    def probe_values(self) -> list[float]:
        return [e["fitness"] for e in self.probe]

    def to_dict(self) -> dict:
        return {
            "reward": print_canonical(self.reward),
            "thetas": {k: dict(v) for k, v in self.thetas.items()},
            "alphas": dict(self.alphas),
            "plan": self.plan.to_dict(),
            "term_traces": {k: v.to_dict() for k, v in self.term_traces.items()},
            "weight_trace": self.weight_trace.to_dict(),
            "joint_trace": self.joint_trace.to_dict() if self.joint_trace else None,
            "probe": [dict(e) for e in self.probe],
            "total_evaluations": self.total_evaluations,
            "notes": list(self.notes),
        }


def _check_theta(term: RewardTerm, theta: dict[str, float]) -> None:
    declared = {h.name for h in term.hypers}
    if set(theta) != declared:
        raise ValueError(
            f"theta keys {sorted(theta)} do not match declared hypers {sorted(declared)}")
    for h in term.hypers:
        v = theta[h.name]
        if not math.isfinite(v) or not h.lo <= v <= h.hi:
            raise ValueError(f"{h.name}={v} outside [{h.lo}, {h.hi}]")


def _policy_stats(env: ToyEnv, bound: BoundReward, search_cfg: SearchConfig,
                  stage_seed: int, eval_seeds: tuple[int, ...], aspect: str | None
                  ) -> tuple[float, float]:
    """Train one policy on the bound reward, return (aspect mean, fitness mean).

    The CEM seed is fixed per stage so the objective is a deterministic
    function of the reward parameters alone.  The trained policy is scored
    by fresh rollouts from the per-seed initial states used everywhere else.
    """
    policy = cem_search(env, lambda tr: discounted_return(bound, tr, env.gamma),
                        search_cfg, stage_seed)
    aspect_vals = []
    fitness_vals = []
    for s in eval_seeds:
        traj = rollout(env, policy, derive_seed(s, "search-init"))
        if aspect is not None:
            aspect_vals.append(env.aspect_metric(aspect, traj))
        fitness_vals.append(env.fitness(traj))
    fitness = float(np.mean(fitness_vals))
    metric = float(np.mean(aspect_vals)) if aspect is not None else fitness
    return metric, fitness


def term_objective(term: RewardTerm, binding: TermObjectiveBinding, env: ToyEnv,
                   search_cfg: SearchConfig, stage_seed: int,
                   probe: list[dict] | None = None,
                   full_reward: RewardFunction | None = None):
    """Build the deterministic objective for one term stage.

    The returned callable maps a theta dict to the mean aspect metric of a
    policy trained on the term alone (or on full_reward with only this
    term's theta varying, for the coupled ablation).  Every call appends a
    task-fitness probe entry; failed evaluations probe 0.0 and re-raise.
    """
    if term.name != binding.term_name:
        raise ValueError(f"binding is for {binding.term_name}, got term {term.name}")
    if full_reward is None:
        target = RewardFunction(terms=(term,), weights=(1.0,), signature=env.signature)
    else:
        target = full_reward

    def objective(theta: dict[str, float]) -> float:
        _check_theta(term, theta)
        bound = BoundReward(target, thetas={term.name: dict(theta)})
        try:
            metric, fitness = _policy_stats(env, bound, search_cfg, stage_seed,
                                            binding.eval_seeds, binding.aspect)
        except Exception:
            if probe is not None:
                probe.append({"stage": term.name, "fitness": 0.0})
            raise
        if probe is not None:
            probe.append({"stage": term.name, "fitness": fitness})
        return metric

    return objective


def _hyper_space(term: RewardTerm) -> SearchSpace:
    return SearchSpace(tuple((h.name, h.lo, h.hi) for h in term.hypers))


def _proposal_stage(objective, space: SearchSpace, provider, count: int,
                    context_key: str) -> BOTrace:
    """Evaluate provider-proposed points in place of Bayesian optimization."""
    points = provider.propose_values(
        tuple(space.names), tuple(float(v) for v in space.lows()),
        tuple(float(v) for v in space.highs()), count, context_key)
    trace = BOTrace()
    for point in points:
        try:
            value = objective(point)
        except Exception:
            trace.record(point, float("-inf"))
            continue
        if not math.isfinite(value):
            trace.record(point, float("-inf"))
            continue
        trace.record(point, value)
    if trace.entries and all(e["value"] == float("-inf") for e in trace.entries):
        trace.empty_improvement = True
    return trace


def optimize_term(term: RewardTerm, binding: TermObjectiveBinding, env: ToyEnv,
                  budget: int, seed: int, search_cfg: SearchConfig | None = None,
                  probe: list[dict] | None = None,
                  full_reward: RewardFunction | None = None,
                  provider=None) -> tuple[dict[str, float], BOTrace]:
    """Tune one term's hyperparameters against its aspect metric.

    A term with no hyperparameters is skipped outright: empty theta, empty
    trace, no evaluations.  When a provider is given its proposals replace
    the optimizer at the same budget.
    """
    if not term.hypers:
        return {}, BOTrace()
    if budget < 1:
        raise ValueError("budget must be >= 1 for a term with hyperparameters")
    search_cfg = search_cfg or SearchConfig()
    space = _hyper_space(term)
    objective = term_objective(term, binding, env, search_cfg,
                               stage_seed=derive_seed(seed, "cem", term.name),
                               probe=probe, full_reward=full_reward)
    if provider is not None:
        trace = _proposal_stage(objective, space, provider, budget,
                                context_key=f"{env.name}|{term.name}")
    else:
        trace = bo_maximize(objective, space, OptimizationBudget(budget),
                            derive_seed(seed, "bo", term.name))
    theta = trace.best_point if not trace.empty_improvement else term.default_theta()
    return theta, trace


def optimize_weights(rf: RewardFunction, thetas: dict[str, dict[str, float]],
                     env: ToyEnv, budget: int, seed: int,
                     eval_seeds: tuple[int, ...] = DEFAULT_EVAL_SEEDS,
                     search_cfg: SearchConfig | None = None,
                     probe: list[dict] | None = None,
                     provider=None) -> tuple[dict[str, float], BOTrace]:
    """Tune recombination weights against task fitness.

    Candidates live in [0, 1]^n and are normalized onto the simplex before
    every evaluation, so scaled copies of a candidate are the same reward.
    A single-term function needs no search: alpha = 1.0, empty trace.
    """
    names = [t.name for t in rf.terms]
    if len(names) == 1:
        return {names[0]: 1.0}, BOTrace()
    if budget < 1:
        # explicit zero-budget stage: keep the generation weights, normalized
        return normalize_weights(dict(zip(names, rf.weights))), BOTrace()
    search_cfg = search_cfg or SearchConfig()
    space = SearchSpace(tuple((name, 0.0, 1.0) for name in names))
    stage_seed = derive_seed(seed, "cem", "weights")

    def objective(point: dict[str, float]) -> float:
        alpha = normalize_weights(point)
        weights = tuple(alpha[name] for name in names)
        bound = BoundReward(rf, thetas=thetas, weights=weights)
        try:
            _, fitness = _policy_stats(env, bound, search_cfg, stage_seed,
                                       eval_seeds, aspect=None)
        except Exception:
            if probe is not None:
                probe.append({"stage": "weights", "fitness": 0.0})
            raise
        if probe is not None:
            probe.append({"stage": "weights", "fitness": fitness})
        return fitness

    if provider is not None:
        trace = _proposal_stage(objective, space, provider, budget,
                                context_key=f"{env.name}|weights")
    else:
        trace = bo_maximize(objective, space, OptimizationBudget(budget),
                            derive_seed(seed, "bo", "weights"))
    if trace.empty_improvement or not trace.entries:
        alpha = {name: 1.0 / len(names) for name in names}
    else:
        alpha = normalize_weights(trace.best_point)
    return alpha, trace


def _u_by_term(rf: RewardFunction, u_scores: dict) -> dict[str, float]:
    """Map per-aspect uncertainty onto terms; absent aspects score zero."""
    out = {}
    for term in rf.terms:
        raw = u_scores.get(term.aspect_tag, 0.0)
        out[term.name] = float(getattr(raw, "u", raw))
    return out


def _finalize(rf: RewardFunction, alphas: dict[str, float]) -> RewardFunction:
    weights = tuple(alphas[t.name] for t in rf.terms)
    return RewardFunction(terms=rf.terms, weights=weights, signature=rf.signature)


def run_bdo(rf: RewardFunction, u_scores: dict, env: ToyEnv, cfg: BDOConfig,
            seed: int, provider=None, coupled: bool = False) -> OptimizedReward:
    """Decoupled optimization: per-term stages, then the weight stage.

    u_scores maps aspect tags to uncertainty (floats or UncertaintyReport);
    missing aspects count as zero, so an empty dict yields an equal split.
    The evaluation count always equals the configured budget exactly,
    except in the fully degenerate no-stage case, which is noted.
    """
    terms = list(rf.terms)
    tunable = [t for t in terms if t.hypers]
    notes: list[str] = []
    probe: list[dict] = []

    if len(terms) == 1:
        weight_budget = 0
        if not tunable:
            notes.append("single term without hyperparameters: nothing to optimize")
    elif not tunable:
        weight_budget = cfg.total_evals
        notes.append("no tunable hyperparameters: full budget moved to the weight stage")
    else:
        weight_budget = cfg.resolved_weight_budget()
    term_total = cfg.total_evals - weight_budget if tunable else 0

    u_map = _u_by_term(rf, u_scores)
    allocation = {}
    if tunable:
        allocation = allocate_budget({t.name: u_map[t.name] for t in tunable},
                                     term_total, cfg.min_evals)

    thetas: dict[str, dict[str, float]] = {}
    term_traces: dict[str, BOTrace] = {}
    for term in terms:
        if not term.hypers:
            thetas[term.name] = {}
            term_traces[term.name] = BOTrace()
            continue
        binding = TermObjectiveBinding(term.name, term.aspect_tag, cfg.eval_seeds)
        theta, trace = optimize_term(
            term, binding, env, allocation[term.name], seed,
            search_cfg=cfg.search, probe=probe,
            full_reward=rf if coupled else None, provider=provider)
        if trace.empty_improvement:
            notes.append(f"term {term.name}: every evaluation failed; keeping defaults")
        thetas[term.name] = theta
        term_traces[term.name] = trace

    if len(terms) > 1:
        alphas, weight_trace = optimize_weights(
            rf, thetas, env, weight_budget, seed, eval_seeds=cfg.eval_seeds,
            search_cfg=cfg.search, probe=probe, provider=provider)
        if weight_trace.empty_improvement:
            notes.append("weight stage: every evaluation failed; keeping uniform weights")
    else:
        alphas, weight_trace = {terms[0].name: 1.0}, BOTrace()

    total = sum(len(t) for t in term_traces.values()) + len(weight_trace)
    plan = BDOPlan(u_scores=u_map, term_budgets=allocation,
                   weight_budget=weight_budget if len(terms) > 1 else 0,
                   joint_budget=0, min_evals=cfg.min_evals, total=cfg.total_evals)
    return OptimizedReward(
        reward=_finalize(rf, alphas), thetas=thetas, alphas=alphas, plan=plan,
        term_traces=term_traces, weight_trace=weight_trace, joint_trace=None,
        probe=probe, total_evaluations=total, notes=notes)


def run_monolithic(rf: RewardFunction, env: ToyEnv, cfg: BDOConfig,
                   seed: int) -> OptimizedReward:
    """Joint optimization over every hyperparameter and weight at once.

    One trace, no per-term stages; the objective is task fitness of a
    policy trained on the fully parameterized composite reward.
    """
    terms = list(rf.terms)
    notes: list[str] = []
    probe: list[dict] = []
    dims: list[tuple[str, float, float]] = []
    for t in terms:
        for h in t.hypers:
            dims.append((f"{t.name}.{h.name}", h.lo, h.hi))
    if len(terms) > 1:
        for t in terms:
            dims.append((f"w.{t.name}", 0.0, 1.0))

    def split(point: dict[str, float]) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
        thetas = {t.name: {h.name: point[f"{t.name}.{h.name}"] for h in t.hypers}
                  for t in terms}
        if len(terms) > 1:
            alphas = normalize_weights({t.name: point[f"w.{t.name}"] for t in terms})
        else:
            alphas = {terms[0].name: 1.0}
        return thetas, alphas

    if not dims:
        notes.append("single term without hyperparameters: nothing to optimize")
        alphas = {terms[0].name: 1.0}
        plan = BDOPlan(u_scores={t.name: 0.0 for t in terms}, term_budgets={},
                       weight_budget=0, joint_budget=0, min_evals=cfg.min_evals,
                       total=cfg.total_evals)
        return OptimizedReward(
            reward=_finalize(rf, alphas),
            thetas={t.name: {} for t in terms}, alphas=alphas, plan=plan,
            term_traces={}, weight_trace=BOTrace(), joint_trace=BOTrace(),
            probe=probe, total_evaluations=0, notes=notes)

    space = SearchSpace(tuple(dims))
    stage_seed = derive_seed(seed, "cem", "joint")

    def objective(point: dict[str, float]) -> float:
        thetas, alphas = split(point)
        weights = tuple(alphas[t.name] for t in terms)
        bound = BoundReward(rf, thetas=thetas, weights=weights)
        try:
            _, fitness = _policy_stats(env, bound, cfg.search, stage_seed,
                                       cfg.eval_seeds, aspect=None)
        except Exception:
            probe.append({"stage": "joint", "fitness": 0.0})
            raise
        probe.append({"stage": "joint", "fitness": fitness})
        return fitness

    trace = bo_maximize(objective, space, OptimizationBudget(cfg.total_evals),
                        derive_seed(seed, "bo", "joint"))
    if trace.empty_improvement:
        notes.append("joint stage: every evaluation failed; keeping defaults")
        thetas = rf.default_thetas()
        alphas = ({terms[0].name: 1.0} if len(terms) == 1 else
                  {t.name: 1.0 / len(terms) for t in terms})
    else:
        thetas, alphas = split(trace.best_point)

    plan = BDOPlan(u_scores={t.name: 0.0 for t in terms}, term_budgets={},
                   weight_budget=0, joint_budget=cfg.total_evals,
                   min_evals=cfg.min_evals, total=cfg.total_evals)
    return OptimizedReward(
        reward=_finalize(rf, alphas), thetas=thetas, alphas=alphas, plan=plan,
        term_traces={}, weight_trace=BOTrace(), joint_trace=trace, probe=probe,
        total_evaluations=len(trace), notes=notes)


def optimize_reward(rf: RewardFunction, u_scores: dict, env: ToyEnv,
                    cfg: BDOConfig, seed: int, mode: str = "cour",
                    provider=None) -> OptimizedReward:
    """Mode dispatcher used by the pipeline."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "monolithic-bo":
        return run_monolithic(rf, env, cfg, seed)
    if mode == "llm-tune":
        if provider is None:
            raise ValueError("llm-tune mode needs a provider")
        return run_bdo(rf, u_scores, env, cfg, seed, provider=provider)
    if mode == "coupled-theta":
        return run_bdo(rf, u_scores, env, cfg, seed, coupled=True)
    # cour and no-cuq share the decoupled engine; no-cuq differs upstream
    # (no uncertainty reports -> equal split)
    return run_bdo(rf, u_scores, env, cfg, seed)
