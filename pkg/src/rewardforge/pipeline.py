"""End-to-end reward design runs: generate, score, optimize, validate.

A run is fully described by a RunConfig; everything downstream is derived
from its master seed, so two offline runs of the same config produce
reports that differ only in wall-clock fields.  Stage failures yield a
partial report flagged incomplete instead of losing the run.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from statistics import median

from .decoupling import MODES, BDOConfig, optimize_reward
from .dsl.evaluator import BoundReward
from .dsl.nodes import RewardFunction
from .dsl.parser import parse
from .dsl.printer import print_canonical, print_term
from .envs import canonical_env_name, make_env, reference_reward
from .envs.cem import FitnessStats, cem_search, discounted_return, evaluate_reward
from .envs.core import ToyEnv, rollout
from .errors import ConfigError, PipelineError, ProviderError, RewardForgeError
from .library import ComponentLibrary
from .providers import ProviderConfig, TaskDescription, make_provider, prompt_hashes
from .seeds import derive_seed
from .uncertainty import ComponentSample, CUQConfig, run_cuq
from .envs.cem import SearchConfig

DEFAULT_TASKS = {
    "point-mass-velocity":
        "Drive the point mass so it cruises at the target velocity "
        "with steady, smooth control.",
    "grid-reach":
        "Reach the far corner of the grid quickly and without wasted steps.",
    "balance-pole":
        "Keep the pole balanced upright while the cart stays near the center.",
}

# reference fitness is deterministic per (env, search cfg, seeds); cache it
_REFERENCE_CACHE: dict[tuple, FitnessStats] = {}

_VOLATILE_KEYS = frozenset(
    {"wall_clock_s", "latency_s", "report_path", "out_dir", "library_path",
     "library_file"})


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run depends on.

    The master seed drives generation, optimization, and evaluation through
    derived seed paths; the provider config's own seed is mixed with the
    master seed so distinct runs sample distinct candidates.
    """

    env: str
    seed: int = 0
    mode: str = "cour"
    task: str | None = None
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    cuq: CUQConfig = field(default_factory=CUQConfig)
    bdo: BDOConfig = field(default_factory=BDOConfig)
    out_dir: str = "runs"
    library_path: str | None = None
    offline: bool = False
    dump_trajectories: bool = False

    def __post_init__(self):
        try:
            canonical = canonical_env_name(self.env)
        except Exception as exc:
            raise ConfigError(f"unknown env {self.env!r}") from exc
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.task is None:
            object.__setattr__(self, "task", DEFAULT_TASKS[canonical])

    @property
    def canonical_env(self) -> str:
        return canonical_env_name(self.env)

    @property
    def report_stem(self) -> str:
        return f"{self.canonical_env}_{self.mode}_{self.seed}"

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "seed": self.seed,
            "mode": self.mode,
            "task": self.task,
            "provider": self.provider.to_dict(),
            "cuq": self.cuq.to_dict(),
            "bdo": self.bdo.to_dict(),
            "out_dir": self.out_dir,
            "library_path": self.library_path,
            "offline": self.offline,
            "dump_trajectories": self.dump_trajectories,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        known = {"env", "seed", "mode", "task", "provider", "cuq", "bdo",
                 "out_dir", "library_path", "offline", "dump_trajectories"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "env" not in raw:
            raise ConfigError("config must name an env")
        data = dict(raw)
        try:
            if "provider" in data:
                data["provider"] = ProviderConfig.from_dict(data["provider"])
            if "cuq" in data:
                data["cuq"] = CUQConfig.from_dict(data["cuq"])
            if "bdo" in data:
                data["bdo"] = BDOConfig.from_dict(data["bdo"])
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc


@dataclass
class RunReport:
    """Artifact of one pipeline run; everything needed to audit or redo it."""

    config: dict
    prompt_hashes: dict
    env: str
    mode: str
    seed: int
    generation: dict = field(default_factory=dict)
    uncertainty: dict = field(default_factory=dict)
    bdo: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    validation: dict = field(default_factory=dict)
    library_file: str | None = None
    total_evaluations: int = 0
    provider_calls: int = 0
    wall_clock_s: float = 0.0
    incomplete: bool = False
    failed_stage: str | None = None
    error: str | None = None
    error_kind: str | None = None
    report_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "prompt_hashes": self.prompt_hashes,
            "env": self.env,
            "mode": self.mode,
            "seed": self.seed,
            "generation": self.generation,
            "uncertainty": self.uncertainty,
            "bdo": self.bdo,
            "final": self.final,
            "validation": self.validation,
            "library_file": self.library_file,
            "total_evaluations": self.total_evaluations,
            "provider_calls": self.provider_calls,
            "wall_clock_s": self.wall_clock_s,
            "incomplete": self.incomplete,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "error_kind": self.error_kind,
            "report_path": self.report_path,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunReport":
        return cls(**raw)


def strip_volatile(value):
    """Copy of a report with timing and path fields removed, recursively."""
    if isinstance(value, dict):
        return {k: strip_volatile(v) for k, v in value.items()
                if k not in _VOLATILE_KEYS}
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def _component_batches(sources: list[str], env: ToyEnv
                       ) -> dict[str, list[ComponentSample]]:
    """Group term blocks from generated sources by aspect."""
    batches: dict[str, list[ComponentSample]] = {a: [] for a in env.aspect_names}
    for src in sources:
        rf = parse(src, env.signature)
        for term in rf.terms:
            if term.aspect_tag in batches:
                batches[term.aspect_tag].append(ComponentSample(
                    term=term, source=print_term(term), origin="generated"))
    for aspect, batch in batches.items():
        if not batch:
            raise PipelineError("uncertainty",
                                f"generation produced no term for aspect {aspect!r}")
    return batches


def _assemble(reps: dict[str, ComponentSample], env: ToyEnv) -> RewardFunction:
    """Combine one representative per aspect into an unweighted composite."""
    terms = [reps[a].term for a in env.aspect_names]
    names = [t.name for t in terms]
    if len(set(names)) != len(names):
        raise PipelineError("optimize", f"duplicate term names across aspects: {names}")
    return RewardFunction(terms=tuple(terms), weights=tuple(1.0 for _ in terms),
                          signature=env.signature)


def validation_stats(env: ToyEnv, bound: BoundReward, search_cfg: SearchConfig,
                     eval_seeds, collect: bool = False):
    """Per-seed CEM training + rollout, exactly as evaluate_reward does it.

    Returns (FitnessStats, trajectories); trajectories are only collected
    when asked, keyed by eval seed.
    """
    per_seed = []
    trajs = {}
    for s in eval_seeds:
        policy = cem_search(env, lambda tr: discounted_return(bound, tr, env.gamma),
                            search_cfg, s)
        traj = rollout(env, policy, derive_seed(s, "search-init"))
        per_seed.append(env.fitness(traj))
        if collect:
            trajs[int(s)] = traj
    stats = FitnessStats(per_seed=tuple(per_seed), seeds=tuple(int(s) for s in eval_seeds))
    return stats, trajs


def reference_fitness(env: ToyEnv, search_cfg: SearchConfig, eval_seeds) -> FitnessStats:
    """Fitness of the hand-written reference reward; memoized per setup."""
    key = (env.name, search_cfg.iters, search_cfg.pop, search_cfg.elite_frac,
           tuple(int(s) for s in eval_seeds))
    if key not in _REFERENCE_CACHE:
        bound = BoundReward(reference_reward(env))
        _REFERENCE_CACHE[key] = evaluate_reward(env, bound, search_cfg,
                                                list(eval_seeds))
    return _REFERENCE_CACHE[key]


def evaluations_to_threshold(values: list[float], threshold: float,
                             budget: int) -> tuple[int, bool]:
    """First 1-based evaluation index whose running best reaches threshold.

    Runs that never reach it are censored at budget + 1.
    """
    best = float("-inf")
    for i, v in enumerate(values, start=1):
        best = max(best, v)
        if best >= threshold:
            return i, False
    return budget + 1, True


def _classify(exc: Exception) -> str:
    if isinstance(exc, ProviderError):
        return "provider"
    if isinstance(exc, ConfigError):
        return "config"
    return "runtime"


def _write_report(report: RunReport, cfg: RunConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, cfg.report_stem + ".json")
    report.report_path = path
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Execute the four pipeline steps and write the report JSON.

    Any stage error is captured into a partial report flagged incomplete
    (with the stage name and error kind) rather than raised, so callers
    can always inspect what happened; setup errors that indicate a bad
    config still raise ConfigError.
    """
    t0 = time.perf_counter()
    report = RunReport(config=cfg.to_dict(), prompt_hashes=prompt_hashes(),
                       env=cfg.canonical_env, mode=cfg.mode, seed=cfg.seed)
    stage = "setup"
    try:
        env = make_env(cfg.env)
        # distinct master seeds must sample distinct candidates, so the
        # provider seed mixes the master seed with the configured one
        provider_cfg = replace(cfg.provider,
                               seed=derive_seed(cfg.seed, "provider", cfg.provider.seed))
        provider = make_provider(provider_cfg, offline=cfg.offline)

        os.makedirs(cfg.out_dir, exist_ok=True)
        if cfg.library_path is not None:
            lib_path = cfg.library_path
        else:
            # per-run store: wipe leftovers so reruns start fresh
            lib_path = os.path.join(cfg.out_dir, cfg.report_stem + "_library.jsonl")
            for p in (lib_path, lib_path + ".count"):
                if os.path.exists(p):
                    os.remove(p)
        library = ComponentLibrary(lib_path)
        report.library_file = lib_path

        stage = "generate"
        task = TaskDescription(text=cfg.task, env_name=env.name,
                               signature=env.signature, aspects=env.aspect_names)
        gen = provider.generate_reward(task, cfg.cuq.n_samples)
        report.generation = {"sources": list(gen.sources),
                             "metadata": dict(gen.metadata)}
        report.provider_calls = 1

        stage = "uncertainty"
        if cfg.mode == "no-cuq":
            first = parse(gen.sources[0], env.signature)
            reps = {t.aspect_tag: ComponentSample(term=t, source=print_term(t),
                                                  origin="generated")
                    for t in first.terms}
            missing = [a for a in env.aspect_names if a not in reps]
            if missing:
                raise PipelineError(stage, f"first sample lacks aspects {missing}")
            report.uncertainty = {}
            u_scores: dict[str, float] = {}
        else:
            batches = _component_batches(gen.sources, env)
            cuq = run_cuq(batches, library, provider, task, cfg.cuq)
            reps = cuq.representatives
            report.uncertainty = cuq.to_dict()
            report.provider_calls += cuq.provider_calls()
            u_scores = {a: r.u for a, r in cuq.final_reports.items()}

        stage = "optimize"
        rf = _assemble(reps, env)
        optimized = optimize_reward(rf, u_scores, env, cfg.bdo,
                                    derive_seed(cfg.seed, "bdo"),
                                    mode=cfg.mode, provider=provider)
        report.bdo = optimized.to_dict()
        report.total_evaluations = optimized.total_evaluations
        report.final = {
            "source": print_canonical(optimized.reward),
            "thetas": {k: dict(v) for k, v in optimized.thetas.items()},
            "alphas": dict(optimized.alphas),
        }

        stage = "validate"
        bound = BoundReward(optimized.reward, thetas=optimized.thetas)
        stats, trajs = validation_stats(env, bound, cfg.bdo.search,
                                        cfg.bdo.eval_seeds,
                                        collect=cfg.dump_trajectories)
        report.validation = stats.to_dict()
        if cfg.dump_trajectories:
            tpath = os.path.join(cfg.out_dir, cfg.report_stem + "_trajectories.json")
            with open(tpath, "w", encoding="utf-8") as fh:
                json.dump({str(s): t.to_dict() for s, t in trajs.items()},
                          fh, indent=2, sort_keys=True)
                fh.write("\n")
    except ConfigError:
        raise
    except Exception as exc:
        report.incomplete = True
        report.failed_stage = stage
        report.error = f"{type(exc).__name__}: {exc}"
        report.error_kind = _classify(exc)

    report.wall_clock_s = time.perf_counter() - t0
    _write_report(report, cfg)
    return report


def validate_report(report: RunReport | dict | str) -> tuple[bool, list[str]]:
    """Re-run a report's config and compare everything non-volatile.

    Accepts a RunReport, its dict form, or a path to the JSON file.
    Returns (ok, list of differing paths).
    """
    if isinstance(report, str):
        with open(report, encoding="utf-8") as fh:
            original = json.load(fh)
    elif isinstance(report, RunReport):
        original = report.to_dict()
    else:
        original = dict(report)

    cfg = RunConfig.from_dict(original["config"])
    import tempfile
    with tempfile.TemporaryDirectory(prefix="rf-validate-") as td:
        redone = run_pipeline(replace(cfg, out_dir=td))
    diffs: list[str] = []
    _diff(strip_volatile(original), strip_volatile(redone.to_dict()), "", diffs)
    return (not diffs, diffs)


def _diff(a, b, path: str, out: list[str]) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            if key not in a or key not in b:
                out.append(f"{path}/{key} (missing on one side)")
            else:
                _diff(a[key], b[key], f"{path}/{key}", out)
        return
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(f"{path} (length {len(a)} vs {len(b)})")
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _diff(x, y, f"{path}[{i}]", out)
        return
    if a != b:
        out.append(path or "/")


# ---------------------------------------------------------------------------
# study drivers: ablations and the sampling sweep


@dataclass
class AblationResult:
    """Grid of runs over (env, mode, seed) plus per-env thresholds."""

    rows: list[dict]
    thresholds: dict[str, float]
    reference: dict[str, dict]
    budget: int

    def cells(self, env: str | None = None, mode: str | None = None) -> list[dict]:
        return [r for r in self.rows
                if (env is None or r["env"] == env)
                and (mode is None or r["mode"] == mode)]

    def median_fitness(self, mode: str, env: str | None = None) -> float:
        vals = [r["fitness"] for r in self.cells(env, mode) if not r["failed"]]
        return median(vals) if vals else float("nan")

    def median_evals(self, mode: str, env: str | None = None) -> float:
        vals = [r["evals_to_threshold"] for r in self.cells(env, mode)
                if not r["failed"]]
        return median(vals) if vals else float("nan")

    def wins(self, mode_a: str, mode_b: str) -> tuple[int, int]:
        """Cells where mode_a's final fitness >= mode_b's, out of shared cells."""
        by_key = {(r["env"], r["seed"]): r for r in self.cells(mode=mode_b)}
        won = total = 0
        for r in self.cells(mode=mode_a):
            other = by_key.get((r["env"], r["seed"]))
            if other is None or r["failed"] or other["failed"]:
                continue
            total += 1
            if r["fitness"] >= other["fitness"]:
                won += 1
        return won, total

    def to_dict(self) -> dict:
        return {
            "rows": [dict(r) for r in self.rows],
            "thresholds": dict(self.thresholds),
            "reference": {k: dict(v) for k, v in self.reference.items()},
            "budget": self.budget,
        }

    def to_csv(self, path: str) -> None:
        cols = ["env", "mode", "seed", "fitness", "evals_to_threshold",
                "censored", "failed", "report_path"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(str(r[c]) for c in cols) + "\n")


def _run_cell(cfg: RunConfig) -> tuple[RunReport, dict]:
    report = run_pipeline(cfg)
    row = {
        "env": report.env,
        "mode": report.mode,
        "seed": report.seed,
        "failed": report.incomplete,
        "fitness": (report.validation.get("mean") if not report.incomplete else None),
        "report_path": report.report_path,
    }
    return report, row


def run_ablation_suite(base: RunConfig, modes: list[str], seeds: list[int],
                       envs: list[str] | None = None) -> AblationResult:
    """Run every (env, mode, seed) cell and attach threshold statistics.

    Needs at least two modes and three seeds to say anything; failed cells
    are kept in the table, flagged, and excluded from medians.
    """
    if len(modes) < 2:
        raise ConfigError("ablation needs at least two modes")
    if len(set(modes)) != len(modes):
        raise ConfigError("ablation modes must be distinct")
    if len(seeds) < 3:
        raise ConfigError("ablation needs at least three seeds")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    env_names = [canonical_env_name(e) for e in (envs or [base.env])]

    thresholds: dict[str, float] = {}
    reference: dict[str, dict] = {}
    for name in env_names:
        env = make_env(name)
        ref = reference_fitness(env, base.bdo.search, base.bdo.eval_seeds)
        reference[name] = ref.to_dict()
        thresholds[name] = 0.8 * ref.mean

    budget = base.bdo.total_evals
    rows: list[dict] = []
    for name in env_names:
        for mode in modes:
            for seed in seeds:
                cfg = replace(base, env=name, mode=mode, seed=seed)
                report, row = _run_cell(cfg)
                if report.incomplete:
                    row.update(evals_to_threshold=budget + 1, censored=True)
                else:
                    probe = [e["fitness"] for e in report.bdo["probe"]]
                    evals, censored = evaluations_to_threshold(
                        probe, thresholds[name], budget)
                    row.update(evals_to_threshold=evals, censored=censored)
                rows.append(row)
    return AblationResult(rows=rows, thresholds=thresholds,
                          reference=reference, budget=budget)


@dataclass
class SweepResult:
    """Final fitness and provider-call counts across sampling budgets."""

    rows: list[dict]

    def median_fitness(self, n: int) -> float:
        vals = [r["fitness"] for r in self.rows
                if r["n_samples"] == n and not r["failed"]]
        return median(vals) if vals else float("nan")

    def n_values(self) -> list[int]:
        return sorted({r["n_samples"] for r in self.rows})

    def to_dict(self) -> dict:
        return {"rows": [dict(r) for r in self.rows],
                "median_fitness": {str(n): self.median_fitness(n)
                                   for n in self.n_values()}}

    def to_csv(self, path: str) -> None:
        cols = ["env", "n_samples", "seed", "fitness", "provider_calls",
                "failed", "report_path"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(str(r[c]) for c in cols) + "\n")


def sampling_sweep(base: RunConfig, n_values: list[int], seeds: list[int],
                   envs: list[str] | None = None) -> SweepResult:
    """Vary the per-component sampling budget and measure what it buys."""
    if not n_values or any(n < 1 for n in n_values):
        raise ConfigError("n_values must be positive")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    env_names = [canonical_env_name(e) for e in (envs or [base.env])]

    rows: list[dict] = []
    for name in env_names:
        for n in n_values:
            for seed in seeds:
                cfg = replace(base, env=name, seed=seed,
                              cuq=replace(base.cuq, n_samples=n))
                report, row = _run_cell(cfg)
                row["n_samples"] = n
                row["provider_calls"] = report.provider_calls
                rows.append(row)
    return SweepResult(rows=rows)
