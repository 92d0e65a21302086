"""Command-line front end for the reward design pipeline.

Subcommands mirror the pipeline stages plus the study drivers:

    run          full pipeline (generate, uncertainty, optimize, validate)
    generate     candidate sampling only
    uncertainty  sampling plus component uncertainty scoring
    optimize     Bayesian decoupling on an existing reward source file
    ablate       mode comparison grid over envs and seeds
    sweep        per-component sampling budget sweep
    validate     re-run a report's config and diff the results
    library      inspect a component library file

Exit codes: 0 success, 2 bad configuration, 3 provider failure,
4 incomplete or non-reproducible run.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .decoupling import MODES, optimize_reward
from .dsl.parser import parse
from .envs import canonical_env_name, list_envs, make_env
from .errors import ConfigError, ProviderError, RewardForgeError
from .library import ComponentLibrary
from .pipeline import (RunConfig, run_ablation_suite, run_pipeline,
                       sampling_sweep, validate_report)
from .providers import TaskDescription, make_provider
from .seeds import derive_seed
from .uncertainty import run_cuq

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_INCOMPLETE = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a run config JSON file")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--mode", choices=MODES, default=None, help="pipeline mode")
    p.add_argument("--env", default=None,
                   help="environment name (%s)" % ", ".join(list_envs()))
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--offline", action="store_true", default=None,
                   help="force the offline mock provider")
    p.add_argument("--dump-trajectories", action="store_true", default=None,
                   help="also write validation trajectories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewardforge",
        description="LLM-driven reward design with uncertainty-budgeted "
                    "Bayesian decoupling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline run")
    _add_common(p_run)

    p_gen = sub.add_parser("generate", help="sample candidate rewards only")
    _add_common(p_gen)
    p_gen.add_argument("--n-samples", type=int, default=None,
                       help="candidates per component")

    p_unc = sub.add_parser("uncertainty",
                           help="sample candidates and score their uncertainty")
    _add_common(p_unc)
    p_unc.add_argument("--n-samples", type=int, default=None)

    p_opt = sub.add_parser("optimize",
                           help="optimize an existing reward source file")
    p_opt.add_argument("reward_file", help="path to a reward DSL source file")
    _add_common(p_opt)

    p_abl = sub.add_parser("ablate", help="mode comparison grid")
    _add_common(p_abl)
    p_abl.add_argument("--modes", nargs="+", default=["cour", "monolithic-bo"],
                       choices=MODES)
    p_abl.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p_abl.add_argument("--envs", nargs="+", default=None)

    p_swp = sub.add_parser("sweep", help="sampling budget sweep")
    _add_common(p_swp)
    p_swp.add_argument("--n-values", nargs="+", type=int, default=[1, 3, 5, 8])
    p_swp.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p_swp.add_argument("--envs", nargs="+", default=None)

    p_val = sub.add_parser("validate", help="re-run and diff a report")
    p_val.add_argument("report", help="path to a run report JSON file")

    p_lib = sub.add_parser("library", help="inspect a component library")
    p_lib.add_argument("path", help="path to a library .jsonl file")
    p_lib.add_argument("--aspect", default=None, help="only this aspect tag")
    p_lib.add_argument("--k", type=int, default=None,
                       help="show at most this many records")
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, explicit flags override it."""
    raw: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    overrides = {"seed": args.seed, "mode": args.mode, "env": args.env,
                 "out_dir": args.out, "offline": args.offline,
                 "dump_trajectories": args.dump_trajectories}
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    if getattr(args, "n_samples", None) is not None:
        cuq = dict(raw.get("cuq", {}))
        cuq["n_samples"] = args.n_samples
        raw["cuq"] = cuq
    if "env" not in raw:
        raise ConfigError("an environment is required (--env or config file)")
    return RunConfig.from_dict(raw)


def _setup(cfg: RunConfig):
    """Env, seeded provider, and task description, as the pipeline builds them."""
    env = make_env(cfg.env)
    provider_cfg = replace(cfg.provider,
                           seed=derive_seed(cfg.seed, "provider", cfg.provider.seed))
    provider = make_provider(provider_cfg, offline=cfg.offline)
    task = TaskDescription(text=cfg.task, env_name=env.name,
                           signature=env.signature, aspects=env.aspect_names)
    return env, provider, task


def _report_exit(incomplete: bool, error_kind: str | None) -> int:
    if not incomplete:
        return EXIT_OK
    return EXIT_PROVIDER if error_kind == "provider" else EXIT_INCOMPLETE


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_pipeline(cfg)
    if report.incomplete:
        print(f"INCOMPLETE at stage {report.failed_stage}: {report.error}")
    else:
        mean = report.validation.get("mean")
        print(f"{report.env} [{report.mode}] seed {report.seed}: "
              f"fitness {mean:.3f} in {report.total_evaluations} evaluations")
    print(f"report: {report.report_path}")
    return _report_exit(report.incomplete, report.error_kind)


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    env, provider, task = _setup(cfg)
    result = provider.generate_reward(task, cfg.cuq.n_samples)
    for i, src in enumerate(result.sources):
        print(f"# --- candidate {i} ---")
        print(src)
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    cfg = _load_config(args)
    env, provider, task = _setup(cfg)
    result = provider.generate_reward(task, cfg.cuq.n_samples)

    from .pipeline import _component_batches
    batches = _component_batches(list(result.sources), env)
    library = ComponentLibrary(cfg.library_path) if cfg.library_path else None
    cuq = run_cuq(batches, library, provider, task, cfg.cuq)

    print(f"{'aspect':<14} {'u':>7} {'s_text':>7} {'s_sem':>7} "
          f"{'rounds':>6}  representative")
    for aspect in env.aspect_names:
        comp = cuq.components[aspect]
        rep = comp.final_report
        print(f"{aspect:<14} {rep.u:7.3f} {rep.s_text:7.3f} "
              f"{rep.s_semantic:7.3f} {comp.refine_rounds:6d}  "
              f"{comp.representative.term.name}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    env = make_env(cfg.env)
    try:
        with open(args.reward_file, encoding="utf-8") as fh:
            source = fh.read()
    except FileNotFoundError as exc:
        raise ConfigError(f"reward file not found: {args.reward_file}") from exc
    rf = parse(source, env.signature)

    provider = None
    if cfg.mode == "llm-tune":
        _, provider, _ = _setup(cfg)
    # no uncertainty information for a hand-provided reward: equal split
    optimized = optimize_reward(rf, {}, env, cfg.bdo,
                                derive_seed(cfg.seed, "bdo"),
                                mode=cfg.mode, provider=provider)
    out_dir = cfg.out_dir
    import os
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"optimized_{env.name}_{cfg.mode}_{cfg.seed}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(optimized.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best fitness probe: {max(optimized.probe_values(), default=float('nan')):.3f} "
          f"in {optimized.total_evaluations} evaluations")
    print(f"thetas: {json.dumps(optimized.thetas, sort_keys=True)}")
    print(f"alphas: {json.dumps(optimized.alphas, sort_keys=True)}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    result = run_ablation_suite(cfg, modes=list(args.modes),
                                seeds=list(args.seeds), envs=args.envs)
    import os
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_path = os.path.join(cfg.out_dir, "ablation.csv")
    result.to_csv(csv_path)
    json_path = os.path.join(cfg.out_dir, "ablation.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"{'mode':<14} {'median fitness':>14} {'median evals':>13}")
    for mode in args.modes:
        print(f"{mode:<14} {result.median_fitness(mode):>14.3f} "
              f"{result.median_evals(mode):>13.1f}")
    print(f"wrote {csv_path}")
    failed = [r for r in result.rows if r["failed"]]
    return EXIT_INCOMPLETE if failed else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    result = sampling_sweep(cfg, n_values=list(args.n_values),
                            seeds=list(args.seeds), envs=args.envs)
    import os
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_path = os.path.join(cfg.out_dir, "sweep.csv")
    result.to_csv(csv_path)

    print(f"{'n_samples':>9} {'median fitness':>14}")
    for n in result.n_values():
        print(f"{n:>9} {result.median_fitness(n):>14.3f}")
    print(f"wrote {csv_path}")
    failed = [r for r in result.rows if r["failed"]]
    return EXIT_INCOMPLETE if failed else EXIT_OK


def cmd_validate(args) -> int:
    ok, diffs = validate_report(args.report)
    if ok:
        print("REPRODUCED: re-run matches the report")
        return EXIT_OK
    print(f"MISMATCH in {len(diffs)} fields:")
    for d in diffs[:20]:
        print(f"  {d}")
    return EXIT_INCOMPLETE


def cmd_library(args) -> int:
    lib = ComponentLibrary(args.path)
    records = lib.records()
    if args.aspect is not None:
        records = [r for r in records if r.aspect == args.aspect]
    if args.k is not None:
        records = records[: args.k]
    print(f"{len(lib)} records in {args.path}")
    for rec in records:
        head = rec.source.splitlines()[0] if rec.source else ""
        print(f"{rec.id}  {rec.aspect:<14} uses={rec.uses:<3} {head}")
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "generate": cmd_generate,
    "uncertainty": cmd_uncertainty,
    "optimize": cmd_optimize,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "library": cmd_library,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except RewardForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE


if __name__ == "__main__":
    sys.exit(main())
