"""Toy environment registry, rollout machinery, and CEM policy search."""

from __future__ import annotations

from ..dsl.parser import parse
from . import balance_pole, grid_reach, point_mass
from .balance_pole import BalancePoleEnv
from .cem import (FitnessStats, SearchConfig, cem_optimize, cem_search,
                  discounted_return, evaluate_reward)
from .core import (LinearPolicy, ToyEnv, Trajectory, rollout, rollout_batch,
                   simulate)
from .grid_reach import GridReachEnv
from .point_mass import PointMassEnv

_BUILDERS = {
    "point-mass-velocity": PointMassEnv,
    "grid-reach": GridReachEnv,
    "balance-pole": BalancePoleEnv,
}

_ALIASES = {"point-mass": "point-mass-velocity"}

_REFERENCE_SOURCES = {
    "point-mass-velocity": point_mass.REFERENCE_SOURCE,
    "grid-reach": grid_reach.REFERENCE_SOURCE,
    "balance-pole": balance_pole.REFERENCE_SOURCE,
}


def canonical_env_name(name: str) -> str:
    resolved = _ALIASES.get(name, name)
    if resolved not in _BUILDERS:
        known = ", ".join(sorted(_BUILDERS))
        raise KeyError(f"unknown environment {name!r}; known: {known}")
    return resolved


def make_env(name: str, **kwargs) -> ToyEnv:
    """Build a registered environment by name ('point-mass' is an alias)."""
    return _BUILDERS[canonical_env_name(name)](**kwargs)


def list_envs() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def reference_reward(env: ToyEnv):
    """The shipped hand-written reward for an environment, parsed."""
    return parse(_REFERENCE_SOURCES[env.name], env.signature)


def reference_source(name: str) -> str:
    return _REFERENCE_SOURCES[canonical_env_name(name)]


__all__ = [
    "BalancePoleEnv", "FitnessStats", "GridReachEnv", "LinearPolicy",
    "PointMassEnv", "SearchConfig", "ToyEnv", "Trajectory",
    "canonical_env_name", "cem_optimize", "cem_search", "discounted_return",
    "evaluate_reward", "list_envs", "make_env", "reference_reward",
    "reference_source", "rollout", "rollout_batch", "simulate",
]
