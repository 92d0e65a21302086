"""Shared fixtures and the random DSL source generator used across tests."""

from __future__ import annotations

import numpy as np
import pytest

from rewardforge.dsl.nodes import EnvSignature
from rewardforge.providers import MockProvider, load_corpus

SIG_PM = EnvSignature(state=(("x", "m"), ("v", "m/s")), action=(("u", "m/s^2"),))
SIG_POLE = EnvSignature(
    state=(("x", "m"), ("xdot", "m/s"), ("phi", "rad"), ("phidot", "rad/s")),
    action=(("u", "N"),))

_UNARY = ("abs", "exp", "tanh", "sqrt", "log")
_BINARY = ("+", "-", "*", "/")


def random_expr(rng: np.random.Generator, sig: EnvSignature, hypers: list[str],
                depth: int) -> str:
    """Random DSL expression text over a signature and hyper names."""
    if depth <= 0 or rng.random() < 0.3:
        leaf = rng.integers(0, 3 + (1 if hypers else 0))
        if leaf == 0:
            return format(float(rng.uniform(0.01, 10.0)), ".6g")
        if leaf == 1:
            name, _ = sig.state[rng.integers(0, len(sig.state))]
            return f"state.{name}"
        if leaf == 2:
            name, _ = sig.action[rng.integers(0, len(sig.action))]
            return f"action.{name}"
        return hypers[rng.integers(0, len(hypers))]
    kind = rng.integers(0, 4)
    if kind == 0:
        op = _UNARY[rng.integers(0, len(_UNARY))]
        inner = random_expr(rng, sig, hypers, depth - 1)
        # keep log and sqrt in-domain without changing the grammar shape
        if op in ("log", "sqrt"):
            return f"{op}(abs({inner}) + 1.0)"
        return f"{op}({inner})"
    if kind == 1:
        op = _BINARY[rng.integers(0, len(_BINARY))]
        a = random_expr(rng, sig, hypers, depth - 1)
        b = random_expr(rng, sig, hypers, depth - 1)
        if op == "/":
            return f"({a}) / (abs({b}) + 1.0)"
        return f"({a}) {op} ({b})"
    if kind == 2:
        a = random_expr(rng, sig, hypers, depth - 1)
        return f"pow(abs({a}) + 0.1, 2.0)"
    a = random_expr(rng, sig, hypers, depth - 1)
    lo = float(rng.uniform(-2.0, 0.0))
    hi = float(rng.uniform(0.5, 3.0))
    return f"clip({a}, {lo:.6g}, {hi:.6g})"


def random_source(rng: np.random.Generator, sig: EnvSignature,
                  aspects=("speed", "stability")) -> str:
    """Random full reward function source with 1-3 terms."""
    n_terms = int(rng.integers(1, len(aspects) + 1))
    blocks = []
    names = []
    for t in range(n_terms):
        name = f"term{t}_{rng.integers(0, 1000)}"
        names.append(name)
        n_hyp = int(rng.integers(0, 3))
        hypers = [f"h{t}_{j}" for j in range(n_hyp)]
        lines = [f"term {name} aspect {aspects[t % len(aspects)]} {{"]
        for h in hypers:
            lo = float(rng.uniform(0.01, 1.0))
            hi = lo + float(rng.uniform(0.5, 2.0))
            default = float(rng.uniform(lo, hi))
            lines.append(f"  hyper {h} in [{lo:.6g}, {hi:.6g}] "
                         f"default {default:.6g};")
        lines.append(f"  expr = {random_expr(rng, sig, hypers, 3)};")
        lines.append("}")
        blocks.append("\n".join(lines))
    weights = [format(float(rng.uniform(0.1, 2.0)), ".6g") for _ in names]
    combo = " + ".join(f"{w} * {n}" for w, n in zip(weights, names))
    blocks.append(f"combine = {combo};")
    return "\n".join(blocks) + "\n"


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture()
def mock_provider():
    return MockProvider(load_corpus(), magnitude=0.05, seed=0)
