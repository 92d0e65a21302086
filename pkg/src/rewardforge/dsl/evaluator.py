"""Reward evaluation.

All arithmetic is float64. Evaluation is defined over numpy arrays so a whole
batch of (state, action) rows can be scored in one pass; the scalar entry
points wrap the batched path with a batch of one, which keeps every caller on
bit-identical code.

Domain violations (division by zero, sqrt of a negative, pow outside its
domain, overflow to inf) raise NumericalDomainError tagged with the path of
the offending node instead of letting NaN propagate.
"""

from __future__ import annotations

import numpy as np

from ..errors import MissingHyperError, NumericalDomainError
from .nodes import (ActionRef, Binary, Clip, Constant, Expr, HyperRef,
                    RewardFunction, RewardTerm, StateRef, Unary)


def _check_finite(values: np.ndarray, path: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalDomainError("non-finite result", path)


def _eval(node: Expr, state: np.ndarray, action: np.ndarray,
          state_index: dict[str, int], action_index: dict[str, int],
          theta: dict[str, float], term_name: str, path: str) -> np.ndarray:
    if isinstance(node, Constant):
        return np.full(state.shape[0], node.value)
    if isinstance(node, StateRef):
        return state[:, state_index[node.name]]
    if isinstance(node, ActionRef):
        return action[:, action_index[node.name]]
    if isinstance(node, HyperRef):
        if node.name not in theta:
            raise MissingHyperError(node.name, term_name)
        return np.full(state.shape[0], float(theta[node.name]))
    if isinstance(node, Unary):
        here = f"{path}/{node.op}"
        child = _eval(node.child, state, action, state_index, action_index,
                      theta, term_name, here)
        if node.op == "neg":
            return -child
        if node.op == "abs":
            return np.abs(child)
        if node.op == "exp":
            with np.errstate(over="ignore"):
                out = np.exp(child)
            _check_finite(out, here)
            return out
        if node.op == "tanh":
            return np.tanh(child)
        if node.op == "sqrt":
            if np.any(child < 0.0):
                raise NumericalDomainError("sqrt of negative value", here)
            return np.sqrt(child)
    if isinstance(node, Binary):
        here = f"{path}/{node.op}"
        left = _eval(node.left, state, action, state_index, action_index,
                     theta, term_name, here)
        right = _eval(node.right, state, action, state_index, action_index,
                      theta, term_name, here)
        if node.op == "add":
            out = left + right
        elif node.op == "sub":
            out = left - right
        elif node.op == "mul":
            with np.errstate(over="ignore"):
                out = left * right
        elif node.op == "div":
            if np.any(right == 0.0):
                raise NumericalDomainError("division by zero", here)
            with np.errstate(over="ignore"):
                out = left / right
        elif node.op == "min":
            out = np.minimum(left, right)
        elif node.op == "max":
            out = np.maximum(left, right)
        else:  # pow
            neg_base = left < 0.0
            if np.any(neg_base):
                frac = right != np.floor(right)
                if np.any(neg_base & frac):
                    raise NumericalDomainError("negative base with non-integer exponent", here)
            zero_base = left == 0.0
            if np.any(zero_base & (right < 0.0)):
                raise NumericalDomainError("zero base with negative exponent", here)
            with np.errstate(over="ignore", invalid="ignore"):
                out = np.power(left, right)
        _check_finite(out, here)
        return out
    if isinstance(node, Clip):
        here = f"{path}/clip"
        child = _eval(node.child, state, action, state_index, action_index,
                      theta, term_name, here)
        return np.clip(child, node.lo, node.hi)
    raise TypeError(f"not an expression node: {node!r}")


class BoundReward:
    """A reward function prepared for fast repeated evaluation.

    Resolves feature indices once. ``term_values`` evaluates every term over
    a batch; ``combined`` applies weights. Thetas default to the declared
    defaults and can be overridden per term.
    """

    def __init__(self, rf: RewardFunction,
                 thetas: dict[str, dict[str, float]] | None = None,
                 weights: tuple[float, ...] | None = None):
        self.rf = rf
        self.state_index = {n: i for i, n in enumerate(rf.signature.state_names)}
        self.action_index = {n: i for i, n in enumerate(rf.signature.action_names)}
        base = rf.default_thetas()
        if thetas:
            for name, override in thetas.items():
                base[name] = dict(base.get(name, {}), **override)
        self.thetas = base
        self.weights = tuple(weights) if weights is not None else rf.weights

    def term_values(self, term: RewardTerm, state: np.ndarray,
                    action: np.ndarray) -> np.ndarray:
        return _eval(term.expr, state, action, self.state_index,
                     self.action_index, self.thetas[term.name], term.name,
                     term.name)

    def combined(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        total = np.zeros(state.shape[0])
        for term, w in zip(self.rf.terms, self.weights):
            total = total + w * self.term_values(term, state, action)
        return total


def _as_batch(vec, width: int, what: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{what} must have {width} features, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalDomainError("non-finite input", what)
    return arr


def term_values_batch(term: RewardTerm, state: np.ndarray, action: np.ndarray,
                      theta: dict[str, float], signature) -> np.ndarray:
    """Evaluate one term over a batch of rows, ordered like the signature."""
    s_index = {n: i for i, n in enumerate(signature.state_names)}
    a_index = {n: i for i, n in enumerate(signature.action_names)}
    s = _as_batch(state, len(s_index), "state")
    a = _as_batch(action, len(a_index), "action")
    return _eval(term.expr, s, a, s_index, a_index, theta, term.name, term.name)


def evaluate(term: RewardTerm, state, action, theta: dict[str, float],
             signature=None, *, _index=None) -> float:
    """Evaluate one term at a single (state, action) pair.

    ``state`` and ``action`` are sequences ordered like the signature. When no
    signature is given, feature indices are inferred from the references that
    actually occur, sorted by name (fragment evaluation).
    """
    if signature is not None:
        s_index = {n: i for i, n in enumerate(signature.state_names)}
        a_index = {n: i for i, n in enumerate(signature.action_names)}
    elif _index is not None:
        s_index, a_index = _index
    else:
        s_index, a_index = _infer_indices(term)
    s = np.asarray(state, dtype=float).reshape(1, -1)
    a = np.asarray(action, dtype=float).reshape(1, -1)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise NumericalDomainError("non-finite input", term.name)
    if signature is not None and s.shape[1] != len(s_index):
        raise ValueError(f"state must have {len(s_index)} features, got {s.shape[1]}")
    if signature is not None and a.shape[1] != len(a_index):
        raise ValueError(f"action must have {len(a_index)} features, got {a.shape[1]}")
    out = _eval(term.expr, s, a, s_index, a_index, theta, term.name, term.name)
    return float(out[0])


def _infer_indices(term: RewardTerm) -> tuple[dict[str, int], dict[str, int]]:
    state_names: set[str] = set()
    action_names: set[str] = set()
    stack = [term.expr]
    while stack:
        node = stack.pop()
        if isinstance(node, StateRef):
            state_names.add(node.name)
        elif isinstance(node, ActionRef):
            action_names.add(node.name)
        elif isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Clip):
            stack.append(node.child)
    return ({n: i for i, n in enumerate(sorted(state_names))},
            {n: i for i, n in enumerate(sorted(action_names))})


def evaluate_combined(rf: RewardFunction, state, action,
                      thetas: dict[str, dict[str, float]]) -> float:
    """Weighted sum of term values at one (state, action) pair."""
    bound = BoundReward(rf, thetas)
    s = _as_batch(state, len(rf.signature.state_names), "state")
    a = _as_batch(action, len(rf.signature.action_names), "action")
    return float(bound.combined(s, a)[0])


def decompose(rf: RewardFunction) -> list[tuple[RewardTerm, float]]:
    """(term, weight) pairs in declaration order."""
    return list(zip(rf.terms, rf.weights))


def recombine(pairs: list[tuple[RewardTerm, float]],
              signature) -> RewardFunction:
    """Inverse of decompose."""
    terms = tuple(t for t, _ in pairs)
    weights = tuple(w for _, w in pairs)
    return RewardFunction(terms, weights, signature)
