"""Deterministic toy environments: rollouts, trajectories, linear policies.

Every environment is an immutable definition: dynamics are a pure function
of (state, action), randomness lives only in the seeded initial state, and
all aspect metrics and the task fitness land in [0, 1]. Rollouts always go
through one vectorized code path (a single rollout is a batch of one), and
dynamics use elementwise numpy ops only, so re-simulating a stored action
sequence reproduces the states bit-exactly no matter the original batch
size.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..dsl.nodes import EnvSignature
from ..errors import NonFinitePolicyOutputError
from ..seeds import derive_seed, generator


@dataclass(frozen=True)
class Trajectory:
    """A rollout record: states has one more row than actions.

    states[t] pairs with actions[t] for t < steps; states[-1] is the state
    reached after the last action. terminal marks early termination.
    """

    states: np.ndarray
    actions: np.ndarray
    terminal: bool

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        a = np.asarray(self.actions, dtype=float)
        if s.ndim != 2 or a.ndim != 2:
            raise ValueError("states and actions must be 2-D arrays")
        if s.shape[0] != a.shape[0] + 1:
            raise ValueError("need exactly one more state than actions")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    def pairs(self):
        """Iterate (s_t, a_t) for each executed step."""
        for t in range(self.steps):
            yield self.states[t], self.actions[t]

    def to_dict(self) -> dict:
        return {"states": self.states.tolist(),
                "actions": self.actions.tolist(),
                "terminal": bool(self.terminal)}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(states=np.asarray(d["states"], dtype=float),
                   actions=np.asarray(d["actions"], dtype=float),
                   terminal=bool(d["terminal"]))


class ToyEnv(ABC):
    """Deterministic MDP with named state/action features.

    Subclasses define init_state_batch and step_batch with elementwise numpy
    ops so a row's update never depends on the batch it sits in.
    """

    name: str
    horizon: int
    gamma: float = 0.99

    @property
    @abstractmethod
    def signature(self) -> EnvSignature:
        ...

    @property
    def state_dim(self) -> int:
        return len(self.signature.state_names)

    @property
    def action_dim(self) -> int:
        return len(self.signature.action_names)

    @property
    @abstractmethod
    def action_low(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def action_high(self) -> np.ndarray:
        ...

    @abstractmethod
    def init_state(self, seed: int) -> np.ndarray:
        """Seeded initial state, shape (state_dim,)."""

    @abstractmethod
    def step_batch(self, states: np.ndarray, actions: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
        """Advance a batch one step: (next_states, done) with done boolean."""

    def state_terminal(self, states: np.ndarray) -> np.ndarray:
        """Rows already terminal before acting. Default: never."""
        return np.zeros(states.shape[0], dtype=bool)

    @property
    @abstractmethod
    def aspect_names(self) -> tuple[str, ...]:
        ...

    @abstractmethod
    def aspect_metric(self, name: str, traj: Trajectory) -> float:
        """Named trajectory functional in [0, 1]."""

    @abstractmethod
    def fitness(self, traj: Trajectory) -> float:
        """Sparse task metric in [0, 1], independent of any shaped reward."""


@dataclass(frozen=True)
class LinearPolicy:
    """Affine map from state to action, clipped to the env action box."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError("weights must be (action_dim, state_dim), bias (action_dim,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFinitePolicyOutputError("policy parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def state_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def action_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, env: ToyEnv) -> "LinearPolicy":
        return cls(np.zeros((env.action_dim, env.state_dim)), np.zeros(env.action_dim))

    @classmethod
    def from_flat(cls, params: np.ndarray, state_dim: int, action_dim: int
                  ) -> "LinearPolicy":
        params = np.asarray(params, dtype=float)
        n_w = action_dim * state_dim
        return cls(params[:n_w].reshape(action_dim, state_dim),
                   params[n_w:n_w + action_dim])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


def _stack_policies(policies: list[LinearPolicy]) -> tuple[np.ndarray, np.ndarray]:
    W = np.stack([p.weights for p in policies])
    b = np.stack([p.bias for p in policies])
    return W, b


def _act_batch(W: np.ndarray, b: np.ndarray, states: np.ndarray,
               low: np.ndarray, high: np.ndarray) -> np.ndarray:
    # fixed-order multiply-accumulate keeps each row's floats independent of
    # the batch size, unlike a matmul that may regroup the reduction
    out = np.broadcast_to(b, (states.shape[0], b.shape[1])).copy()
    for j in range(states.shape[1]):
        out += states[:, j:j + 1] * W[:, :, j]
    return np.clip(out, low, high)


def rollout_batch(env: ToyEnv, policies: list[LinearPolicy],
                  seeds: list[int]) -> list[Trajectory]:
    """Roll out policies[i] from init_state(seeds[i]), all rows in lockstep.

    Rows that terminate early freeze; the returned trajectories have their
    true lengths. Raises NonFinitePolicyOutputError if any policy emits a
    non-finite action.
    """
    if len(policies) != len(seeds):
        raise ValueError("need one seed per policy")
    n = len(policies)
    for p in policies:
        if p.weights.shape != (env.action_dim, env.state_dim):
            raise ValueError(
                f"policy shape {p.weights.shape} does not match env "
                f"({env.action_dim}, {env.state_dim})")
    W, b = _stack_policies(policies)
    low, high = env.action_low, env.action_high

    states = np.stack([env.init_state(s) for s in seeds])
    state_hist = np.zeros((n, env.horizon + 1, env.state_dim))
    action_hist = np.zeros((n, env.horizon, env.action_dim))
    state_hist[:, 0] = states
    lengths = np.zeros(n, dtype=int)
    terminal = env.state_terminal(states).copy()
    alive = ~terminal

    for t in range(env.horizon):
        if not alive.any():
            break
        actions = _act_batch(W, b, states, low, high)
        if not np.all(np.isfinite(actions[alive])):
            raise NonFinitePolicyOutputError(
                f"non-finite action at step {t}")
        nxt, done = env.step_batch(states, actions)
        states = np.where(alive[:, None], nxt, states)
        action_hist[alive, t] = actions[alive]
        state_hist[alive, t + 1] = states[alive]
        lengths[alive] += 1
        newly_done = alive & done
        terminal |= newly_done
        alive &= ~done

    out = []
    for i in range(n):
        T = int(lengths[i])
        out.append(Trajectory(states=state_hist[i, :T + 1].copy(),
                              actions=action_hist[i, :T].copy(),
                              terminal=bool(terminal[i])))
    return out


def rollout(env: ToyEnv, policy: LinearPolicy, seed: int) -> Trajectory:
    """Deterministic rollout of one policy from the seeded initial state."""
    return rollout_batch(env, [policy], [seed])[0]


def simulate(env: ToyEnv, initial_state: np.ndarray,
             actions: np.ndarray) -> Trajectory:
    """Replay a stored action sequence through the dynamics.

    Reproduces the states of the rollout that recorded those actions
    bit-exactly (dynamics are elementwise, so batch size never matters).
    """
    actions = np.asarray(actions, dtype=float)
    state = np.asarray(initial_state, dtype=float)[None, :]
    states = [state[0].copy()]
    terminal = bool(env.state_terminal(state)[0])
    for t in range(actions.shape[0]):
        if terminal:
            break
        nxt, done = env.step_batch(state, actions[t][None, :])
        state = nxt
        states.append(state[0].copy())
        terminal = bool(done[0])
    return Trajectory(states=np.asarray(states),
                      actions=actions[:len(states) - 1],
                      terminal=terminal)


def env_init_rng(env: ToyEnv, seed: int) -> np.random.Generator:
    """Shared seeding convention for initial-state draws."""
    return generator(derive_seed(seed, "env-init", env.name))
