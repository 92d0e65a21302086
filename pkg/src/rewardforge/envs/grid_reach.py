"""Deterministic gridworld: reach the far corner.

Square grid of side ``size`` (default 8). State (x, y) holds integer cell
coordinates stored as floats. The single action ``move`` is continuous in
[0, 3]; dynamics round it to the nearest integer (ties to even, numpy rint)
and apply 0:+x, 1:+y, 2:-x, 3:-y, clipping to the grid. The episode ends as
soon as the agent occupies the goal cell (size-1, size-1). Fitness is the
binary indicator that the goal was occupied at any step, initial state
included.
"""

from __future__ import annotations

import numpy as np

from ..dsl.nodes import EnvSignature
from .core import ToyEnv, Trajectory, env_init_rng

REFERENCE_SOURCE = """\
term approach {
  expr = -(abs(7.0 - state.x) + abs(7.0 - state.y));
}
combine = 1.0 * approach;
"""

# move index -> (dx, dy)
_DX = np.array([1.0, 0.0, -1.0, 0.0])
_DY = np.array([0.0, 1.0, 0.0, -1.0])


class GridReachEnv(ToyEnv):
    name = "grid-reach"
    horizon = 64
    gamma = 0.99

    _signature = EnvSignature(state=(("x", "cell"), ("y", "cell")),
                              action=(("move", "index"),))
    _low = np.array([0.0])
    _high = np.array([3.0])

    def __init__(self, size: int = 8):
        if size < 2:
            raise ValueError("grid size must be at least 2")
        self.size = int(size)
        self.goal = (float(size - 1), float(size - 1))

    @property
    def signature(self) -> EnvSignature:
        return self._signature

    @property
    def action_low(self) -> np.ndarray:
        return self._low

    @property
    def action_high(self) -> np.ndarray:
        return self._high

    def init_state(self, seed: int) -> np.ndarray:
        rng = env_init_rng(self, seed)
        lim = min(4, self.size)
        x0 = float(rng.integers(0, lim))
        y0 = float(rng.integers(0, lim))
        return np.array([x0, y0])

    def _at_goal(self, states: np.ndarray) -> np.ndarray:
        return (states[:, 0] == self.goal[0]) & (states[:, 1] == self.goal[1])

    def state_terminal(self, states: np.ndarray) -> np.ndarray:
        return self._at_goal(states)

    def step_batch(self, states, actions):
        move = np.rint(np.clip(actions[:, 0], 0.0, 3.0)).astype(int)
        nx = np.clip(states[:, 0] + _DX[move], 0.0, self.size - 1.0)
        ny = np.clip(states[:, 1] + _DY[move], 0.0, self.size - 1.0)
        nxt = np.stack([nx, ny], axis=1)
        return nxt, self._at_goal(nxt)

    @property
    def aspect_names(self) -> tuple[str, ...]:
        return ("progress", "efficiency")

    def aspect_metric(self, name: str, traj: Trajectory) -> float:
        if name == "progress":
            fx, fy = traj.states[-1, 0], traj.states[-1, 1]
            dist = abs(self.goal[0] - fx) + abs(self.goal[1] - fy)
            raw = 1.0 - dist / (2.0 * (self.size - 1))
        elif name == "efficiency":
            raw = 1.0 - traj.steps / self.horizon
        else:
            raise KeyError(f"unknown aspect {name!r}")
        return float(np.clip(raw, 0.0, 1.0))

    def fitness(self, traj: Trajectory) -> float:
        return float(self._at_goal(traj.states).any())
