"""1-D double integrator tracking a target velocity.

State (x, v), action u in [-1, 1] interpreted as acceleration. Explicit
Euler with dt = 0.05 updates both coordinates from the old state:

    x' = x + dt * v
    v' = v + dt * u

The task is to hold v near 1.0; fitness is the fraction of steps with
|v - 1| < 0.1.
"""

from __future__ import annotations

import numpy as np

from ..dsl.nodes import EnvSignature
from .core import ToyEnv, Trajectory, env_init_rng

DT = 0.05
V_TARGET = 1.0

# normalizers used to keep aspect metrics in [0, 1]
_VAR_SCALE = 0.25      # velocity variance considered fully unstable
_JERK_SCALE = 2.0      # largest possible |u_t - u_{t-1}| given u in [-1, 1]

REFERENCE_SOURCE = """\
term track {
  expr = 1.0 - abs(state.v - 1.0);
}
term effort {
  expr = -(action.u * action.u);
}
combine = 1.0 * track + 0.05 * effort;
"""


class PointMassEnv(ToyEnv):
    name = "point-mass-velocity"
    horizon = 200
    gamma = 0.99

    _signature = EnvSignature(state=(("x", "m"), ("v", "m/s")),
                              action=(("u", "m/s^2"),))
    _low = np.array([-1.0])
    _high = np.array([1.0])

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
        v0 = rng.uniform(-0.2, 0.2)
        return np.array([0.0, v0])

    def step_batch(self, states, actions):
        x, v = states[:, 0], states[:, 1]
        u = actions[:, 0]
        nxt = np.stack([x + DT * v, v + DT * u], axis=1)
        done = np.zeros(states.shape[0], dtype=bool)
        return nxt, done

    @property
    def aspect_names(self) -> tuple[str, ...]:
        return ("speed", "stability", "smoothness")

    def aspect_metric(self, name: str, traj: Trajectory) -> float:
        v = traj.states[1:, 1]
        if name == "speed":
            raw = np.mean(1.0 - np.abs(v - V_TARGET) / V_TARGET)
        elif name == "stability":
            half = v[v.shape[0] // 2:]
            raw = 1.0 - np.var(half) / _VAR_SCALE
        elif name == "smoothness":
            u = traj.actions[:, 0]
            if u.shape[0] < 2:
                raw = 1.0
            else:
                raw = 1.0 - np.mean(np.abs(np.diff(u))) / _JERK_SCALE
        else:
            raise KeyError(f"unknown aspect {name!r}")
        return float(np.clip(raw, 0.0, 1.0))

    def fitness(self, traj: Trajectory) -> float:
        v = traj.states[1:, 1]
        return float(np.clip(np.mean(np.abs(v - V_TARGET) < 0.1), 0.0, 1.0))
