"""Linearized cart-pole balancing.

State (x, xdot, phi, phidot); action u in [-1, 1] scaled to a horizontal
force of +/-10 N. Dynamics are the small-angle linearization of the classic
cart-pole (total mass 1.1 kg, pole mass 0.1 kg, half-length 0.5 m,
g = 9.8 m/s^2), integrated by explicit Euler with dt = 0.02:

    phidd = (g * phi - F / M) / (l * (4/3 - m_p / M))
    xdd   = (F - m_p * l * phidd) / M
    x'    = x + dt * xdot        xdot'   = xdot + dt * xdd
    phi'  = phi + dt * phidot    phidot' = phidot + dt * phidd

Fitness is the fraction of steps with |phi| < 0.2 rad.
"""

from __future__ import annotations

import numpy as np

from ..dsl.nodes import EnvSignature
from .core import ToyEnv, Trajectory, env_init_rng

DT = 0.02
FORCE_SCALE = 10.0
M_TOTAL = 1.1
M_POLE = 0.1
POLE_HALF_LEN = 0.5
GRAVITY = 9.8
_DENOM = POLE_HALF_LEN * (4.0 / 3.0 - M_POLE / M_TOTAL)

# normalizers for the [0, 1] aspect metrics
_PHI_SCALE = 0.5       # rad; mean |phi| at or past this counts as unstable
_X_SCALE = 1.0         # m; mean |x| at or past this counts as off-center
_JERK_SCALE = 2.0      # largest possible |u_t - u_{t-1}|

REFERENCE_SOURCE = """\
term upright {
  expr = 1.0 - abs(state.phi) * 5.0;
}
term center {
  expr = -(abs(state.x) * 0.2);
}
combine = 1.0 * upright + 0.5 * center;
"""


class BalancePoleEnv(ToyEnv):
    name = "balance-pole"
    horizon = 200
    gamma = 0.99

    _signature = EnvSignature(
        state=(("x", "m"), ("xdot", "m/s"), ("phi", "rad"), ("phidot", "rad/s")),
        action=(("u", "force fraction"),))
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
        x0 = rng.uniform(-0.05, 0.05)
        phi0 = rng.uniform(-0.05, 0.05)
        return np.array([x0, 0.0, phi0, 0.0])

    def step_batch(self, states, actions):
        x, xdot = states[:, 0], states[:, 1]
        phi, phidot = states[:, 2], states[:, 3]
        force = FORCE_SCALE * actions[:, 0]
        phidd = (GRAVITY * phi - force / M_TOTAL) / _DENOM
        xdd = (force - M_POLE * POLE_HALF_LEN * phidd) / M_TOTAL
        nxt = np.stack([x + DT * xdot,
                        xdot + DT * xdd,
                        phi + DT * phidot,
                        phidot + DT * phidd], axis=1)
        done = np.zeros(states.shape[0], dtype=bool)
        return nxt, done

    @property
    def aspect_names(self) -> tuple[str, ...]:
        return ("stability", "smoothness", "centering")

    def aspect_metric(self, name: str, traj: Trajectory) -> float:
        if name == "stability":
            raw = 1.0 - np.mean(np.abs(traj.states[1:, 2])) / _PHI_SCALE
        elif name == "smoothness":
            u = traj.actions[:, 0]
            if u.shape[0] < 2:
                raw = 1.0
            else:
                raw = 1.0 - np.mean(np.abs(np.diff(u))) / _JERK_SCALE
        elif name == "centering":
            raw = 1.0 - np.mean(np.abs(traj.states[1:, 0])) / _X_SCALE
        else:
            raise KeyError(f"unknown aspect {name!r}")
        return float(np.clip(raw, 0.0, 1.0))

    def fitness(self, traj: Trajectory) -> float:
        phi = traj.states[1:, 2]
        return float(np.clip(np.mean(np.abs(phi) < 0.2), 0.0, 1.0))
