"""PdBalancer: cart with a torque-actuated inverted pendulum on a rail.

The hinge between cart and pole is the only actuated joint; the policy emits
a pole-angle target and a PD controller turns it into hinge torque. Driving
the cart therefore works segway-style: lean the pole, let the reaction
accelerate the cart. The command is a target cart velocity; falling means
|pitch| above the threshold. The heightfield window is a constant zero
block, so this environment exercises proprioceptive and action-space
attacks only.

Coordinates: x cart position (m, +right), theta pole angle from upright
(rad, positive leaning +x). Semi-implicit Euler at fixed dt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rngs import RngStream, STREAM_ENV_INIT
from .core import (EpisodeAbort, MirrorMaps, ObsLayout, PdGains,
                   PrivilegedState, SignedMap, StabilityFeatures, StepResult)


@dataclass(frozen=True)
class BalancerConfig:
    dt: float = 0.02
    horizon: int = 500
    cart_mass: float = 1.0
    pole_mass: float = 0.2
    pole_length: float = 0.35      # pivot to point-mass bob
    gravity: float = 9.81
    rail_damping: tuple = (0.05, 0.15)   # per-episode friction coefficient range
    mass_scale: tuple = (0.9, 1.1)       # per-episode payload scale range
    init_spread: float = 0.05            # |theta| init range (rad)
    fall_pitch: float = 0.6
    kp: float = 25.0
    kd: float = 0.6
    torque_limit: float = 3.0
    action_bound: float = 0.7            # pole-angle target range (rad)
    cmd_range: tuple = (-0.6, 0.6)       # target cart velocity (m/s)
    track_sigma: float = 0.3
    w_action_rate: float = 0.05
    w_torque: float = 1e-3
    n_height: int = 11


class PdBalancer:
    """Planar balancer; owns its state, single-writer per instance."""

    env_id = "pd_balancer"

    def __init__(self, config: BalancerConfig | None = None):
        self.config = config or BalancerConfig()
        c = self.config
        self.layout = ObsLayout(n_command=1, n_angvel=1, n_gravity=2, n_qpos=1,
                                n_qvel=2, n_prev_action=1, n_height=c.n_height)
        self.gains = PdGains.scalar(c.kp, c.kd, c.torque_limit)
        self.action_dim = 1
        self.n_joints = 1
        self.action_bound = np.array([c.action_bound])
        self.priv_dim = 3  # true cart velocity, rail damping, mass scale
        self.horizon = c.horizon
        self._reset_done = False

    # -- episode control ---------------------------------------------------

    def reset(self, seed: int):
        c = self.config
        rng = RngStream(seed, STREAM_ENV_INIT)
        self.x = 0.0
        self.xd = 0.0
        self.theta = float(rng.uniform(-c.init_spread, c.init_spread))
        self.thetad = 0.0
        self.command = float(rng.uniform(*c.cmd_range))
        self.damping = float(rng.uniform(*c.rail_damping))
        self.scale = float(rng.uniform(*c.mass_scale))
        self.prev_action = np.zeros(1)
        self.t = 0
        self.fallen = False
        self._reset_done = True
        return self._obs(), self._priv()

    @property
    def q(self) -> np.ndarray:
        return np.array([self.theta])

    @property
    def qd(self) -> np.ndarray:
        return np.array([self.thetad])

    def step(self, torques: np.ndarray, action: np.ndarray | None = None,
             executed: np.ndarray | None = None) -> StepResult:
        if not self._reset_done:
            raise RuntimeError("step before reset")
        del executed  # balancer has no auxiliary action channels
        c = self.config
        tau = float(np.asarray(torques).reshape(-1)[0])
        if abs(tau) > float(self.gains.torque_limit[0]) * (1 + 1e-9):
            raise ValueError(f"torque {tau} exceeds limit {self.gains.torque_limit[0]}")
        act = np.zeros(1) if action is None else np.asarray(action, dtype=np.float64).reshape(1)

        m = c.pole_mass * self.scale
        big_m = c.cart_mass
        l, g = c.pole_length, c.gravity
        sin, cos = np.sin(self.theta), np.cos(self.theta)
        # Lagrangian cart-pole with hinge torque:
        #   [M+m   m l c] [xdd ]   [m l s thd^2 - damping*xd]
        #   [m l c  m l^2] [thdd] = [tau + m g l s           ]
        mat = np.array([[big_m + m, m * l * cos], [m * l * cos, m * l * l]])
        rhs = np.array([m * l * sin * self.thetad ** 2 - self.damping * self.xd,
                        tau + m * g * l * sin])
        xdd, thdd = np.linalg.solve(mat, rhs)

        # semi-implicit Euler: velocities first, then positions
        self.xd += c.dt * xdd
        self.thetad += c.dt * thdd
        self.x += c.dt * self.xd
        self.theta += c.dt * self.thetad

        if not all(np.isfinite(v) for v in (self.x, self.xd, self.theta, self.thetad)):
            raise EpisodeAbort(f"non-finite balancer state at step {self.t}")

        self.t += 1
        fall = abs(self.theta) > c.fall_pitch
        self.fallen = self.fallen or fall
        done = fall or self.t >= self.horizon
        success = done and not self.fallen

        features = StabilityFeatures(
            fall=fall, roll=0.0, pitch=self.theta, ang_x=0.0, ang_y=self.thetad,
            vert_vel=-l * np.sin(self.theta) * self.thetad,
        )
        track = np.exp(-((self.xd - self.command) / c.track_sigma) ** 2)
        reward = (track
                  - c.w_action_rate * float(((act - self.prev_action) ** 2).sum())
                  - c.w_torque * tau ** 2)
        self.prev_action = act
        return StepResult(self._obs(), self._priv(), features, float(reward), done, success)

    # -- observation assembly ----------------------------------------------

    def _obs(self) -> np.ndarray:
        obs = np.zeros(self.layout.size)
        obs[0] = self.command
        obs[1] = self.thetad                       # base angular velocity
        obs[2] = -np.sin(self.theta)               # gravity projection, body frame
        obs[3] = -np.cos(self.theta)
        obs[4] = self.theta                        # joint position
        obs[5] = self.xd                           # joint velocities (rail, hinge)
        obs[6] = self.thetad
        obs[7] = self.prev_action[0]
        # heightfield window stays zero
        return obs

    def _priv(self) -> PrivilegedState:
        extras = np.array([self.xd, self.damping, self.scale])
        return PrivilegedState(extras=extras, clean_obs=self._obs())

    def mirror_maps(self) -> MirrorMaps:
        """x -> -x mirror: flip signed proprio channels, reverse the window."""
        n = self.layout.size
        perm = np.arange(n)
        signs = np.ones(n)
        signs[[0, 1, 2, 4, 5, 6, 7]] = -1.0        # cmd, angvel, g_x, q, qd, a_prev
        h0 = self.layout.height.start
        perm[h0:] = np.arange(n - 1, h0 - 1, -1)   # reversed heightfield
        return MirrorMaps(obs=SignedMap(perm, signs),
                          act=SignedMap(np.array([0]), np.array([-1.0])))

    def mechanical_energy(self) -> float:
        """Kinetic plus potential energy of the current state (scaled masses)."""
        c = self.config
        m = c.pole_mass * self.scale
        l = c.pole_length
        bob_vx = self.xd + l * np.cos(self.theta) * self.thetad
        bob_vz = -l * np.sin(self.theta) * self.thetad
        kin = 0.5 * c.cart_mass * self.xd ** 2 + 0.5 * m * (bob_vx ** 2 + bob_vz ** 2)
        pot = m * c.gravity * l * np.cos(self.theta)
        return float(kin + pot)
