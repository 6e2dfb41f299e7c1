"""TerrainStepper: a point-foot rimless-wheel walker over a 1-D heightfield.

The body is a point mass on a stance leg pivoting about the planted foot.
Actions are [ankle target (rad), landing offset (rad)]: the ankle is
PD-actuated toward its target, and when the body has rotated past the step
trigger the swing leg is planted at the first catchable foothold from the
commanded landing point forward (the stance radius telescopes within a
band, the support exchange costs angular velocity). Falls: excessive tilt,
no catchable ground within reach (a wide/deep gap), or a landing height
jump beyond the trip limit.

Foot placement is therefore a discrete, irreversible decision driven by the
mean-centered heightfield window: gap terrain punishes centimeter-scale
aim errors, which is what perceptive and actuation attacks produce.
Success is traversing a fixed distance within the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rngs import RngStream, STREAM_ENV_INIT
from .core import (EpisodeAbort, MirrorMaps, ObsLayout, PdGains,
                   PrivilegedState, SignedMap, StabilityFeatures, StepResult)
from .terrain import Terrain, TerrainConfig


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 0.02
    horizon: int = 500
    body_mass: float = 1.0
    leg_length: float = 0.5
    leg_min: float = 0.4          # shortest usable landing leg
    leg_max: float = 0.65         # longest usable landing leg
    gravity: float = 9.81
    ankle_damping: float = 0.05
    touchdown_keep: tuple = (0.9, 1.0)   # per-episode exchange efficiency range
    mass_scale: tuple = (0.9, 1.1)
    init_spread: float = 0.05
    fall_pitch: float = 0.6
    step_trigger: float = 0.28    # leg angle that starts the touchdown search
    max_step_height: float = 0.14 # landing height jump that counts as a trip
    scan_resolution: float = 0.004
    scan_max: float = 0.45        # horizontal search limit ahead of the body
    kp: float = 30.0
    kd: float = 1.0
    torque_limit: float = 4.0
    ankle_bound: float = 0.6      # ankle-target range (rad)
    stride_bound: float = 0.35    # landing-offset range (rad)
    cmd_range: tuple = (0.3, 0.6)        # target forward velocity (m/s)
    target_distance: float = 2.5
    track_sigma: float = 0.25
    w_action_rate: float = 0.05
    w_torque: float = 1e-3
    w_fall: float = 10.0          # task-reward termination penalty
    n_height: int = 11
    window_span: float = 1.0
    terrain: TerrainConfig = field(default_factory=TerrainConfig)


class TerrainStepper:
    """Planar walker; leg angle phi is positive when the body leads the foot."""

    env_id = "terrain_stepper"

    def __init__(self, config: StepperConfig | None = None):
        self.config = config or StepperConfig()
        c = self.config
        self.layout = ObsLayout(n_command=1, n_angvel=1, n_gravity=2, n_qpos=1,
                                n_qvel=1, n_prev_action=2, n_height=c.n_height)
        self.gains = PdGains.scalar(c.kp, c.kd, c.torque_limit)
        self.action_dim = 2
        self.n_joints = 1             # first action channel is the PD target
        self.action_bound = np.array([c.ankle_bound, c.stride_bound])
        self.priv_dim = 4  # true body velocity (x, z), exchange keep, mass scale
        self.horizon = c.horizon
        self._reset_done = False

    def reset(self, seed: int):
        c = self.config
        rng = RngStream(seed, STREAM_ENV_INIT)
        self.terrain = Terrain(c.terrain, rng)
        self.foot_x = 0.0
        self.foot_y = float(self.terrain.height(0.0))
        self.radius = c.leg_length
        self.phi = float(rng.uniform(-c.init_spread, c.init_spread))
        self.phid = 0.0
        self.command = float(rng.uniform(*c.cmd_range))
        self.keep = float(rng.uniform(*c.touchdown_keep))
        self.scale = float(rng.uniform(*c.mass_scale))
        self.prev_action = np.zeros(2)
        self.stride_cmd = 0.0
        self.t = 0
        self.fallen = False
        self.start_x = self.body_x
        self._reset_done = True
        return self._obs(), self._priv()

    # -- geometry ------------------------------------------------------------

    @property
    def body_x(self) -> float:
        return self.foot_x + self.radius * np.sin(self.phi)

    @property
    def body_z(self) -> float:
        return self.foot_y + self.radius * np.cos(self.phi)

    @property
    def q(self) -> np.ndarray:
        return np.array([self.phi])

    @property
    def qd(self) -> np.ndarray:
        return np.array([self.phid])

    def _body_vel(self) -> tuple[float, float]:
        vx = self.radius * np.cos(self.phi) * self.phid
        vz = -self.radius * np.sin(self.phi) * self.phid
        return float(vx), float(vz)

    # -- stepping ------------------------------------------------------------

    def step(self, torques: np.ndarray, action: np.ndarray | None = None,
             executed: np.ndarray | None = None) -> StepResult:
        """Advance one tick.

        `action` is the policy's clean output (observed as prev-action);
        `executed` is the actuation-path result after any attack, whose
        landing-offset channel steers the next support exchange. It defaults
        to `action`.
        """
        if not self._reset_done:
            raise RuntimeError("step before reset")
        c = self.config
        tau = float(np.asarray(torques).reshape(-1)[0])
        if abs(tau) > float(self.gains.torque_limit[0]) * (1 + 1e-9):
            raise ValueError(f"torque {tau} exceeds limit {self.gains.torque_limit[0]}")
        act = np.zeros(2) if action is None else np.asarray(action, dtype=np.float64).reshape(2)
        exe = act if executed is None else np.asarray(executed, dtype=np.float64).reshape(2)
        self.stride_cmd = float(np.clip(exe[1], -c.stride_bound - 0.2, c.stride_bound + 0.2))

        m = c.body_mass * self.scale
        r = self.radius
        # stance: inverted pendulum about the planted foot
        phidd = (m * c.gravity * r * np.sin(self.phi) + tau
                 - c.ankle_damping * self.phid) / (m * r * r)
        self.phid += c.dt * phidd
        self.phi += c.dt * self.phid

        fall = abs(self.phi) > c.fall_pitch
        if not fall and self.phi >= c.step_trigger and self.phid > 0.0:
            fall = not self._support_exchange()

        if not (np.isfinite(self.phi) and np.isfinite(self.phid)):
            raise EpisodeAbort(f"non-finite stepper state at step {self.t}")

        self.t += 1
        self.fallen = self.fallen or fall
        vx, vz = self._body_vel()
        progressed = self.body_x - self.start_x
        success = (not self.fallen) and progressed >= c.target_distance
        done = fall or success or self.t >= self.horizon

        features = StabilityFeatures(
            fall=fall, roll=0.0, pitch=self.phi, ang_x=0.0, ang_y=self.phid,
            vert_vel=vz,
        )
        track = np.exp(-((vx - self.command) / c.track_sigma) ** 2)
        reward = (track
                  - c.w_action_rate * float(((act - self.prev_action) ** 2).sum())
                  - c.w_torque * tau ** 2
                  - c.w_fall * float(fall))
        self.prev_action = act
        return StepResult(self._obs(), self._priv(), features, float(reward), done, success)

    def _support_exchange(self) -> bool:
        """Plant the swing leg ahead of the body. False means a fall.

        The search starts at the commanded landing point (mirror angle plus
        the landing-offset channel) and takes the first foothold whose
        distance fits the telescoping leg band; the body position is
        continuous across the exchange. No catchable ground this tick just
        keeps the stance rotating.
        """
        c = self.config
        bx, bz = self.body_x, self.body_z
        aim = np.clip(self.phi + self.stride_cmd, 0.04, 1.1)
        dx0 = max(c.leg_length * np.sin(aim), 0.02)
        if dx0 >= c.scan_max:
            dx0 = c.scan_max - c.scan_resolution
        dxs = np.arange(dx0, c.scan_max, c.scan_resolution)
        gys = np.atleast_1d(self.terrain.height(bx + dxs))
        dists = np.hypot(dxs, bz - gys)
        wall = gys >= bz
        band = np.flatnonzero((dists >= c.leg_min) & (dists <= c.leg_max) & ~wall)
        wall_idx = np.flatnonzero(wall)
        if band.size == 0:
            return wall_idx.size == 0   # a wall ahead with no foothold: crash
        i = int(band[0])
        if wall_idx.size and wall_idx[0] < i:
            return False
        gy, dist, dx = float(gys[i]), float(dists[i]), float(dxs[i])
        if abs(gy - self.foot_y) > c.max_step_height:
            return False                # tripped on the height discontinuity
        new_phi = float(np.arctan2(-dx, bz - gy))
        self.phid = self.phid * np.cos(self.phi - new_phi) * self.keep
        self.foot_x = bx + dx
        self.foot_y = gy
        self.radius = dist
        self.phi = new_phi
        return True

    # -- observation assembly --------------------------------------------------

    def _obs(self) -> np.ndarray:
        c = self.config
        obs = np.zeros(self.layout.size)
        obs[0] = self.command
        obs[1] = self.phid
        obs[2] = -np.sin(self.phi)
        obs[3] = -np.cos(self.phi)
        obs[4] = self.phi
        obs[5] = self.phid
        obs[6] = self.prev_action[0]
        obs[7] = self.prev_action[1]
        obs[self.layout.height] = self.terrain.window(self.body_x, c.n_height, c.window_span)
        return obs

    def _priv(self) -> PrivilegedState:
        vx, vz = self._body_vel()
        extras = np.array([vx, vz, self.keep, self.scale])
        return PrivilegedState(extras=extras, clean_obs=self._obs())

    def mirror_maps(self) -> MirrorMaps:
        """Forward stepping is direction-asymmetric: only the identity maps hold."""
        return MirrorMaps(obs=SignedMap.identity(self.layout.size),
                          act=SignedMap.identity(self.action_dim))
