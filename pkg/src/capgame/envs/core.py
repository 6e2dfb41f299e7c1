"""Shared environment types: observation layout, PD actuation, stability data.

Observations are flat float64 vectors with the fixed channel order
[command, angular velocity, gravity projection, joint pos, joint vel,
previous action, heightfield window]; ObsLayout carries the per-environment
widths. The proprioceptive block (everything between command and
heightfield) is contiguous by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class EpisodeAbort(RuntimeError):
    """Environment dynamics went non-finite; the episode cannot continue."""


@dataclass(frozen=True)
class ObsLayout:
    """Channel widths of the flat observation vector, in order."""

    n_command: int
    n_angvel: int
    n_gravity: int
    n_qpos: int
    n_qvel: int
    n_prev_action: int
    n_height: int

    @property
    def size(self) -> int:
        return (self.n_command + self.n_angvel + self.n_gravity + self.n_qpos
                + self.n_qvel + self.n_prev_action + self.n_height)

    @property
    def command(self) -> slice:
        return slice(0, self.n_command)

    @property
    def proprio(self) -> slice:
        """Angular velocity through previous action: the additive-attack block."""
        return slice(self.n_command, self.size - self.n_height)

    @property
    def height(self) -> slice:
        return slice(self.size - self.n_height, self.size)

    @property
    def n_proprio(self) -> int:
        return self.size - self.n_command - self.n_height


@dataclass(frozen=True)
class SignedMap:
    """Signed permutation y[i] = signs[i] * x[perm[i]]; must be an involution."""

    perm: Array
    signs: Array

    def __post_init__(self):
        n = self.perm.shape[0]
        if self.signs.shape != (n,):
            raise ValueError("perm and signs lengths differ")
        if sorted(self.perm.tolist()) != list(range(n)):
            raise ValueError("perm is not a permutation")
        # involution: applying twice is the identity
        if not np.array_equal(self.perm[self.perm], np.arange(n)):
            raise ValueError("perm is not an involution")
        if not np.allclose(self.signs * self.signs[self.perm], 1.0):
            raise ValueError("signs do not square to identity under perm")

    @classmethod
    def identity(cls, n: int) -> "SignedMap":
        return cls(np.arange(n), np.ones(n))

    def apply(self, v: Array) -> Array:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.perm.shape[0]:
            raise ValueError(f"vector length {v.shape[-1]} does not match map "
                             f"length {self.perm.shape[0]}")
        return self.signs * v[..., self.perm]

    def matrix(self) -> Array:
        n = self.perm.shape[0]
        m = np.zeros((n, n))
        m[np.arange(n), self.perm] = self.signs
        return m


@dataclass(frozen=True)
class MirrorMaps:
    """Observation and action mirror transforms for the symmetry loss."""

    obs: SignedMap
    act: SignedMap


@dataclass(frozen=True)
class PdGains:
    """Per-joint PD gains and torque limits."""

    kp: Array
    kd: Array
    torque_limit: Array

    def __post_init__(self):
        for name, arr in (("kp", self.kp), ("kd", self.kd), ("torque_limit", self.torque_limit)):
            if np.any(np.asarray(arr) <= 0):
                raise ValueError(f"{name} must be positive")

    @classmethod
    def scalar(cls, kp: float, kd: float, limit: float, n_joints: int = 1) -> "PdGains":
        return cls(np.full(n_joints, float(kp)), np.full(n_joints, float(kd)),
                   np.full(n_joints, float(limit)))


def pd_torque(gains: PdGains, target: Array, q: Array, qd: Array,
              gain_scale_p=1.0, gain_scale_d=1.0, torque_scale=1.0) -> Array:
    """PD law with scaled gains and output, clamped to the torque limit.

    tau = clamp(torque_scale * [(gain_scale_p*kp)(target - q)
                                - (gain_scale_d*kd) qd], +-limit)
    Scales may be scalars or per-joint arrays.
    """
    target = np.asarray(target, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    if not (target.shape == q.shape == qd.shape == gains.kp.shape):
        raise ValueError(
            f"joint count mismatch: target {target.shape}, q {q.shape}, "
            f"qd {qd.shape}, gains {gains.kp.shape}"
        )
    raw = (gain_scale_p * gains.kp) * (target - q) - (gain_scale_d * gains.kd) * qd
    tau = np.asarray(torque_scale * raw, dtype=np.float64)
    if not np.isfinite(tau).all():
        raise ValueError("non-finite PD input")
    return np.clip(tau, -gains.torque_limit, gains.torque_limit)


@dataclass(frozen=True)
class StabilityFeatures:
    """Per-step stability channels feeding the adversary reward.

    Planar environments report identically-zero roll channels.
    """

    fall: bool
    roll: float
    pitch: float
    ang_x: float
    ang_y: float
    vert_vel: float

    def as_array(self) -> Array:
        return np.array([float(self.fall), self.roll, self.pitch,
                         self.ang_x, self.ang_y, self.vert_vel])


@dataclass
class PrivilegedState:
    """Simulator-only state for critics and the adversary, never the actor."""

    extras: Array       # true velocities and episode env parameters
    clean_obs: Array    # unperturbed copy of the observation


@dataclass
class StepResult:
    obs: Array
    priv: PrivilegedState
    features: StabilityFeatures
    reward: float
    done: bool
    success: bool
