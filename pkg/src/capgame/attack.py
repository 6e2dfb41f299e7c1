"""Bounded joint state/action perturbations with a per-step binary gate.

An attack vector carries one gate bit plus every perturbation channel:
additive proprioceptive noise, multiplicative+additive heightfield
corruption, an action-target shift, PD-gain multiplicative offsets, and a
torque multiplicative offset. Multiplicative channels are stored as offsets
d applied as (1 + gate*d), so a closed gate is exactly the identity; the
application functions short-circuit on gate == 0 to keep unperturbed steps
bit-identical. Commands are never perturbed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs.core import ObsLayout, StabilityFeatures

Array = np.ndarray

# continuous channel order inside a flat attack vector:
# [ds1 (n_proprio), ds2 (1), ds3 (n_height), da1 (n_act), da2, da3, da4]


@dataclass(frozen=True)
class AttackDims:
    """Channel widths tying an attack space to one environment."""

    n_proprio: int
    n_height: int
    n_act: int

    @property
    def n_continuous(self) -> int:
        return self.n_proprio + 1 + self.n_height + self.n_act + 3

    @classmethod
    def for_env(cls, env) -> "AttackDims":
        return cls(env.layout.n_proprio, env.layout.n_height, env.action_dim)


@dataclass(frozen=True)
class PerturbationBounds:
    """Per-channel thresholds and the level multiplier scaling them.

    Multiplicative channels (s2, a2, a3, a4) must keep eps * level < 1 so
    applied factors (1 + d) stay positive.
    """

    eps_s1: float = 0.05   # proprio additive, per channel
    eps_s2: float = 0.2    # heightfield multiplicative offset
    eps_s3: float = 0.05   # heightfield additive (m)
    eps_a1: float = 0.1    # action-target additive (rad)
    eps_a2: float = 0.2    # P-gain multiplicative offset
    eps_a3: float = 0.2    # D-gain multiplicative offset
    eps_a4: float = 0.2    # torque multiplicative offset
    level: int = 1

    def __post_init__(self):
        for name in ("eps_s1", "eps_s2", "eps_s3", "eps_a1", "eps_a2", "eps_a3", "eps_a4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.level not in (1, 2, 3, 4):
            raise ValueError(f"level must be in 1..4, got {self.level}")
        for name in ("eps_s2", "eps_a2", "eps_a3", "eps_a4"):
            if getattr(self, name) * self.level >= 1.0:
                raise ValueError(
                    f"effective multiplicative bound {name}*level = "
                    f"{getattr(self, name) * self.level} must stay below 1"
                )

    def vector(self, dims: AttackDims) -> Array:
        """Effective per-channel bounds (eps * level), flat channel order."""
        parts = [np.full(dims.n_proprio, self.eps_s1), [self.eps_s2],
                 np.full(dims.n_height, self.eps_s3), np.full(dims.n_act, self.eps_a1),
                 [self.eps_a2], [self.eps_a3], [self.eps_a4]]
        return float(self.level) * np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


@dataclass
class AttackVector:
    """One adversary action: gate bit plus all perturbation channels."""

    gate: int
    ds1: Array    # proprio additive
    ds2: float    # heightfield multiplicative offset
    ds3: Array    # heightfield additive
    da1: Array    # action-target additive
    da2: float    # P-gain multiplicative offset
    da3: float    # D-gain multiplicative offset
    da4: float    # torque multiplicative offset

    @classmethod
    def identity(cls, dims: AttackDims, gate: int = 0) -> "AttackVector":
        return cls(gate, np.zeros(dims.n_proprio), 0.0, np.zeros(dims.n_height),
                   np.zeros(dims.n_act), 0.0, 0.0, 0.0)

    @classmethod
    def from_flat(cls, flat: Array, gate: int, dims: AttackDims) -> "AttackVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (dims.n_continuous,):
            raise ValueError(f"flat attack length {flat.shape} != {dims.n_continuous}")
        p, k, a = dims.n_proprio, dims.n_height, dims.n_act
        return cls(int(gate), flat[:p], float(flat[p]), flat[p + 1:p + 1 + k],
                   flat[p + 1 + k:p + 1 + k + a], float(flat[-3]), float(flat[-2]),
                   float(flat[-1]))

    def flat(self) -> Array:
        return np.concatenate([self.ds1, [self.ds2], self.ds3, self.da1,
                               [self.da2, self.da3, self.da4]])


def check_bounds(atk: AttackVector, bounds: PerturbationBounds, dims: AttackDims) -> None:
    """Reject attack vectors outside the effective admissible set."""
    limit = bounds.vector(dims)
    flat = atk.flat()
    if flat.shape != limit.shape:
        raise ValueError(f"attack has {flat.shape[0]} channels, bounds expect {limit.shape[0]}")
    over = np.abs(flat) > limit + 1e-12
    if over.any():
        idx = int(np.flatnonzero(over)[0])
        raise ValueError(
            f"attack channel {idx} = {flat[idx]:.6g} exceeds bound {limit[idx]:.6g}"
        )
    if atk.gate not in (0, 1):
        raise ValueError(f"gate must be 0 or 1, got {atk.gate}")


def apply_state_attack(obs: Array, atk: AttackVector, layout: ObsLayout,
                       bounds: PerturbationBounds, dims: AttackDims) -> Array:
    """Perturb one observation. Commands are untouched; gate 0 is identity."""
    check_bounds(atk, bounds, dims)
    if atk.gate == 0:
        return obs
    out = obs.copy()
    out[layout.proprio] += atk.ds1
    h = obs[layout.height]
    out[layout.height] = (1.0 + atk.ds2) * h + atk.ds3
    return out


def apply_action_attack(action: Array, atk: AttackVector, bounds: PerturbationBounds,
                        dims: AttackDims):
    """Perturb the actuation path: returns (target, p scale, d scale, torque scale)."""
    check_bounds(atk, bounds, dims)
    if atk.gate == 0:
        return action, 1.0, 1.0, 1.0
    return action + atk.da1, 1.0 + atk.da2, 1.0 + atk.da3, 1.0 + atk.da4


@dataclass(frozen=True)
class AdvRewardCoeffs:
    """Weights of the stability-failure reward and the per-attack penalty."""

    c_fall: float = 10.0
    c_tilt: float = 1.0
    c_angvel: float = 0.2
    c_vvel: float = 0.5
    lam: float = 0.1

    def __post_init__(self):
        if min(self.c_fall, self.c_tilt, self.c_angvel, self.c_vvel, self.lam) < 0:
            raise ValueError("reward coefficients and lam must be non-negative")


def adversarial_reward(f: StabilityFeatures, coeffs: AdvRewardCoeffs,
                       gate: int) -> tuple[float, float]:
    """Raw stability-failure reward and its gate-penalized version.

    raw = c_fall*fall + c_tilt*(roll^2+pitch^2) + c_angvel*(wx^2+wy^2)
          + c_vvel*vz^2;   penalized = raw - lam*gate.
    """
    vals = f.as_array()
    if not np.isfinite(vals).all():
        raise ValueError("non-finite stability features")
    raw = (coeffs.c_fall * float(f.fall)
           + coeffs.c_tilt * (f.roll ** 2 + f.pitch ** 2)
           + coeffs.c_angvel * (f.ang_x ** 2 + f.ang_y ** 2)
           + coeffs.c_vvel * f.vert_vel ** 2)
    return raw, raw - coeffs.lam * gate


def sample_dr(bounds: PerturbationBounds, dims: AttackDims, rng) -> AttackVector:
    """Domain randomization: uniform over the admissible set, gate always open."""
    limit = bounds.vector(dims)
    flat = rng.uniform(-limit, limit)
    return AttackVector.from_flat(flat, gate=1, dims=dims)


def pap_wrap(atk: AttackVector) -> AttackVector:
    """Persistent-attack baseline: force the gate open every step."""
    return replace(atk, gate=1)
