"""Deterministic toy physics environments, registered by string id."""

from __future__ import annotations

from .balancer import BalancerConfig, PdBalancer
from .core import (EpisodeAbort, MirrorMaps, ObsLayout, PdGains,
                   PrivilegedState, SignedMap, StabilityFeatures, StepResult,
                   pd_torque)
from .stepper import StepperConfig, TerrainStepper
from .terrain import Terrain, TerrainConfig, TERRAIN_KINDS

ENV_IDS = (PdBalancer.env_id, TerrainStepper.env_id)


def make_env(env_id: str, config=None):
    """Instantiate a registered environment by id."""
    if env_id == PdBalancer.env_id:
        return PdBalancer(config)
    if env_id == TerrainStepper.env_id:
        return TerrainStepper(config)
    raise ValueError(f"unknown env id {env_id!r}; registered: {ENV_IDS}")
