"""Procedural 1-D heightfields: flat, slope, stairs, and discrete gaps.

Heights are analytic functions of x (no grid), right-continuous at feature
edges so a query exactly at a stair riser returns the upper step. Each
terrain gets seeded jitter on feature placement so episodes differ while
staying deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rngs import RngStream

TERRAIN_KINDS = ("flat", "slope", "stairs", "gaps")


@dataclass(frozen=True)
class TerrainConfig:
    kind: str = "flat"
    amplitude: float = 0.12       # slope grade (rise per meter)
    step_height: float = 0.05     # stairs rise
    step_run: float = 0.6         # stairs tread length
    gap_width: float = 0.2
    gap_spacing: float = 1.2
    gap_depth: float = 0.16       # deeper than the stepper trip limit: landable, lethal
    start_flat: float = 1.0       # flat approach before features begin

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}; choose from {TERRAIN_KINDS}")


class Terrain:
    """Callable heightfield h(x) built from a config and an episode stream."""

    def __init__(self, config: TerrainConfig, rng: RngStream | None = None):
        self.config = config
        # Seeded jitter on where features start; zero when no stream given.
        period = {"stairs": config.step_run, "gaps": config.gap_spacing}.get(config.kind, 0.5)
        self._offset = float(rng.uniform(0.0, period)) if rng is not None else 0.0

    def height(self, x):
        c = self.config
        x = np.asarray(x, dtype=np.float64)
        rel = x - c.start_flat - self._offset
        if c.kind == "flat":
            h = np.zeros_like(x)
        elif c.kind == "slope":
            h = c.amplitude * np.maximum(rel, 0.0)
        elif c.kind == "stairs":
            h = c.step_height * np.maximum(np.floor(rel / c.step_run) + 1.0, 0.0)
        else:  # gaps: flat ground with deep notches every gap_spacing
            phase = np.mod(rel, c.gap_spacing)
            in_gap = (rel >= 0.0) & (phase < c.gap_width)
            h = np.where(in_gap, -c.gap_depth, 0.0)
        return float(h) if h.ndim == 0 else h

    def window(self, x_center: float, n: int, span: float = 1.0) -> np.ndarray:
        """Mean-centered height samples on [x-span/2, x+span/2]."""
        offsets = np.linspace(-span / 2.0, span / 2.0, n)
        h = self.height(x_center + offsets)
        return h - h.mean()
