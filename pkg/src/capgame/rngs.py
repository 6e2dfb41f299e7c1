"""Counter-based random streams keyed by (seed, stream id).

Philox is counter-based, so a fresh RngStream with the same (seed, stream)
always replays the same draw sequence regardless of what other streams did.
Every random decision in the codebase goes through a named stream below;
nothing touches numpy's global RNG.
"""

from __future__ import annotations

import numpy as np

# Stream ids. One per independent source of randomness in a run.
STREAM_PARAM_INIT = 1
STREAM_ENV_INIT = 2
STREAM_MOTION_ACTOR = 3
STREAM_ADV_ACTOR = 4
STREAM_DR = 5
STREAM_MINIBATCH = 6
STREAM_EVAL = 7


class RngStream:
    """Deterministic random stream: (seed, stream, draw index) -> value."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError(f"seed and stream must be non-negative, got ({seed}, {stream})")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def state(self) -> dict:
        """JSON-able snapshot of the underlying counter state."""
        raw = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in raw["state"]["counter"]],
            "buffer_pos": int(raw["buffer_pos"]),
        }

    def snapshot(self) -> dict:
        """Full JSON-able generator state, restorable with restore()."""
        raw = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in raw["state"]["counter"]],
            "key": [int(v) for v in raw["state"]["key"]],
            "buffer": [int(v) for v in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    def restore(self, snap: dict) -> None:
        if snap["seed"] != self.seed or snap["stream"] != self.stream:
            raise ValueError("snapshot belongs to a different (seed, stream)")
        self.generator.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(snap["counter"], dtype=np.uint64),
                "key": np.array(snap["key"], dtype=np.uint64),
            },
            "buffer": np.array(snap["buffer"], dtype=np.uint64),
            "buffer_pos": snap["buffer_pos"],
            "has_uint32": snap["has_uint32"],
            "uinteger": snap["uinteger"],
        }

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"
