"""Counter-based random streams, one per simulated path.

Path ``j`` of stream ``s`` under seed ``seed`` draws its normals from a
Philox-4x64 bit generator whose 128-bit key is ``(seed, j)`` and whose
counter starts at ``(0, 0, 0, s)``. A path's draws therefore depend only on
``(seed, s, j)`` and never on how many paths are simulated, in which order,
or on how many workers run. Separate streams (``s``) give independent
randomness for conditional re-simulation and deviation tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _U64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not 0 <= int(self.stream) <= _U64:
            raise ValueError("stream must be an unsigned 64-bit integer")

    def generator(self, path: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=[int(self.seed), int(path)], counter=[0, 0, 0, int(self.stream)])
        return np.random.Generator(bitgen)

    def normals(self, num_paths: int, shape: tuple, first_path: int = 0) -> np.ndarray:
        """Standard normals of shape ``(num_paths, *shape)``; row ``r`` is path ``first_path + r``."""
        shape = tuple(int(s) for s in shape)
        out = np.empty((num_paths,) + shape)
        for r in range(num_paths):
            out[r] = self.generator(first_path + r).standard_normal(shape)
        return out

    def derive(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)
