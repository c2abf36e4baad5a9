"""Deterministic, splittable random number generation.

All stochasticity in the package flows through :class:`RngState`. There is no
global RNG: every function that draws randomness takes an explicit state, and
state objects can be split into independent child streams by name. The
underlying bit generator is Philox (counter-based), which produces identical
streams for identical seeds on every platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "philox4x64"


def _child_seed(seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RngState:
    """A named stream of randomness backed by a counter-based generator.

    ``spawn`` derives an independent child stream from a string tag, so the
    consumption pattern of one component can never shift the stream seen by
    another. Draw methods advance this state's own counter sequentially.
    """

    seed: int
    algorithm: str = ALGORITHM
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm: {self.algorithm!r}")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        return self._gen

    def spawn(self, tag: str) -> "RngState":
        """Derive an independent child stream keyed by ``tag``."""
        return RngState(_child_seed(self.seed, tag))

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self.generator.normal(mean, std, size=shape)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self.generator.integers(low, high, size=shape)
