"""Deterministic counter-based random number generation.

State is a (seed, counter) pair.  Every draw keys a fresh Philox stream on the
pair and then advances the counter, so identical states yield identical values
on every platform, and replaying a sequence of draws from a saved state is
bit-exact.  Child states for independent streams (per-image masks, per-step
noise) are derived with an integer mix, never by sharing a state across users.
"""

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Standard splitmix64 finalizer; pure integer ops keep it platform-stable.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass
class RngState:
    """Splittable deterministic RNG: (seed, counter) fully determine all draws."""

    seed: int
    counter: int = 0

    def _generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.counter & _MASK64], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        self.counter += 1
        return gen

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform samples in [lo, hi). Requires lo < hi."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        return self._generator().uniform(lo, hi, size=shape)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian samples; std=0 yields a constant tensor of ``mean``."""
        if std < 0:
            raise ValueError(f"normal requires std >= 0, got {std}")
        if std == 0:
            self._generator()  # still consume a counter step for replay stability
            return np.full(shape, float(mean))
        return self._generator().normal(mean, std, size=shape)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in [lo, hi)."""
        return self._generator().integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def child(self, tag: int) -> "RngState":
        """Independent stream derived from (seed, counter-position, tag).

        Does not advance this state, so children are a pure function of the
        parent's current value and the tag.
        """
        mixed = _splitmix64(self.seed ^ _splitmix64((self.counter << 32) ^ (tag & _MASK64)))
        return RngState(seed=mixed, counter=0)

    def clone(self) -> "RngState":
        return RngState(self.seed, self.counter)
