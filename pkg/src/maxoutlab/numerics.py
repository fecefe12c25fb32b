"""Dense float64 primitives and the seeded random generator used everywhere.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
Randomness goes through :class:`Prng`, a thin wrapper over numpy's PCG64
bit generator that fixes the stream-splitting rule:

    stream ``s`` of seed ``S``  ==  PCG64(SeedSequence(S, spawn_key=(s,)))

so a given ``(seed, stream_id, call sequence)`` yields the same numbers on
every platform numpy supports, and distinct stream ids never share state.
"""
from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class Prng:
    """Seeded PCG64 generator with derivable, independent substreams."""

    algorithm_id = ALGORITHM

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise DomainError("seed and stream_id must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "Prng":
        """Fresh generator for ``stream_id`` under the same seed.

        Independent of how many numbers this generator has already drawn.
        """
        return Prng(self.seed, stream_id)

    def normal(self, scale: float, shape) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=shape)

    def uniform(self, low: float, high: float, shape=None):
        return self.generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self.generator.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def random(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def __repr__(self):
        return f"Prng(seed={self.seed}, stream_id={self.stream_id})"


def as_tensor(x) -> np.ndarray:
    """Convert to a C-contiguous float64 array, rejecting NaN/Inf."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise DomainError("tensor contains non-finite values")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def max_over_axis(t: np.ndarray, axis: int):
    """Maxima along ``axis`` and the lowest index attaining each maximum."""
    t = np.asarray(t)
    if not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {t.ndim}")
    if t.shape[axis] == 0:
        raise DomainError("cannot take the max over an empty axis")
    # np.argmax returns the first occurrence, which is the tie rule we want
    idx = np.argmax(t, axis=axis)
    vals = np.take_along_axis(t, np.expand_dims(idx, axis), axis=axis)
    return np.squeeze(vals, axis=axis), idx


def sample_bernoulli(rng: Prng, p: float, shape) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p}")
    return (rng.random(shape) < p).astype(np.float64)
