"""Dense float64 array substrate and the seedable random source.

Arrays are plain ``numpy.ndarray`` objects of dtype float64; ``Tensor`` is only
an alias used in signatures.  Signal tensors are laid out batch x time x
channel so that a kernel window along time is contiguous.

The random source wraps numpy's PCG64 bit generator.  PCG64 output for a given
seed is fixed by numpy's stream-compatibility policy, so identical seeds give
identical draws on every platform.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray
DTYPE = np.float64


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=DTYPE)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape) or int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return x.reshape(shape)


class Rng:
    """Single-owner deterministic random stream (numpy PCG64)."""

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None):
        """Integers drawn uniformly from [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, loc=0.0, scale=1.0, shape=()) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def child(self) -> "Rng":
        """Derive an independent stream; advances this one by one draw."""
        return Rng(int(self._gen.integers(0, 2**63)))

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def uniform(rng: Rng, lo: float, hi: float, shape) -> Tensor:
    if not lo < hi:
        raise ValueError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
    u = rng.random(shape)
    out = lo + (hi - lo) * u
    # lo + (hi-lo)*u can round up to hi when the range is tiny
    return np.where(out >= hi, np.nextafter(hi, lo), out)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def reduce_moments(x: Tensor, axis: int) -> tuple[Tensor, Tensor]:
    """Mean and biased (divide-by-n) variance along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    mean = x.mean(axis=axis)
    centered = x - np.expand_dims(mean, axis)
    var = (centered * centered).mean(axis=axis)
    return mean, var
