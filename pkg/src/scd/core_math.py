"""Numeric substrate: checked matrix helpers, counter-based RNG streams and dropout masks.

Matrices are plain ``numpy.ndarray`` objects (float64 by default). The helpers
here add the shape and finiteness checks the rest of the package relies on.
"""
from __future__ import annotations

import functools

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def as_matrix(x, dtype=DEFAULT_DTYPE) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    check_finite(a)
    return a


def check_finite(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with dimension and finiteness checks."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


@dataclass(frozen=True)
class RngState:
    """Seed plus a stream path; each distinct path is an independent, reproducible stream.

    Streams are keyed Philox generators, so the draws depend only on
    ``(seed, stream)`` and not on what other streams have consumed.
    """

    seed: int
    stream: tuple[int, ...] = field(default=())

    def spawn(self, *ids: int) -> "RngState":
        return RngState(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=_philox_key(int(self.seed), self.stream)))


@functools.lru_cache(maxsize=4096)
def _philox_key(seed: int, stream: tuple[int, ...]) -> np.ndarray:
    key = np.random.SeedSequence(entropy=seed, spawn_key=stream).generate_state(2, dtype=np.uint64)
    key.setflags(write=False)
    return key


@dataclass(frozen=True)
class DropoutMask:
    rate: float
    keep: np.ndarray  # boolean keep indicators

    @property
    def shape(self) -> tuple[int, ...]:
        return self.keep.shape

    @property
    def keep_scale(self) -> float:
        return 1.0 / (1.0 - self.rate)

    def scaled(self) -> np.ndarray:
        """Multiplicative mask: keep_scale where kept, 0 where dropped."""
        return self.keep * self.keep_scale


def _check_rate(rate: float) -> float:
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return rate


def sample_dropout_mask(shape, rate: float, rng: RngState | np.random.Generator) -> DropoutMask:
    """Each entry kept independently with probability ``1 - rate``."""
    rate = _check_rate(rate)
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if rate == 0.0:
        return DropoutMask(0.0, np.ones(shape, dtype=bool))
    gen = rng.generator() if isinstance(rng, RngState) else rng
    return DropoutMask(rate, gen.random(shape) >= rate)


def apply_dropout(x: np.ndarray, mask: DropoutMask) -> np.ndarray:
    """Inverted dropout: kept entries scaled by ``1/(1-rate)``, dropped entries zeroed."""
    x = np.asarray(x)
    if x.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match input shape {x.shape}")
    if mask.rate == 0.0:
        return x.copy()
    return x * mask.scaled()
