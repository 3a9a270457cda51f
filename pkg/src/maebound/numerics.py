"""Dense vector helpers, norms, seeded generators and finite differences.

Vectors and matrices are plain ``float64`` numpy arrays; the ``as_vector`` and
``as_matrix`` helpers enforce the shape/finiteness invariants at API borders.

Random streams come from numpy's PCG64 bit generator keyed through
``SeedSequence``. A :class:`Rng` is an immutable (seed, path) pair, so
``Rng(7).child("init")`` and ``Rng(7).child("noise")`` are independent but fully
reproducible streams. numpy guarantees stream stability for PCG64 and for
``Generator.standard_normal``/``random``/``permutation`` across platforms.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

ALGORITHM = "numpy.PCG64+SeedSequence"


def as_vector(data, name: str = "vector") -> np.ndarray:
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} has non-finite entries")
    return v


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} has non-finite entries")
    return m


def vector_norm(v, p: int = 2) -> float:
    """L1 or L2 norm of a non-empty vector."""
    if p not in (1, 2):
        raise ParameterError(f"p must be 1 or 2, got {p!r}")
    v = as_vector(v)
    if p == 1:
        return float(np.sum(np.abs(v)))
    return float(np.sqrt(np.dot(v, v)))


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ParameterError("seed path components must be non-negative")
    return part


@dataclass(frozen=True)
class Rng:
    """Splittable seed handle.

    ``generator()`` always returns a *fresh* generator positioned at the start of
    this handle's stream, so two calls on equal handles give equal draws.
    """

    seed: int
    path: tuple = ()

    algorithm = ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    def child(self, *parts) -> "Rng":
        return Rng(self.seed, self.path + tuple(_key(p) for p in parts))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


RngLike = Union[Rng, np.random.Generator, int]


def to_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Rng):
        return rng.generator()
    return Rng(int(rng)).generator()


def gaussian_matrix(rows: int, cols: int, mean: float, variance: float, rng: RngLike) -> np.ndarray:
    """rows x cols matrix of i.i.d. N(mean, variance) draws."""
    if rows <= 0 or cols <= 0:
        raise DimensionError("rows and cols must be positive")
    if variance < 0:
        raise ParameterError(f"variance must be non-negative, got {variance}")
    gen = to_generator(rng)
    z = gen.standard_normal((rows, cols))
    return mean + np.sqrt(variance) * z


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ParameterError("step h must be positive")
    x = np.array(as_vector(x), dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = float(f(x))
        x[i] = orig - h
        fm = float(f(x))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
