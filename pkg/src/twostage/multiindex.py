"""Multi-indices, their canonical enumeration and monomial evaluation.

A multi-index is a plain tuple of non-negative ints.  The index set
``I(r, d)`` holds every d-dimensional multi-index with total degree at most
``r``; it is stacked by degree and, within a degree, sorted in dictionary
order on the raw tuple.  Every coefficient vector in the package is laid
out in this order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def degree(i: Sequence[int]) -> int:
    return int(sum(i))


def holder_order(alpha: float) -> int:
    """Largest integer strictly below ``alpha``, i.e. ``ceil(alpha - 1)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return math.ceil(alpha - 1)


def index_set_size(r: int, d: int) -> int:
    _check_rd(r, d)
    return sum(math.comb(d + k - 1, d - 1) for k in range(r + 1))


def _check_rd(r: int, d: int) -> None:
    if r < 0:
        raise ValueError(f"max degree must be >= 0, got {r}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")


def _compositions(k: int, d: int) -> Iterator[MultiIndex]:
    # Yields d-tuples summing to k in ascending dictionary order.
    if d == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in _compositions(k - first, d - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class MultiIndexSet:
    dimension: int
    max_degree: int
    indices: tuple[MultiIndex, ...]
    exponents: np.ndarray = field(repr=False, compare=False)
    degrees: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.indices)

    def __getitem__(self, k: int) -> MultiIndex:
        return self.indices[k]

    def position(self, i: Sequence[int]) -> int:
        return _positions(self.max_degree, self.dimension)[tuple(i)]

    def __contains__(self, i: object) -> bool:
        return tuple(i) in _positions(self.max_degree, self.dimension)  # type: ignore[arg-type]

    @property
    def q(self) -> int:
        """Number of non-intercept terms."""
        return len(self.indices) - 1


@lru_cache(maxsize=None)
def enumerate_index_set(r: int, d: int) -> MultiIndexSet:
    _check_rd(r, d)
    indices = tuple(i for k in range(r + 1) for i in _compositions(k, d))
    exponents = np.array(indices, dtype=np.int64).reshape(len(indices), d)
    exponents.setflags(write=False)
    degrees = exponents.sum(axis=1)
    degrees.setflags(write=False)
    return MultiIndexSet(d, r, indices, exponents, degrees)


@lru_cache(maxsize=None)
def _positions(r: int, d: int) -> dict[MultiIndex, int]:
    return {i: k for k, i in enumerate(enumerate_index_set(r, d).indices)}


def monomial_eval(x: Sequence[float], i: Sequence[int]) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (len(i),):
        raise ValueError(f"point of shape {x.shape} does not match index of length {len(i)}")
    if any(k < 0 for k in i):
        raise ValueError(f"negative entry in multi-index {tuple(i)}")
    # numpy gives 0.0 ** 0 == 1.0, so the zero index is the intercept
    return float(np.prod(x ** np.asarray(i)))


def monomial_matrix(points: np.ndarray, index_set: MultiIndexSet) -> np.ndarray:
    """Rows are the monomial vectors of ``points`` in canonical column order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != index_set.dimension:
        raise ValueError(
            f"points have dimension {points.shape[1]}, index set has {index_set.dimension}"
        )
    return np.prod(points[:, None, :] ** index_set.exponents[None, :, :], axis=2)
