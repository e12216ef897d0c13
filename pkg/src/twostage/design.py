"""Stage-1 lattice designs and stage-2 replicated cube designs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Literal, Optional

import numpy as np

from twostage.errors import DesignError


@dataclass(frozen=True)
class Domain:
    """Closed hyper-rectangle ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("domain bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"empty domain: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Domain":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def edges(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class BudgetSplit:
    n: int
    n1: int
    n2: int
    upsilon: float

    @classmethod
    def from_fraction(cls, n: int, upsilon: float) -> "BudgetSplit":
        if not 0.0 < upsilon < 1.0:
            raise ValueError(f"upsilon must lie in (0, 1), got {upsilon}")
        if n < 2:
            raise ValueError(f"budget must be at least 2, got {n}")
        n1 = min(max(int(round(upsilon * n)), 1), n - 1)
        return cls(n, n1, n - n1, upsilon)


@dataclass
class DesignPlan:
    points: np.ndarray
    replications: np.ndarray
    kind: Literal["stage1", "stage2"]
    requested: int
    # stage-2 only
    center: Optional[np.ndarray] = None
    delta: Optional[float] = None
    l: Optional[int] = None
    offsets: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> int:
        return int(self.replications.sum())

    @property
    def unused(self) -> int:
        return self.requested - self.total

    @property
    def n3(self) -> int:
        if self.kind != "stage2":
            raise AttributeError("n3 is only defined for stage-2 plans")
        return int(self.replications[0])

    def expanded(self) -> np.ndarray:
        """Design points with each replicate listed consecutively."""
        return np.repeat(self.points, self.replications, axis=0)

    def shifted(self) -> np.ndarray:
        """Replicated design points relative to the plan center."""
        if self.center is None:
            raise AttributeError("plan has no center")
        return self.expanded() - self.center

    def to_csv(self, path) -> None:
        d = self.dimension
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + ["replication"])
            for pt, rep in zip(self.points, self.replications):
                w.writerow([repr(float(v)) for v in pt] + [int(rep)])


def integer_root(n: int, d: int) -> int:
    """Largest ``m`` with ``m**d <= n``."""
    m = int(round(n ** (1.0 / d)))
    while m**d > n:
        m -= 1
    while (m + 1) ** d <= n:
        m += 1
    return m


def _lattice(m: int, d: int) -> np.ndarray:
    # Row-major: last coordinate varies fastest, so rows are in dictionary order.
    return np.array(list(product(range(m), repeat=d)), dtype=np.int64).reshape(-1, d)


def stage1_grid(domain: Domain, n1: int) -> DesignPlan:
    """Cell-centred ``m^d`` lattice with ``m = floor(n1^(1/d))``."""
    d = domain.dimension
    if n1 < 2**d:
        raise DesignError(f"stage-1 budget {n1} is below 2^d = {2**d}")
    m = integer_root(n1, d)
    idx = _lattice(m, d)
    points = domain.lower + (idx + 0.5) * (domain.edges / m)
    plan = DesignPlan(points, np.ones(m**d, dtype=np.int64), "stage1", n1)
    plan.diagnostics["per_dim"] = m
    return plan


def stage2_zoom_level(r_alpha: int) -> int:
    """Smallest ``l`` with ``2l >= r_alpha``."""
    if r_alpha < 1:
        raise ValueError(f"r_alpha must be >= 1, got {r_alpha}")
    return (r_alpha + 1) // 2


def fit_cube(center, half_width: float, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """Minimal translation of ``C(center, half_width)`` into the domain.

    Returns ``(new_center, shift)``.
    """
    center = np.asarray(center, dtype=float)
    if np.any(2 * half_width > domain.edges):
        raise DesignError(
            f"cube of half-width {half_width:g} does not fit in domain with edges {domain.edges}"
        )
    lo = domain.lower + half_width
    hi = domain.upper - half_width
    new = np.minimum(np.maximum(center, lo), hi)
    return new, new - center


def stage2_design(center, delta: float, l: int, n2: int, domain: Domain) -> DesignPlan:
    center = np.asarray(center, dtype=float)
    d = domain.dimension
    if center.shape != (d,):
        raise ValueError(f"center of shape {center.shape} does not match dimension {d}")
    if not delta > 0:
        raise DesignError(f"delta must be positive, got {delta}")
    if l < 1:
        raise DesignError(f"zoom level must be >= 1, got {l}")
    npts = (2 * l + 1) ** d
    if n2 < npts:
        raise DesignError(f"stage-2 budget {n2} is below one replication per point ({npts})")
    center, shift = fit_cube(center, l * delta, domain)
    n3 = n2 // npts
    offsets = _lattice(2 * l + 1, d) - l
    points = center + offsets * delta
    # Rounding in center + j*delta can leave a corner a hair outside.
    points = domain.clip(points)
    plan = DesignPlan(
        points,
        np.full(npts, n3, dtype=np.int64),
        "stage2",
        n2,
        center=center,
        delta=float(delta),
        l=l,
        offsets=offsets,
    )
    plan.diagnostics["shift"] = shift
    plan.diagnostics["translated"] = bool(np.any(shift != 0.0))
    return plan
