"""Preliminary location estimate from the stage-1 data.

A local linear smoother is evaluated on a regular grid spanning the data,
the best grid point is taken, and a quadratic through the surrounding
``3^d`` block of fitted values refines it to sub-cell accuracy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Literal

import numpy as np
from scipy.spatial import cKDTree

from twostage.design import Domain
from twostage.errors import EstimationError, RankDeficientError
from twostage.multiindex import enumerate_index_set, monomial_matrix

Kernel = Literal["tricube", "gaussian"]

# Gaussian weights are truncated at this many bandwidths (exp(-32) ~ 1e-14).
GAUSSIAN_CUTOFF = 8.0
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SmootherConfig:
    bandwidth: float
    eval_grid_per_dim: int = 41
    kernel: Kernel = "tricube"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.eval_grid_per_dim < 8:
            raise ValueError("evaluation grid needs at least 8 points per dimension")
        if self.kernel not in ("tricube", "gaussian"):
            raise ValueError(f"unknown kernel {self.kernel!r}")

    @property
    def support(self) -> float:
        return self.bandwidth * (1.0 if self.kernel == "tricube" else GAUSSIAN_CUTOFF)


def kernel_weights(u: np.ndarray, kernel: Kernel) -> np.ndarray:
    if kernel == "tricube":
        return np.where(u < 1.0, (1.0 - np.minimum(u, 1.0) ** 3) ** 3, 0.0)
    return np.exp(-0.5 * u * u)


def span_to_bandwidth(span: float, domain: Domain) -> float:
    """Radius of the ball holding a fraction ``span`` of a uniform design.

    Approximates a loess-style span (a fraction of the sample) by an
    absolute bandwidth, ignoring boundary truncation of the ball.
    """
    if not 0 < span <= 1:
        raise ValueError(f"span must be in (0, 1], got {span}")
    d = domain.dimension
    unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return (span * float(np.prod(domain.edges)) / unit_ball) ** (1.0 / d)


def local_linear_surface(points, values, eval_points, config: SmootherConfig):
    """Local linear fits at every evaluation point.

    Returns ``(fitted, counts)``; ``fitted`` is NaN wherever fewer than
    ``d + 2`` data points carry positive weight or the local system is
    numerically singular.  ``counts`` is the number of positively weighted
    points at each evaluation point.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float)
    E = np.atleast_2d(np.asarray(eval_points, dtype=float))
    d = X.shape[1]
    h = config.bandwidth
    pairs = cKDTree(E).sparse_distance_matrix(cKDTree(X), config.support, output_type="ndarray")
    ei, dj = pairs["i"], pairs["j"]
    w = kernel_weights(pairs["v"] / h, config.kernel)
    pos = w > 0
    ei, dj, w = ei[pos], dj[pos], w[pos]
    m = E.shape[0]
    counts = np.bincount(ei, minlength=m)

    phi = np.empty((ei.size, d + 1))
    phi[:, 0] = 1.0
    phi[:, 1:] = (X[dj] - E[ei]) / h
    M = np.empty((m, d + 1, d + 1))
    for a in range(d + 1):
        for b in range(a, d + 1):
            M[:, a, b] = M[:, b, a] = np.bincount(ei, weights=w * phi[:, a] * phi[:, b], minlength=m)
    rhs = np.empty((m, d + 1))
    wy = w * y[dj]
    for a in range(d + 1):
        rhs[:, a] = np.bincount(ei, weights=wy * phi[:, a], minlength=m)

    fitted = np.full(m, np.nan)
    ok = counts >= d + 2
    if np.any(ok):
        eig = np.linalg.eigvalsh(M[ok])
        well = eig[:, 0] > 1e-10 * eig[:, -1]
        idx = np.flatnonzero(ok)[well]
        if idx.size:
            sol = np.linalg.solve(M[idx], rhs[idx][:, :, None])[:, :, 0]
            fitted[idx] = sol[:, 0]
    return fitted, counts


def local_linear_fit(points, values, x0, config: SmootherConfig) -> float:
    x0 = np.asarray(x0, dtype=float)
    fitted, counts = local_linear_surface(points, values, x0[None, :], config)
    if not np.isfinite(fitted[0]):
        raise RankDeficientError(
            f"local linear system at {x0} is rank deficient ({counts[0]} weighted points); "
            "bandwidth too small"
        )
    return float(fitted[0])


@dataclass
class Stage1Result:
    mu_tilde: np.ndarray
    eval_points: np.ndarray
    fitted: np.ndarray
    counts: np.ndarray
    grid_shape: tuple[int, ...]
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def fitted_max(self) -> float:
        return float(np.nanmax(self.fitted))

    def to_csv(self, path) -> None:
        d = self.eval_points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + ["fitted", "count"])
            for pt, v, c in zip(self.eval_points, self.fitted, self.counts):
                w.writerow([repr(float(t)) for t in pt] + [repr(float(v)), int(c)])


def evaluation_grid(points: np.ndarray, domain: Domain, per_dim: int):
    """Regular grid over the data's bounding box, rows in dictionary order."""
    lo = np.maximum(points.min(axis=0), domain.lower)
    hi = np.minimum(points.max(axis=0), domain.upper)
    axes = [np.linspace(a, b, per_dim) for a, b in zip(lo, hi)]
    grid = np.array(list(product(*axes)))
    return grid, axes


def _argmax_first(values: np.ndarray) -> tuple[int, bool]:
    """Index of the maximum, lowest index among near-ties; and whether all tie."""
    finite = np.isfinite(values)
    top = np.max(values[finite])
    tol = _TIE_RTOL * (1.0 + abs(top))
    tied = finite & (values >= top - tol)
    return int(np.argmax(tied)), bool(np.all(tied[finite]))


def _refine(fitted_grid: np.ndarray, at: tuple[int, ...], axes) -> np.ndarray:
    """Vertex of a quadratic fitted to the 3^d block around ``at``.

    Falls back to per-axis parabolas when the block is incomplete or the
    quadratic is not concave.  The step is clamped to one cell per axis.
    """
    d = len(at)
    steps = np.array([ax[1] - ax[0] for ax in axes])
    base = np.array([ax[i] for ax, i in zip(axes, at)])
    sizes = fitted_grid.shape
    interior = all(0 < i < s - 1 for i, s in zip(at, sizes))
    offset = np.zeros(d)
    done = False
    if interior:
        block_idx = np.array(list(product((-1, 0, 1), repeat=d)))
        vals = np.array([fitted_grid[tuple(np.array(at) + b)] for b in block_idx])
        if np.all(np.isfinite(vals)):
            iset = enumerate_index_set(2, d)
            coef, *_ = np.linalg.lstsq(monomial_matrix(block_idx.astype(float), iset), vals, rcond=None)
            g = np.array([coef[iset.position(tuple(int(k == j) for k in range(d)))] for j in range(d)])
            H = np.empty((d, d))
            for j in range(d):
                for k in range(d):
                    e = [0] * d
                    e[j] += 1
                    e[k] += 1
                    c = coef[iset.position(tuple(e))]
                    H[j, k] = 2 * c if j == k else c
            if np.max(np.linalg.eigvalsh(H)) < 0:
                offset = -np.linalg.solve(H, g)
                done = True
    if not done:
        for j in range(d):
            if not 0 < at[j] < sizes[j] - 1:
                continue
            lo_i = list(at)
            hi_i = list(at)
            lo_i[j] -= 1
            hi_i[j] += 1
            fm, f0, fp = fitted_grid[tuple(lo_i)], fitted_grid[at], fitted_grid[tuple(hi_i)]
            curv = fm - 2 * f0 + fp
            if np.isfinite(curv) and curv < 0:
                offset[j] = 0.5 * (fm - fp) / curv
    offset = np.clip(offset, -1.0, 1.0)
    return base + offset * steps


def stage1_estimate(points, values, domain: Domain, config: SmootherConfig) -> Stage1Result:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    if points.shape[0] == 0:
        raise ValueError("stage-1 data is empty")
    grid, axes = evaluation_grid(points, domain, config.eval_grid_per_dim)
    fitted, counts = local_linear_surface(points, values, grid, config)
    if not np.any(np.isfinite(fitted)):
        raise EstimationError("local linear fit failed at every evaluation point; bandwidth too small")
    shape = (config.eval_grid_per_dim,) * domain.dimension
    k, degenerate = _argmax_first(fitted)
    at = np.unravel_index(k, shape)
    if degenerate:
        mu = grid[k].copy()
    else:
        mu = _refine(fitted.reshape(shape), tuple(int(i) for i in at), axes)
    mu = domain.clip(mu)
    return Stage1Result(
        mu, grid, fitted, counts, shape, degenerate,
        {"grid_argmax": grid[k].copy(), "n_valid": int(np.isfinite(fitted).sum())},
    )
