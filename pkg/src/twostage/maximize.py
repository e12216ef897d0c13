"""Maximize a fitted polynomial over the centred cube ``[-w, w]^d``.

Lattice seeding followed by projected Newton ascent from the best few
seeds.  Coordinates sitting on a face whose gradient points outward are
frozen, so a boundary maximum satisfies the first-order KKT conditions.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from twostage.errors import EstimationError
from twostage.polynomial import PolynomialModel, poly_eval, poly_eval_many, poly_gradient, poly_hessian

N_STARTS = 3
_TIE_ATOL = 1e-12


@dataclass(frozen=True)
class MaximizerConfig:
    seeds_per_dim: int = 9
    max_newton_iters: int = 50
    grad_tol: float = 1e-12
    step_shrink: float = 0.5

    def __post_init__(self):
        if self.seeds_per_dim < 5:
            raise ValueError("seeds_per_dim must be >= 5")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be positive")
        if not 0 < self.grad_tol < 1:
            raise ValueError("grad_tol must lie in (0, 1)")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class MaxResult:
    argmax: np.ndarray
    value: float
    on_boundary: bool
    iterations: int
    half_width: float
    seed_max: float

    @property
    def in_inner_cube(self) -> bool:
        """Whether the argmax lies in the cube shrunk to 2/3 of its half-width."""
        return bool(np.max(np.abs(self.argmax)) <= 2.0 * self.half_width / 3.0)


def _projected_newton(p: PolynomialModel, x: np.ndarray, fx: float, w: float,
                      config: MaximizerConfig, check_bounds: bool = False):
    iters = 0
    for iters in range(1, config.max_newton_iters + 1):
        g = poly_gradient(p, x)
        outward = ((x <= -w) & (g < 0)) | ((x >= w) & (g > 0))
        free = ~outward
        gf = g[free]
        if gf.size == 0 or np.linalg.norm(gf) * w <= config.grad_tol * (1.0 + abs(fx)):
            break
        Hf = poly_hessian(p, x)[np.ix_(free, free)]
        try:
            np.linalg.cholesky(-Hf)
            direction = np.linalg.solve(-Hf, gf)
        except np.linalg.LinAlgError:
            direction = gf * (w / np.max(np.abs(gf)))
        t = 1.0
        improved = False
        while t > 1e-12:
            xn = x.copy()
            xn[free] = np.clip(x[free] + t * direction, -w, w)
            fn = poly_eval(p, xn)
            if fn > fx:
                improved = True
                break
            t *= config.step_shrink
        if not improved:
            break
        x, fx = xn, fn
        if check_bounds:
            assert np.all(np.abs(x) <= w), "Newton iterate left the cube"
    return x, fx, iters


def maximize_over_cube(p: PolynomialModel, half_width: float,
                       config: MaximizerConfig = MaximizerConfig(),
                       check_bounds: bool = False) -> MaxResult:
    if not half_width > 0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    d = p.dimension
    if d > 6:
        raise ValueError(f"grid seeding is limited to d <= 6, got d={d}")
    w = float(half_width)
    axis = np.linspace(-w, w, config.seeds_per_dim)
    seeds = np.array(list(product(axis, repeat=d)))
    values = poly_eval_many(p, seeds)
    if not np.all(np.isfinite(values)):
        raise EstimationError("polynomial is not finite on the cube")
    seed_max = float(values.max())
    order = np.argsort(-values, kind="stable")[:N_STARTS]

    finals = []
    for k in order:
        x, fx, it = _projected_newton(p, seeds[k].copy(), float(values[k]), w, config, check_bounds)
        finals.append((x, fx, it))
    best = max(f[1] for f in finals)
    contenders = [f for f in finals if f[1] >= max(best - _TIE_ATOL, seed_max)]
    x, fx, it = min(contenders, key=lambda f: tuple(f[0]))
    on_boundary = bool(np.any(np.abs(x) >= w * (1 - 1e-12)))
    return MaxResult(x, float(fx), on_boundary, it, w, seed_max)


def certify_interior_max(result: MaxResult, p: PolynomialModel) -> bool:
    if result.on_boundary:
        return False
    g = poly_gradient(p, result.argmax)
    if np.linalg.norm(g) > 1e-8 * (1.0 + abs(result.value)):
        return False
    return bool(np.max(np.linalg.eigvalsh(poly_hessian(p, result.argmax))) < 0)
