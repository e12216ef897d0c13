"""Dense multivariate polynomials over a canonical multi-index basis.

All derivatives are exact: they are read off the coefficient vector with
the falling-factorial rule, never approximated numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from twostage.multiindex import MultiIndex, MultiIndexSet, enumerate_index_set, monomial_matrix


@dataclass(frozen=True)
class PolynomialModel:
    index_set: MultiIndexSet
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != (len(self.index_set),):
            raise ValueError(
                f"expected {len(self.index_set)} coefficients, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_terms(cls, terms: dict[MultiIndex, float], r: int, d: int) -> "PolynomialModel":
        """Build from a sparse ``{multi_index: coefficient}`` mapping."""
        index_set = enumerate_index_set(r, d)
        c = np.zeros(len(index_set))
        for i, v in terms.items():
            c[index_set.position(i)] += v
        return cls(index_set, c)

    @property
    def dimension(self) -> int:
        return self.index_set.dimension

    @property
    def degree(self) -> int:
        return self.index_set.max_degree

    def terms(self) -> dict[MultiIndex, float]:
        return {i: float(c) for i, c in zip(self.index_set, self.coefficients) if c != 0.0}

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return poly_eval(self, x)
        return poly_eval_many(self, x)


def _check_point(p: PolynomialModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dimension,):
        raise ValueError(f"point of shape {x.shape} does not match dimension {p.dimension}")
    return x


def poly_eval(p: PolynomialModel, x) -> float:
    x = _check_point(p, x)
    return float(monomial_matrix(x[None, :], p.index_set)[0] @ p.coefficients)


def poly_eval_many(p: PolynomialModel, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return monomial_matrix(points, p.index_set) @ p.coefficients


def _falling(n: np.ndarray, k: int) -> np.ndarray:
    out = np.ones_like(n, dtype=float)
    for j in range(k):
        out = out * (n - j)
    return out


def derivative_terms(p: PolynomialModel, order: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and exponents of ``D^order p`` as a sparse term list."""
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (p.dimension,) or np.any(order < 0):
        raise ValueError(f"bad derivative order {tuple(order)} for dimension {p.dimension}")
    E = p.index_set.exponents
    keep = np.all(E >= order, axis=1)
    factor = np.ones(keep.sum())
    for k in range(p.dimension):
        factor = factor * _falling(E[keep, k], int(order[k]))
    return p.coefficients[keep] * factor, E[keep] - order


def _eval_terms(coef: np.ndarray, exps: np.ndarray, x: np.ndarray) -> float:
    if coef.size == 0:
        return 0.0
    return float(np.prod(x[None, :] ** exps, axis=1) @ coef)


def poly_mixed_derivative(p: PolynomialModel, x, i: Sequence[int]) -> float:
    x = _check_point(p, x)
    coef, exps = derivative_terms(p, i)
    return _eval_terms(coef, exps, x)


def poly_gradient(p: PolynomialModel, x) -> np.ndarray:
    x = _check_point(p, x)
    d = p.dimension
    g = np.empty(d)
    for j in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[j] = 1
        g[j] = _eval_terms(*derivative_terms(p, e), x)
    return g


def poly_hessian(p: PolynomialModel, x) -> np.ndarray:
    x = _check_point(p, x)
    d = p.dimension
    H = np.zeros((d, d))
    if p.degree < 2:
        return H
    for j in range(d):
        for k in range(j, d):
            e = np.zeros(d, dtype=np.int64)
            e[j] += 1
            e[k] += 1
            H[j, k] = H[k, j] = _eval_terms(*derivative_terms(p, e), x)
    return H


def poly_shift(p: PolynomialModel, c) -> PolynomialModel:
    """Return ``q`` with ``q(x) == p(x - c)``, re-expanded binomially."""
    c = _check_point(p, c)
    index_set = p.index_set
    out = np.zeros(len(index_set))
    for i, theta in zip(index_set, p.coefficients):
        if theta == 0.0:
            continue
        # (x_k - c_k)^{i_k} = sum_j C(i_k, j) x_k^j (-c_k)^{i_k - j}
        for j in product(*(range(ik + 1) for ik in i)):
            w = theta
            for ik, jk, ck in zip(i, j, c):
                w *= math.comb(ik, jk) * (-ck) ** (ik - jk)
            out[index_set.position(j)] += w
    return PolynomialModel(index_set, out)


def poly_rescale(p: PolynomialModel, s: float) -> PolynomialModel:
    """Return ``q`` with ``q(u) == p(s * u)``."""
    return PolynomialModel(p.index_set, p.coefficients * float(s) ** p.index_set.degrees)
