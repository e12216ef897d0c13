"""Noisy sampling oracle ``Y = f(x) + sigma * xi`` and built-in test functions.

Noise is drawn from a counter-based stream: draw ``k`` of an oracle with
seed ``s`` is a pure function of ``(s, k)``, so a batch of draws equals the
same draws made one at a time and parallel replications never share state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from twostage.design import Domain
from twostage.errors import BudgetExhausted

_TWO_POW_53 = float(2**53)


def normal_draws(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals for draw indices ``start, ..., start + count - 1``.

    Each index owns one Philox block; two of its four words feed Box-Muller.
    """
    if count == 0:
        return np.empty(0)
    bg = np.random.Philox(key=int(seed) % 2**128, counter=int(start))
    words = bg.random_raw(4 * count).reshape(count, 4)
    u1 = ((words[:, 0] >> np.uint64(11)).astype(float) + 1.0) / _TWO_POW_53  # (0, 1]
    u2 = (words[:, 1] >> np.uint64(11)).astype(float) / _TWO_POW_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class TestFunction:
    """A regression function with a known maximizer on its reference domain."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    true_mu: np.ndarray
    true_M: float
    hessian_at_mu: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self.func(x[None, :])[0])
        return self.func(x)


def _fd_hessian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    d = x.size
    H = np.empty((d, d))
    eye = np.eye(d) * h
    for j in range(d):
        for k in range(d):
            pts = np.array([x + eye[j] + eye[k], x + eye[j] - eye[k],
                            x - eye[j] + eye[k], x - eye[j] - eye[k]])
            v = f(pts)
            H[j, k] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    return 0.5 * (H + H.T)


def check_maximum_condition(tf: TestFunction) -> None:
    """Raise unless ``true_mu`` is interior with a negative-definite Hessian."""
    mu = tf.true_mu
    if not (np.all(mu > tf.domain.lower) and np.all(mu < tf.domain.upper)):
        raise ValueError(f"{tf.name}: maximizer {mu} is not interior")
    H = _fd_hessian(tf.func, mu)
    if np.max(np.linalg.eigvalsh(H)) >= 0:
        raise ValueError(f"{tf.name}: Hessian at maximizer is not negative definite")


# -- built-ins ---------------------------------------------------------------

# Maximizer of 5x(x-1)y(y-1)sin(11x)sin(11y) on [0,1]^2.  It factors as
# 5 g(x) g(y); mu is the root of g' near 0.433, computed to 40 digits with
# mpmath and cross-checked on a 2001^2 grid.
SEC5_MU = 0.43291216407104859748
SEC5_M = 0.30060724246451805761
SEC5_HESS_DIAG = -39.002010702509061730


def builtin_sec5(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"sec5 is bivariate, got point of shape {x.shape}")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"sec5 is defined on [0,1]^2, got {x}")
    return float(_sec5(x[None, :])[0])


def _sec5(p: np.ndarray) -> np.ndarray:
    x, y = p[:, 0], p[:, 1]
    return 5.0 * x * (x - 1.0) * y * (y - 1.0) * np.sin(11.0 * x) * np.sin(11.0 * y)


def sec5() -> TestFunction:
    return TestFunction(
        "sec5",
        _sec5,
        Domain.unit(2),
        np.array([SEC5_MU, SEC5_MU]),
        SEC5_M,
        np.diag([SEC5_HESS_DIAG, SEC5_HESS_DIAG]),
    )


def quadratic(mu=(0.1, -0.2), hessian=((-2.0, 0.5), (0.5, -1.0)), M: float = 1.0,
              lower=None, upper=None) -> TestFunction:
    """``f(x) = M + (x - mu)^T H (x - mu) / 2`` with negative-definite ``H``."""
    mu = np.asarray(mu, dtype=float)
    H = np.asarray(hessian, dtype=float)
    d = mu.size
    if H.shape != (d, d) or not np.allclose(H, H.T):
        raise ValueError("hessian must be a symmetric d x d matrix")
    if np.max(np.linalg.eigvalsh(H)) >= 0:
        raise ValueError("hessian must be negative definite")
    lower = -np.ones(d) if lower is None else lower
    upper = np.ones(d) if upper is None else upper

    def f(p: np.ndarray) -> np.ndarray:
        z = p - mu
        return M + 0.5 * np.einsum("ij,jk,ik->i", z, H, z)

    return TestFunction("quad", f, Domain(lower, upper), mu, float(M), H,
                        {"mu": mu.tolist(), "hessian": H.tolist(), "M": M})


def gaussian_bump(mu=(0.4, 0.6), scale: float = 0.25, M: float = 1.0,
                  lower=None, upper=None) -> TestFunction:
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    lower = np.zeros(d) if lower is None else lower
    upper = np.ones(d) if upper is None else upper

    def f(p: np.ndarray) -> np.ndarray:
        return M * np.exp(-np.sum((p - mu) ** 2, axis=1) / (2 * scale**2))

    return TestFunction("bump", f, Domain(lower, upper), mu, float(M),
                        -M / scale**2 * np.eye(d),
                        {"mu": mu.tolist(), "scale": scale, "M": M})


REGISTRY: dict[str, Callable[..., TestFunction]] = {
    "sec5": sec5,
    "quad": quadratic,
    "bump": gaussian_bump,
}


def get_test_function(name: str, **params) -> TestFunction:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown test function {name!r}; choose from {sorted(REGISTRY)}") from None
    tf = factory(**params)
    check_maximum_condition(tf)
    return tf


class SamplingOracle:
    """Budgeted noisy evaluations of a test function.

    One instance per estimation run; not meant to be shared across threads.
    """

    def __init__(self, truth: TestFunction, sigma: float, seed: int,
                 budget_cap: Optional[int] = None):
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        self.truth = truth
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.budget_cap = budget_cap
        self.samples_used = 0

    @property
    def remaining(self) -> Optional[int]:
        if self.budget_cap is None:
            return None
        return self.budget_cap - self.samples_used

    def sample(self, x) -> float:
        return float(self.sample_many(np.asarray(x, dtype=float)[None, :])[0])

    def sample_many(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[0]
        if self.budget_cap is not None and self.samples_used + m > self.budget_cap:
            raise BudgetExhausted(
                f"request for {m} samples exceeds remaining budget {self.remaining}"
            )
        values = self.truth.func(points)
        if self.sigma > 0:
            values = values + self.sigma * normal_draws(self.seed, self.samples_used, m)
        self.samples_used += m
        return values
