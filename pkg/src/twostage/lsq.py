"""Polynomial least squares on the stage-2 cube design.

Columns of the design matrix are divided by ``delta^|i|`` before an
orthogonal factorization, which turns the badly scaled monomial matrix into
the well-conditioned dimensionless one.  The minimizer is the same as the
normal-equations solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from twostage.design import DesignPlan
from twostage.errors import RankDeficientError
from twostage.multiindex import enumerate_index_set, monomial_matrix
from twostage.polynomial import PolynomialModel

_RANK_RTOL = 1e-10


@dataclass
class FitResult:
    theta_hat: PolynomialModel  # in shifted coordinates z = x - center
    center: np.ndarray
    scaling: np.ndarray
    condition_estimate: float
    residual_norm: float
    std_errors: np.ndarray
    n_obs: int

    @property
    def sigma2_hat(self) -> float:
        dof = self.n_obs - len(self.scaling)
        return self.residual_norm**2 / dof if dof > 0 else float("nan")

    def predict(self, x) -> np.ndarray:
        """Fitted values at original-coordinate points."""
        z = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        return monomial_matrix(z, self.theta_hat.index_set) @ self.theta_hat.coefficients

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "coefficient", "std_error"])
            for i, c, s in zip(self.theta_hat.index_set, self.theta_hat.coefficients, self.std_errors):
                w.writerow([" ".join(map(str, i)), repr(float(c)), repr(float(s))])


def _require_stage2(plan: DesignPlan) -> None:
    if plan.kind != "stage2" or plan.center is None or plan.delta is None:
        raise ValueError("a stage-2 plan is required")


def build_design_matrix(plan: DesignPlan, r_alpha: int) -> np.ndarray:
    """Monomial rows of the shifted points ``x_k - center``, one per observation."""
    _require_stage2(plan)
    return monomial_matrix(plan.shifted(), enumerate_index_set(r_alpha, plan.dimension))


def delta_powers(plan: DesignPlan, r_alpha: int) -> np.ndarray:
    _require_stage2(plan)
    return plan.delta ** enumerate_index_set(r_alpha, plan.dimension).degrees.astype(float)


def scaled_design_matrix(plan: DesignPlan, r_alpha: int) -> np.ndarray:
    return build_design_matrix(plan, r_alpha) / delta_powers(plan, r_alpha)


def _factor_matrix(Zs: np.ndarray):
    if Zs.shape[0] < Zs.shape[1]:
        raise RankDeficientError(f"{Zs.shape[0]} observations for {Zs.shape[1]} coefficients")
    Q, R = linalg.qr(Zs, mode="economic")
    s = linalg.svdvals(R)
    if s[-1] <= _RANK_RTOL * s[0]:
        raise RankDeficientError(
            f"scaled design matrix is numerically rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3g})"
        )
    return Q, R, float(s[0] / s[-1])


def _factor(plan: DesignPlan, r_alpha: int):
    Zs = scaled_design_matrix(plan, r_alpha)
    return (Zs, *_factor_matrix(Zs))


def fit_points(points, responses, center, delta: float, r_alpha: int) -> FitResult:
    """Least squares fit of degree ``r_alpha`` in coordinates ``x - center``.

    Columns are scaled by ``delta^|i|`` before factorization.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(responses, dtype=float)
    center = np.asarray(center, dtype=float)
    if y.shape != (points.shape[0],):
        raise ValueError(f"expected {points.shape[0]} responses, got shape {y.shape}")
    index_set = enumerate_index_set(r_alpha, points.shape[1])
    scale = float(delta) ** index_set.degrees.astype(float)
    Zs = monomial_matrix(points - center, index_set) / scale
    Q, R, cond = _factor_matrix(Zs)
    coef_scaled = linalg.solve_triangular(R, Q.T @ y)
    resid = y - Zs @ coef_scaled
    rss = float(resid @ resid)
    n, p = Zs.shape
    sigma2 = rss / (n - p) if n > p else float("nan")
    Rinv = linalg.solve_triangular(R, np.eye(p))
    std = np.sqrt(sigma2 * np.sum(Rinv**2, axis=1)) / scale
    return FitResult(
        PolynomialModel(index_set, coef_scaled / scale),
        center.copy(),
        scale,
        cond,
        float(np.sqrt(rss)),
        std,
        n,
    )


def fit_polynomial(plan: DesignPlan, responses, r_alpha: int) -> FitResult:
    _require_stage2(plan)
    y = np.asarray(responses, dtype=float)
    if y.shape != (plan.total,):
        raise ValueError(f"expected {plan.total} responses, got shape {y.shape}")
    if 2 * plan.l + 1 <= r_alpha:
        raise ValueError(f"zoom level l={plan.l} too small for degree {r_alpha}")
    return fit_points(plan.expanded(), y, plan.center, plan.delta, r_alpha)


def inverse_gram(plan: DesignPlan, r_alpha: int) -> np.ndarray:
    """``(Z^T Z)^{-1}`` assembled from the factorization of the scaled matrix."""
    _, _, R, _ = _factor(plan, r_alpha)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    scale = delta_powers(plan, r_alpha)
    return (Rinv @ Rinv.T) / np.outer(scale, scale)


def gram_structure(plan: DesignPlan, r_alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless Gram factor ``A`` with ``Z^T Z = n3 * D A D``, and ``diag(D)``.

    ``A`` is assembled from the integer lattice offsets of the plan, so it is
    exact and independent of delta, n3 and the center.
    """
    _require_stage2(plan)
    iset = enumerate_index_set(r_alpha, plan.dimension)
    U = monomial_matrix(plan.offsets.astype(float), iset)
    return U.T @ U, delta_powers(plan, r_alpha)
