"""Two-stage and multi-stage estimation of the maximizer and the maximum.

Stage 1 spends a fraction of the budget on a regular grid and locates the
maximum roughly with a local linear smoother.  Every later stage samples a
replicated ``(2l+1)^d`` cube around the current center, fits a polynomial
of degree ``r_alpha`` in shifted coordinates and maximizes it over the cube.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Literal, Optional, Sequence

import numpy as np

from twostage.design import Domain, stage1_grid, stage2_design, stage2_zoom_level
from twostage.errors import DesignError, PrecisionError
from twostage.lsq import FitResult, fit_polynomial
from twostage.maximize import MaximizerConfig, certify_interior_max, maximize_over_cube
from twostage.multiindex import MultiIndex, enumerate_index_set, holder_order
from twostage.oracle import SamplingOracle
from twostage.polynomial import poly_mixed_derivative
from twostage.stage1 import SmootherConfig, stage1_estimate

_MIN_EDGE = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class DeltaRule:
    """``explicit``: delta = value.  ``rate``: delta = value * n^(-1/(2 alpha))."""

    kind: Literal["explicit", "rate"] = "rate"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("explicit", "rate"):
            raise ValueError(f"unknown delta rule {self.kind!r}")
        if not self.value > 0:
            raise ValueError(f"delta rule constant must be positive, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> "DeltaRule":
        """Accepts ``0.1``, ``explicit:0.1`` or ``rate:2``."""
        kind, _, val = text.partition(":")
        if not val:
            return cls("explicit", float(kind))
        return cls(kind, float(val))


def optimal_regime(alpha: float, d: int) -> bool:
    """Whether ``alpha > 1 + sqrt(1 + d/2)``, where two stages reach the optimal rates."""
    return alpha > 1.0 + math.sqrt(1.0 + d / 2.0)


@dataclass(frozen=True)
class EstimatorConfig:
    alpha: float = 3.0
    upsilon: float = 0.5
    delta_rule: DeltaRule = DeltaRule()
    smoother: SmootherConfig = SmootherConfig(bandwidth=0.085)
    maximizer: MaximizerConfig = MaximizerConfig()
    stages: int = 2
    # slowly varying factor of the multi-stage schedule; None means log(n)
    m_n: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError(f"alpha must exceed 2, got {self.alpha}")
        if not 0 < self.upsilon < 1:
            raise ValueError(f"upsilon must lie in (0, 1), got {self.upsilon}")
        if self.stages < 2:
            raise ValueError(f"need at least 2 stages, got {self.stages}")

    @property
    def r_alpha(self) -> int:
        return holder_order(self.alpha)

    @property
    def zoom_level(self) -> int:
        return stage2_zoom_level(self.r_alpha)

    def to_dict(self) -> dict:
        return asdict(self)


def select_delta(n: int, alpha: float, rule: DeltaRule, eps_hat: Optional[float] = None,
                 m_n: Optional[float] = None) -> float:
    """Localization parameter.

    Without ``eps_hat`` the rule is applied directly.  With it, the
    multi-stage schedule ``max(m_n * eps_hat, c * n^(-1/(2 alpha)))`` is used,
    where ``c`` is the rate constant (1 for explicit rules).
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not alpha > 2:
        raise ValueError(f"alpha must exceed 2, got {alpha}")
    c = rule.value if rule.kind == "rate" else 1.0
    floor = c * n ** (-1.0 / (2.0 * alpha))
    if eps_hat is None:
        return rule.value if rule.kind == "explicit" else floor
    if m_n is None:
        m_n = math.log(n)
    return max(m_n * eps_hat, floor)


def _as_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**6)
    return Fraction(x)


def stages_for_mu(eps_exponent, alpha) -> int:
    """Zoom iterations needed for the location to reach the optimal rate.

    With a preliminary rate ``n^(-gamma)``, ``k`` zooms give
    ``n^(-gamma (alpha-1)^k)``; returns the smallest ``k`` with
    ``gamma (alpha-1)^k >= (alpha-1)/(2 alpha)``.  Exact rational arithmetic;
    floats are read as the nearest simple fraction, so ``1/6`` means one sixth.
    """
    g = _as_fraction(eps_exponent)
    a = _as_fraction(alpha)
    if g <= 0 or a <= 2:
        raise ValueError("need a positive exponent and alpha > 2")
    target = (a - 1) / (2 * a)
    k = 0
    while g * (a - 1) ** k < target:
        k += 1
    return k


def stages_for_M(d: int) -> int:
    """Zoom iterations for the maximum value when alpha is unknown.

    Starting from the rate ``n^(-1/(4+d))``, the smallest ``k`` with
    ``2^k / (4+d) > 1/2``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    k = 0
    while 2 ** (k + 1) <= 4 + d:
        k += 1
    return k


@dataclass
class EstimateResult:
    mu_hat: np.ndarray
    M_hat: float
    theta_hat: Optional[FitResult]
    mu_tilde_trace: list
    derivative_estimates: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mu_hat": self.mu_hat,
            "M_hat": self.M_hat,
            "mu_tilde_trace": self.mu_tilde_trace,
            "derivative_estimates": {",".join(map(str, k)): v for k, v in self.derivative_estimates.items()},
            "diagnostics": self.diagnostics,
        }
        if self.theta_hat is not None:
            out["theta_hat"] = {
                "center": self.theta_hat.center,
                "coefficients": {
                    ",".join(map(str, i)): c
                    for i, c in zip(self.theta_hat.theta_hat.index_set, self.theta_hat.theta_hat.coefficients)
                },
                "condition_estimate": self.theta_hat.condition_estimate,
                "residual_norm": self.theta_hat.residual_norm,
            }
        return jsonable(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        row = {f"mu_hat_{k + 1}": repr(float(v)) for k, v in enumerate(self.mu_hat)}
        row["M_hat"] = repr(float(self.M_hat))
        row["interior"] = int(bool(self.diagnostics.get("interior_certified", False)))
        row["samples_used"] = int(self.diagnostics.get("samples_used", 0))
        return row


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def estimate_derivatives(fit: FitResult, mu_ring, indices: Sequence[MultiIndex]) -> dict:
    """``D^i f_theta_hat(mu_ring)`` for each requested multi-index."""
    r = fit.theta_hat.degree
    out = {}
    for i in indices:
        i = tuple(int(v) for v in i)
        if sum(i) > r:
            raise ValueError(f"derivative order {i} exceeds fitted degree {r}")
        out[i] = poly_mixed_derivative(fit.theta_hat, mu_ring, i)
    return out


def _zoom_budgets(remaining: int, n_zoom: int) -> list[int]:
    base = remaining // n_zoom
    budgets = [base] * n_zoom
    budgets[-1] += remaining - base * n_zoom
    return budgets


def plan_budgets(domain: Domain, n: int, config: EstimatorConfig):
    """Stage-1 lattice and zoom-stage budgets; raises before any sampling.

    Budget the stage-1 lattice cannot use rolls over to the zoom stages,
    which are given equal shares with the remainder on the last one.
    """
    d = domain.dimension
    if n < 2:
        raise DesignError(f"budget must be at least 2, got {n}")
    n1 = min(max(int(round(config.upsilon * n)), 1), n - 1)
    plan1 = stage1_grid(domain, n1)
    budgets = _zoom_budgets(n - plan1.total, config.stages - 1)
    npts = (2 * config.zoom_level + 1) ** d
    if min(budgets) < npts:
        raise DesignError(
            f"budget {n} leaves {min(budgets)} samples for a zoom stage that needs {npts}"
        )
    return plan1, budgets


def multi_stage_estimate(oracle: SamplingOracle, domain: Domain, n: int,
                         config: EstimatorConfig) -> EstimateResult:
    d = domain.dimension
    r = config.r_alpha
    l = config.zoom_level
    plan1, budgets = plan_budgets(domain, n, config)
    n1 = plan1.requested
    start_used = oracle.samples_used

    y1 = oracle.sample_many(plan1.expanded())
    s1 = stage1_estimate(plan1.points, y1, domain, config.smoother)

    max_delta = float(np.min(domain.edges)) / (2 * l)
    center = s1.mu_tilde
    trace = [s1.mu_tilde.copy()]
    stage_diags = []
    delta = select_delta(n, config.alpha, config.delta_rule)
    for j, n2 in enumerate(budgets):
        if j > 0:
            proposal = select_delta(n, config.alpha, config.delta_rule,
                                    eps_hat=delta ** (config.alpha - 1), m_n=config.m_n)
            delta = min(delta, proposal)
        capped = delta > max_delta
        delta = min(delta, max_delta)
        if 2 * l * delta < _MIN_EDGE:
            raise PrecisionError(f"zoom cube edge {2 * l * delta:.3g} is below double precision")
        plan = stage2_design(center, delta, l, n2, domain)
        y = oracle.sample_many(plan.expanded())
        fit = fit_polynomial(plan, y, r)
        mx = maximize_over_cube(fit.theta_hat, l * delta, config.maximizer)
        mu_hat = plan.center + mx.argmax
        trace.append(plan.center.copy())
        stage_diags.append({
            "delta": delta,
            "delta_capped": capped,
            "requested_center": center,
            "center": plan.center,
            "shift": plan.diagnostics["shift"],
            "translated": plan.diagnostics["translated"],
            "n_requested": n2,
            "n_used": plan.total,
            "n_unused": plan.unused,
            "n3": plan.n3,
            "condition_estimate": fit.condition_estimate,
            "on_boundary": mx.on_boundary,
            "in_inner_cube": mx.in_inner_cube,
            "newton_iterations": mx.iterations,
        })
        center = mu_hat

    derivs = estimate_derivatives(fit, mx.argmax, enumerate_index_set(r, d).indices)
    used = oracle.samples_used - start_used
    diagnostics = {
        "interior_certified": certify_interior_max(mx, fit.theta_hat),
        "in_inner_cube": mx.in_inner_cube,
        "on_boundary": mx.on_boundary,
        "optimal_regime": optimal_regime(config.alpha, d),
        "r_alpha": r,
        "zoom_level": l,
        "stage1": {
            "n_requested": n1,
            "n_used": plan1.total,
            "n_unused": plan1.unused,
            "per_dim": plan1.diagnostics["per_dim"],
            "degenerate": s1.degenerate,
        },
        "stages": stage_diags,
        "budget": n,
        "samples_used": used,
    }
    return EstimateResult(mu_hat, mx.value, fit, trace, derivs, diagnostics)


def two_stage_estimate(oracle: SamplingOracle, domain: Domain, n: int,
                       config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    if config.stages != 2:
        config = EstimatorConfig(**{**config.__dict__, "stages": 2})
    return multi_stage_estimate(oracle, domain, n, config)
