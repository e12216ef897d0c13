"""Monte Carlo experiments: two-stage vs single-stage runs and rate scans.

Replication ``j`` of an experiment with base seed ``s`` uses an oracle
seeded with ``s + j``, so results do not depend on how replications are
distributed over worker processes.  Records are always kept in
replication order.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from twostage.design import Domain, stage1_grid
from twostage.errors import DegenerateScanError
from twostage.estimator import (
    DeltaRule,
    EstimateResult,
    EstimatorConfig,
    multi_stage_estimate,
)
from twostage.oracle import SamplingOracle, get_test_function
from twostage.stage1 import SmootherConfig, local_linear_fit, stage1_estimate

TWO_STAGE = "two-stage"
RMSE_FLOOR = 1e-12


def single_stage_baseline(oracle: SamplingOracle, domain: Domain, n: int, bandwidth: float,
                          eval_grid_per_dim: int = 41, kernel: str = "tricube") -> EstimateResult:
    """Whole budget on one regular grid, local linear fit, refined grid argmax."""
    config = SmootherConfig(bandwidth, eval_grid_per_dim, kernel)
    plan = stage1_grid(domain, n)
    y = oracle.sample_many(plan.expanded())
    s1 = stage1_estimate(plan.points, y, domain, config)
    M_hat = local_linear_fit(plan.points, y, s1.mu_tilde, config)
    diagnostics = {
        "n_requested": n,
        "samples_used": plan.total,
        "per_dim": plan.diagnostics["per_dim"],
        "bandwidth": bandwidth,
        "degenerate": s1.degenerate,
    }
    return EstimateResult(s1.mu_tilde, M_hat, None, [s1.mu_tilde.copy()], {}, diagnostics)


def baseline_label(h: float) -> str:
    return f"baseline-h={h:g}"


@dataclass(frozen=True)
class ExperimentSpec:
    function: str = "sec5"
    function_params: dict = field(default_factory=dict)
    sigma: float = 0.1
    n: int = 1255
    estimator: EstimatorConfig = EstimatorConfig(delta_rule=DeltaRule("explicit", 0.1))
    run_two_stage: bool = True
    baseline_n: Optional[int] = None
    baseline_bandwidths: tuple = ()
    replications: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.baseline_bandwidths and self.baseline_n is None:
            raise ValueError("baseline bandwidths given without a baseline budget")

    @property
    def methods(self) -> list[str]:
        out = [TWO_STAGE] if self.run_two_stage else []
        return out + [baseline_label(h) for h in self.baseline_bandwidths]


def sec5_experiment(replications: int = 500, seed: int = 0, workers: int = 1,
                    bandwidths: Sequence[float] = (0.07, 0.085, 0.10)) -> ExperimentSpec:
    """25x25 + 9x70 two-stage design against a 36x36 single-stage grid."""
    return ExperimentSpec(
        function="sec5",
        sigma=0.1,
        n=25 * 25 + 9 * 70,
        estimator=EstimatorConfig(alpha=3.0, upsilon=0.5, delta_rule=DeltaRule("explicit", 0.1),
                                  smoother=SmootherConfig(0.085)),
        baseline_n=36 * 36,
        baseline_bandwidths=tuple(bandwidths),
        replications=replications,
        seed=seed,
        workers=workers,
    )


def _record(rep: int, seed: int, method: str, tf, result: Optional[EstimateResult],
            error: Optional[str]) -> dict:
    d = tf.dimension
    rec = {"rep": rep, "seed": seed, "method": method}
    if result is None:
        rec.update({f"mu_hat_{k + 1}": float("nan") for k in range(d)})
        rec.update(M_hat=float("nan"), sq_err_mu=float("nan"), sq_err_M=float("nan"),
                   interior=0, samples_used=0, error=error)
        return rec
    rec.update({f"mu_hat_{k + 1}": float(v) for k, v in enumerate(result.mu_hat)})
    rec["M_hat"] = float(result.M_hat)
    rec["sq_err_mu"] = float(np.sum((result.mu_hat - tf.true_mu) ** 2))
    rec["sq_err_M"] = float((result.M_hat - tf.true_M) ** 2)
    rec["interior"] = int(bool(result.diagnostics.get("interior_certified", False)))
    rec["samples_used"] = int(result.diagnostics["samples_used"])
    rec["error"] = ""
    return rec


def _replicate(args) -> list[dict]:
    spec, rep = args
    tf = get_test_function(spec.function, **spec.function_params)
    seed = spec.seed + rep
    records = []
    if spec.run_two_stage:
        try:
            res = multi_stage_estimate(SamplingOracle(tf, spec.sigma, seed), tf.domain, spec.n, spec.estimator)
            records.append(_record(rep, seed, TWO_STAGE, tf, res, None))
        except Exception as exc:  # recorded per replication, never fatal
            records.append(_record(rep, seed, TWO_STAGE, tf, None, f"{type(exc).__name__}: {exc}"))
    for h in spec.baseline_bandwidths:
        label = baseline_label(h)
        try:
            res = single_stage_baseline(SamplingOracle(tf, spec.sigma, seed), tf.domain, spec.baseline_n, h,
                                        spec.estimator.smoother.eval_grid_per_dim,
                                        spec.estimator.smoother.kernel)
            records.append(_record(rep, seed, label, tf, res, None))
        except Exception as exc:
            records.append(_record(rep, seed, label, tf, None, f"{type(exc).__name__}: {exc}"))
    return records


def run_replications(spec: ExperimentSpec) -> list[dict]:
    jobs = [(spec, j) for j in range(spec.replications)]
    if spec.workers <= 1:
        chunks = map(_replicate, jobs)
        return [r for chunk in chunks for r in chunk]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        chunks = pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * spec.workers)))
        return [r for chunk in chunks for r in chunk]


def _quantiles(x: np.ndarray) -> dict:
    if x.size == 0:
        return {k: float("nan") for k in ("mean", "median", "q25", "q75", "q90")}
    return {
        "mean": float(np.mean(x)),
        "median": float(np.median(x)),
        "q25": float(np.quantile(x, 0.25)),
        "q75": float(np.quantile(x, 0.75)),
        "q90": float(np.quantile(x, 0.90)),
    }


def summarize(records: list[dict], spec: ExperimentSpec) -> dict[str, dict]:
    out = {}
    for method in spec.methods:
        rows = [r for r in records if r["method"] == method]
        ok = [r for r in rows if not r["error"]]
        mu = np.array([r["sq_err_mu"] for r in ok])
        M = np.array([r["sq_err_M"] for r in ok])
        budget = spec.n if method == TWO_STAGE else spec.baseline_n
        entry = {
            "budget": budget,
            "replications": len(rows),
            "failures": len(rows) - len(ok),
            "failure_rate": (len(rows) - len(ok)) / len(rows) if rows else float("nan"),
        }
        entry.update({f"sq_err_mu_{k}": v for k, v in _quantiles(mu).items()})
        entry.update({f"sq_err_M_{k}": v for k, v in _quantiles(M).items()})
        if method == TWO_STAGE:
            entry["interior_rate"] = float(np.mean([r["interior"] for r in ok])) if ok else float("nan")
        out[method] = entry
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


@dataclass
class McResult:
    spec: ExperimentSpec
    records: list
    summary: dict

    def best_baseline(self, stat: str = "sq_err_mu_median") -> tuple[str, dict]:
        candidates = [(m, s) for m, s in self.summary.items() if m != TWO_STAGE]
        return min(candidates, key=lambda ms: ms[1][stat])

    def summary_rows(self) -> list[dict]:
        return [{"method": m, **s} for m, s in self.summary.items()]


def run_mc(spec: ExperimentSpec, out_dir=None) -> McResult:
    records = run_replications(spec)
    result = McResult(spec, records, summarize(records, spec))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "replications.csv", records)
        write_csv(out / "summary.csv", result.summary_rows())
    return result


# -- rate scans ---------------------------------------------------------------


@dataclass(frozen=True)
class RateScanSpec:
    n_grid: tuple
    replications: int = 200
    alpha: float = 4.0
    delta_constant: float = 1.0
    function: str = "quad"
    function_params: dict = field(default_factory=dict)
    sigma: float = 0.1
    bandwidth: float = 0.2
    upsilon: float = 0.5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        n = np.asarray(self.n_grid, dtype=float)
        if n.size < 4 or np.any(np.diff(n) <= 0):
            raise ValueError("n_grid must be strictly increasing with at least 4 points")
        if math.log10(n[-1] / n[0]) < 1.5:
            raise ValueError("n_grid must span at least 1.5 decades")

    @property
    def target_mu(self) -> float:
        return -(self.alpha - 1) / (2 * self.alpha)

    target_M = -0.5

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(alpha=self.alpha, upsilon=self.upsilon,
                               delta_rule=DeltaRule("rate", self.delta_constant),
                               smoother=SmootherConfig(self.bandwidth))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float


def loglog_slope(n, rmse) -> SlopeFit:
    """OLS of ``log rmse`` on ``log n``."""
    fit = stats.linregress(np.log(np.asarray(n, dtype=float)), np.log(np.asarray(rmse, dtype=float)))
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.intercept))


@dataclass
class RateScanResult:
    spec: RateScanSpec
    table: list
    mu: Optional[SlopeFit]
    M: Optional[SlopeFit]
    degenerate: bool

    def rows(self) -> list[dict]:
        out = []
        for row in self.table:
            r = dict(row)
            r["slope_mu"] = self.mu.slope if self.mu else float("nan")
            r["slope_mu_se"] = self.mu.stderr if self.mu else float("nan")
            r["target_mu"] = self.spec.target_mu
            r["slope_M"] = self.M.slope if self.M else float("nan")
            r["slope_M_se"] = self.M.stderr if self.M else float("nan")
            r["target_M"] = self.spec.target_M
            out.append(r)
        return out


def rate_scan(spec: RateScanSpec, out_dir=None, strict: bool = False) -> RateScanResult:
    """RMSE of the two-stage estimates over a geometric budget grid.

    Scans whose RMSEs all sit at the floating-point floor are reported as
    degenerate (or raise ``DegenerateScanError`` when ``strict``).
    """
    table = []
    for k, n in enumerate(spec.n_grid):
        n = int(n)
        exp = ExperimentSpec(function=spec.function, function_params=spec.function_params,
                             sigma=spec.sigma, n=n, estimator=spec.estimator(),
                             replications=spec.replications, seed=spec.seed + 1_000_003 * k,
                             workers=spec.workers)
        res = run_mc(exp)
        ok = [r for r in res.records if not r["error"]]
        table.append({
            "n": n,
            "delta": spec.delta_constant * n ** (-1.0 / (2 * spec.alpha)),
            "rmse_mu": math.sqrt(np.mean([r["sq_err_mu"] for r in ok])) if ok else float("nan"),
            "rmse_M": math.sqrt(np.mean([r["sq_err_M"] for r in ok])) if ok else float("nan"),
            "failures": len(res.records) - len(ok),
        })
    ns = [row["n"] for row in table]
    mu_r = np.array([row["rmse_mu"] for row in table])
    M_r = np.array([row["rmse_M"] for row in table])
    degenerate = bool(np.all(mu_r <= RMSE_FLOOR) or np.all(M_r <= RMSE_FLOOR))
    if degenerate and strict:
        raise DegenerateScanError("all RMSEs are at the floating-point floor")
    result = RateScanResult(
        spec, table,
        None if degenerate else loglog_slope(ns, mu_r),
        None if degenerate else loglog_slope(ns, M_r),
        degenerate,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "rate_scan.csv", result.rows())
    return result


# -- sensitivity curves ---------------------------------------------------------


def delta_sensitivity(spec: ExperimentSpec, delta_grid: Sequence[float], out_dir=None) -> list[dict]:
    """Two-stage MSE against the localization parameter, with the baseline reference."""
    baseline_ref = _baseline_reference(spec)
    rows = []
    for delta in delta_grid:
        est = replace(spec.estimator, delta_rule=DeltaRule("explicit", float(delta)))
        res = run_mc(replace(spec, estimator=est, baseline_bandwidths=(), baseline_n=None))
        s = res.summary[TWO_STAGE]
        rows.append({"delta": float(delta), "mse_mu": s["sq_err_mu_mean"],
                     "median_sq_err_mu": s["sq_err_mu_median"], "mse_M": s["sq_err_M_mean"],
                     "failures": s["failures"], **baseline_ref})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "delta_scan.csv", rows)
    return rows


def bandwidth_sensitivity(spec: ExperimentSpec, h_grid: Sequence[float], out_dir=None) -> list[dict]:
    """Two-stage MSE against the stage-1 bandwidth, with the baseline reference."""
    baseline_ref = _baseline_reference(spec)
    rows = []
    for h in h_grid:
        est = replace(spec.estimator, smoother=replace(spec.estimator.smoother, bandwidth=float(h)))
        res = run_mc(replace(spec, estimator=est, baseline_bandwidths=(), baseline_n=None))
        s = res.summary[TWO_STAGE]
        rows.append({"bandwidth": float(h), "mse_mu": s["sq_err_mu_mean"],
                     "median_sq_err_mu": s["sq_err_mu_median"], "mse_M": s["sq_err_M_mean"],
                     "failures": s["failures"], **baseline_ref})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "bandwidth_scan.csv", rows)
    return rows


def baseline_bandwidth_scan(spec: ExperimentSpec, h_grid: Sequence[float]) -> list[dict]:
    """Single-stage MSE against its bandwidth."""
    res = run_mc(replace(spec, run_two_stage=False, baseline_bandwidths=tuple(h_grid)))
    return [{"bandwidth": float(h), "mse_mu": res.summary[baseline_label(h)]["sq_err_mu_mean"],
             "median_sq_err_mu": res.summary[baseline_label(h)]["sq_err_mu_median"]}
            for h in h_grid]


def _baseline_reference(spec: ExperimentSpec) -> dict:
    if not spec.baseline_bandwidths:
        return {}
    res = run_mc(replace(spec, run_two_stage=False))
    label, s = res.best_baseline("sq_err_mu_mean")
    return {"baseline_method": label, "baseline_mse_mu": s["sq_err_mu_mean"],
            "baseline_median_sq_err_mu": s["sq_err_mu_median"]}


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
