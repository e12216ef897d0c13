"""Command-line entry point.

Every command writes its outputs and a ``manifest.json`` (resolved
configuration, seed and library versions) to the output directory, taken
from ``--out``, else ``$TWOSTAGE_OUT``, else ``./twostage-runs``.
Values from ``--config FILE`` (``key = value`` lines or a JSON object) act
as defaults that explicit flags override.

Exit codes: 0 success, 2 usage or precondition error, 3 estimation error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from twostage import __version__
from twostage.design import DesignError, stage2_zoom_level
from twostage.errors import EstimationError
from twostage.estimator import (
    DeltaRule,
    EstimatorConfig,
    jsonable,
    multi_stage_estimate,
    plan_budgets,
)
from twostage.harness import (
    ExperimentSpec,
    RateScanSpec,
    bandwidth_sensitivity,
    delta_sensitivity,
    rate_scan,
    run_mc,
    sec5_experiment,
    single_stage_baseline,
)
from twostage.lsq import fit_points
from twostage.maximize import MaximizerConfig, certify_interior_max, maximize_over_cube
from twostage.multiindex import holder_order
from twostage.oracle import SamplingOracle, get_test_function
from twostage.stage1 import SmootherConfig

OUT_ENV = "TWOSTAGE_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_grid(text: str, geometric: bool, integer: bool = False) -> list:
    """``a:b:k`` (k points, geometric or linear) or a comma-separated list."""
    if ":" in text:
        a, b, k = text.split(":")
        a, b, k = float(a), float(b), int(k)
        vals = np.geomspace(a, b, k) if geometric else np.linspace(a, b, k)
    else:
        vals = [float(v) for v in text.split(",")]
    return [int(round(v)) for v in vals] if integer else [float(v) for v in vals]


def _fn_params(items) -> dict:
    out = {}
    for item in items or []:
        key, _, val = item.partition("=")
        out[key.strip()] = json.loads(val)
    return out


def load_config(path) -> dict:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"config line without '=': {line!r}")
            raw[key.strip()] = val.strip()
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value or JSON file with default values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./twostage-runs)")


def _estimation(p: argparse.ArgumentParser, default_fn: str = "sec5") -> None:
    p.add_argument("--fn", default=default_fn, help="test function: sec5, quad, bump")
    p.add_argument("--fn-param", action="append", metavar="KEY=JSON",
                   help="test function parameter, e.g. mu=[0.2,0.3]")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--n", type=int, default=1255)


def _estimator_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--delta", type=float, help="explicit localization parameter")
    p.add_argument("--delta-rule", default="rate:1",
                   help="'rate:c' for c*n^(-1/(2 alpha)) or 'explicit:value'; --delta overrides")
    p.add_argument("--upsilon", type=float, default=0.5)
    p.add_argument("--bandwidth", type=float, default=0.085)
    p.add_argument("--kernel", default="tricube", choices=["tricube", "gaussian"])
    p.add_argument("--eval-grid", type=int, default=41)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--m-n", type=float, help="multi-stage slowly varying factor (default log n)")


def build_parser() -> _Parser:
    parser = _Parser(prog="twostage", description="Two-stage estimation of the maximum of a noisy regression function.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("two-stage", help="one two-stage estimation run")
    _common(p), _estimation(p), _estimator_opts(p)

    p = sub.add_parser("multi-stage", help="one multi-stage estimation run")
    _common(p), _estimation(p), _estimator_opts(p)
    p.set_defaults(stages=3)

    p = sub.add_parser("baseline", help="single-stage grid estimator")
    _common(p), _estimation(p)
    p.set_defaults(n=1296)
    p.add_argument("--bandwidth", type=float, default=0.085)
    p.add_argument("--kernel", default="tricube", choices=["tricube", "gaussian"])
    p.add_argument("--eval-grid", type=int, default=41)

    p = sub.add_parser("fit", help="fit and maximize a polynomial from stage-2 data")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with columns x1..xd,y")
    p.add_argument("--center", required=True, help="comma-separated stage-2 center")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--alpha", type=float, default=3.0)

    p = sub.add_parser("replicate-sec5", help="two-stage 25x25+9x70 vs single-stage 36x36")
    _common(p)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--bandwidths", default="0.07,0.085,0.10", help="baseline bandwidths")

    p = sub.add_parser("rate-scan", help="log-log RMSE slopes over a budget grid")
    _common(p)
    p.add_argument("--fn", default="quad")
    p.add_argument("--fn-param", action="append", metavar="KEY=JSON")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--c", type=float, default=1.0, help="delta = c * n^(-1/(2 alpha))")
    p.add_argument("--n-grid", default="2e3,5e3,1.2e4,3e4,7e4", help="'a:b:k' geometric or a list")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--bandwidth", type=float, default=0.2)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("delta-scan", help="two-stage MSE against delta (or the stage-1 bandwidth)")
    _common(p)
    p.add_argument("--param", default="delta", choices=["delta", "bandwidth"])
    p.add_argument("--grid", default="0.02:0.3:8", help="'a:b:k' linear or a list")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def resolve_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = load_config(args.config)
        sp = _subparser(parser, args.command)
        known = {a.dest: a for a in sp._actions}
        unknown = set(values) - set(known)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        typed = {}
        for k, v in values.items():
            act = known[k]
            if isinstance(v, str) and act.type is not None:
                v = act.type(v)
            if isinstance(act, argparse._AppendAction) and isinstance(v, str):
                v = [v]
            typed[k] = v
        sp.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "twostage-runs")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(path: Path, args, extra=None) -> None:
    manifest = {
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)},
        "seed": args.seed,
        "versions": {
            "twostage": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(jsonable(manifest), indent=2, sort_keys=True) + "\n")


def estimator_config(args) -> EstimatorConfig:
    rule = DeltaRule("explicit", args.delta) if args.delta is not None else DeltaRule.parse(args.delta_rule)
    return EstimatorConfig(
        alpha=args.alpha,
        upsilon=args.upsilon,
        delta_rule=rule,
        smoother=SmootherConfig(args.bandwidth, args.eval_grid, args.kernel),
        maximizer=MaximizerConfig(),
        stages=args.stages,
        m_n=args.m_n,
    )


def _report(result, tf, out: Path, stream) -> None:
    (out / "result.json").write_text(result.to_json() + "\n")
    row = result.csv_row()
    err_mu = float(np.linalg.norm(result.mu_hat - tf.true_mu))
    err_M = float(abs(result.M_hat - tf.true_M))
    row.update(err_mu=repr(err_mu), err_M=repr(err_M))
    with open(out / "result.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    print(f"mu_hat = {np.array2string(result.mu_hat, precision=10)}", file=stream)
    print(f"M_hat  = {result.M_hat:.10g}", file=stream)
    print(f"|mu_hat - mu| = {err_mu:.3e}   |M_hat - M| = {err_M:.3e}", file=stream)


def cmd_estimate(args, stream) -> int:
    tf = get_test_function(args.fn, **_fn_params(args.fn_param))
    config = estimator_config(args)
    plan_budgets(tf.domain, args.n, config)  # validate before sampling
    out = out_dir(args)
    result = multi_stage_estimate(SamplingOracle(tf, args.sigma, args.seed), tf.domain, args.n, config)
    result.theta_hat.to_csv(out / "fit.csv")
    _report(result, tf, out, stream)
    write_manifest(out, args)
    return EXIT_OK


def cmd_baseline(args, stream) -> int:
    tf = get_test_function(args.fn, **_fn_params(args.fn_param))
    SmootherConfig(args.bandwidth, args.eval_grid, args.kernel)
    out = out_dir(args)
    result = single_stage_baseline(SamplingOracle(tf, args.sigma, args.seed), tf.domain, args.n,
                                   args.bandwidth, args.eval_grid, args.kernel)
    _report(result, tf, out, stream)
    write_manifest(out, args)
    return EXIT_OK


def cmd_fit(args, stream) -> int:
    data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
    center = np.array([float(v) for v in args.center.split(",")])
    if data.shape[1] != center.size + 1:
        raise UsageError(f"data has {data.shape[1] - 1} coordinates, center has {center.size}")
    r = holder_order(args.alpha)
    l = stage2_zoom_level(r)
    fit = fit_points(data[:, :-1], data[:, -1], center, args.delta, r)
    mx = maximize_over_cube(fit.theta_hat, l * args.delta)
    out = out_dir(args)
    fit.to_csv(out / "fit.csv")
    summary = {
        "mu_hat": center + mx.argmax,
        "M_hat": mx.value,
        "on_boundary": mx.on_boundary,
        "interior_certified": certify_interior_max(mx, fit.theta_hat),
        "condition_estimate": fit.condition_estimate,
    }
    (out / "result.json").write_text(json.dumps(jsonable(summary), indent=2, sort_keys=True) + "\n")
    print(f"mu_hat = {np.array2string(center + mx.argmax, precision=10)}", file=stream)
    print(f"M_hat  = {mx.value:.10g}", file=stream)
    write_manifest(out, args)
    return EXIT_OK


def cmd_sec5(args, stream) -> int:
    spec = sec5_experiment(args.reps, args.seed, args.workers, parse_grid(args.bandwidths, False))
    out = out_dir(args)
    res = run_mc(spec, out)
    best, best_s = res.best_baseline()
    two = res.summary["two-stage"]
    verdict = two["sq_err_mu_median"] < best_s["sq_err_mu_median"]
    for method, s in res.summary.items():
        print(f"{method:<18} budget={s['budget']:>5}  median |mu_hat-mu|^2={s['sq_err_mu_median']:.4e}  "
              f"mean={s['sq_err_mu_mean']:.4e}  failures={s['failures']}", file=stream)
    print(f"two-stage better than best baseline ({best}): {verdict}", file=stream)
    write_manifest(out, args, {
        "budgets": {"two_stage": "25x25 + 9x70 = 1255", "baseline": "36x36 = 1296"},
        "two_stage_better": verdict,
    })
    return EXIT_OK


def cmd_rate_scan(args, stream) -> int:
    spec = RateScanSpec(
        n_grid=tuple(parse_grid(args.n_grid, True, integer=True)),
        replications=args.reps, alpha=args.alpha, delta_constant=args.c,
        function=args.fn, function_params=_fn_params(args.fn_param), sigma=args.sigma,
        bandwidth=args.bandwidth, seed=args.seed, workers=args.workers,
    )
    out = out_dir(args)
    res = rate_scan(spec, out)
    for row in res.table:
        print(f"n={row['n']:>7}  delta={row['delta']:.4f}  rmse_mu={row['rmse_mu']:.4e}  rmse_M={row['rmse_M']:.4e}",
              file=stream)
    if res.degenerate:
        print("degenerate scan: all RMSEs at the floating-point floor", file=stream)
    else:
        print(f"slope mu = {res.mu.slope:.4f} +- {res.mu.stderr:.4f} (target {spec.target_mu:.4f})", file=stream)
        print(f"slope M  = {res.M.slope:.4f} +- {res.M.stderr:.4f} (target {spec.target_M:.4f})", file=stream)
    write_manifest(out, args, {"degenerate": res.degenerate})
    return EXIT_OK


def cmd_delta_scan(args, stream) -> int:
    spec = sec5_experiment(args.reps, args.seed, args.workers)
    grid = parse_grid(args.grid, False)
    out = out_dir(args)
    if args.param == "delta":
        rows = delta_sensitivity(spec, grid, out)
    else:
        rows = bandwidth_sensitivity(spec, grid, out)
    for row in rows:
        print(f"{args.param}={row[args.param]:.4f}  mse_mu={row['mse_mu']:.4e}  "
              f"baseline={row.get('baseline_mse_mu', float('nan')):.4e}", file=stream)
    write_manifest(out, args)
    return EXIT_OK


COMMANDS = {
    "two-stage": cmd_estimate,
    "multi-stage": cmd_estimate,
    "baseline": cmd_baseline,
    "fit": cmd_fit,
    "replicate-sec5": cmd_sec5,
    "rate-scan": cmd_rate_scan,
    "delta-scan": cmd_delta_scan,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def parse_and_run(argv=None, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        args = resolve_args(argv)
        if args.command == "two-stage" and args.stages != 2:
            raise UsageError("two-stage runs use exactly 2 stages; use multi-stage")
        return COMMANDS[args.command](args, stream)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except EstimationError as exc:
        return _fail(EXIT_RUNTIME, exc)
    except (ValueError, DesignError) as exc:
        return _fail(EXIT_USAGE, exc)


def main() -> None:
    sys.exit(parse_and_run())


if __name__ == "__main__":
    main()
