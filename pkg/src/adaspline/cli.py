"""Command-line interface: ``adaspline <subcommand> ...``.

Exit status is 0 on success, 1 when the computation rejects its input
(bad data, ill-conditioned system, failed benchmark) and 2 for usage
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as aio
from .adapt import AdaptConfig, AdaptStageError, adapt_fit
from .asymptotics import verify_equivalent_kernel
from .kernels import eval_J, eval_L, warp
from .rkhs import PiecewisePenalty
from .sim import (
    METHODS,
    BenchmarkAborted,
    gen_scenario,
    median_replicate,
    quantile_bands,
    run_benchmark,
    scenario,
)
from .solver import ConditioningError, DegenerateFitError, Design, PenalizedSystem, predict, select_lambda

DOMAIN_ERRORS = (
    ValueError,
    ArithmeticError,
    AdaptStageError,
    BenchmarkAborted,
    ConditioningError,
    DegenerateFitError,
    OSError,
)


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _lambda_arg(text):
    if text == "auto":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("lambda must be 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return v


def _methods_arg(text):
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in out if v not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return out


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _effective(args, skip=("func",)) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


# -------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    design = aio.read_design(args.input, rescale=args.rescale)
    penalty = aio.read_penalty(args.penalty) if args.penalty else PiecewisePenalty.uniform()
    system = PenalizedSystem(design, penalty, args.m)
    lam = select_lambda(system, criterion=args.criterion) if args.lam == "auto" else args.lam
    f = system.fit(lam)
    grid_out = args.grid_out or _sibling(args.out, "_grid.csv")
    grid = np.linspace(0.0, 1.0, args.grid_size)
    config = _effective(args)
    aio.write_csv(grid_out, {"t": grid, "fhat": predict(f, grid)}, [f"adaspline {__version__}"])
    body = aio.fit_to_dict(f)
    body["prediction_grid"] = str(grid_out)
    aio.write_json(body, args.out, config)
    report = body["optimality"]
    print(f"lambda={f.lam:.6g} df={f.hat_trace:.4f} optimality={'pass' if report['passed'] else 'FAIL'}")
    return 0


def cmd_adapt_fit(args) -> int:
    design = aio.read_design(args.input, rescale=args.rescale)
    base = aio.read_adapt_config(args.config).to_dict() if args.config else {}
    if args.S is not None:
        base["S_grid"] = args.S
    if args.gamma is not None:
        base["gamma_grid"] = args.gamma
    if args.m is not None:
        base["m"] = args.m
    config = AdaptConfig(**base)
    result = adapt_fit(design, config)
    effective = _effective(args)
    effective["adapt"] = config.to_dict()
    aio.write_result(result, args.out, effective)
    if args.grid_out:
        g = result.variance_curve.grid
        aio.write_csv(
            args.grid_out,
            {
                "t": g,
                "fhat": predict(result.fit, g),
                "sigma2hat": result.variance_curve.values,
                "f2mhat": result.f2m_curve.values,
                "rho": result.penalty(g),
            },
            [f"adaspline {__version__}", "config " + json.dumps(effective, sort_keys=True)],
        )
    S, gamma = result.selected
    print(f"selected S={S} gamma={gamma:g} lambda={result.fit.lam:.6g}")
    return 0


def cmd_simulate(args) -> int:
    spec = scenario(args.scenario, replicates=args.replicates, seed=args.seed, n=args.n, sigma=args.sigma)
    adss = AdaptConfig(m=args.adss_m)
    table = run_benchmark(spec, args.methods, adss, workers=args.workers)
    effective = _effective(args, skip=("func", "workers"))
    effective["scenario_spec"] = spec.to_dict()
    effective["adss"] = adss.to_dict()
    aio.write_result(table, args.out, effective)

    records = args.records or _sibling(args.out, "_replicates.csv")
    recs = table.records
    cols = {
        "replicate": [r.replicate for r in recs],
        "method": [r.method for r in recs],
        "ok": [str(int(r.ok)) for r in recs],
        "lambda": [r.lam for r in recs],
        "ISE": [r.ise for r in recs],
    }
    for j, p in enumerate((0.2, 0.4, 0.6, 0.8)):
        cols[f"PAE({p:g})"] = [r.pae[j] if r.ok else float("nan") for r in recs]
    head = [f"adaspline {__version__}", "config " + json.dumps(effective, sort_keys=True)]
    aio.write_csv(records, cols, head)

    if args.bands:
        bcols = {"t": table.band_grid}
        for mth in args.methods:
            lo, hi = quantile_bands(table, mth)
            k = median_replicate(table, mth)
            med = next(r for r in recs if r.method == mth and r.replicate == k)
            bcols[f"{mth}_q0.025"] = lo
            bcols[f"{mth}_q0.975"] = hi
            bcols[f"{mth}_median_fit"] = med.curve
        aio.write_csv(args.bands, bcols, head)
    if args.median:
        mth = args.median_method or args.methods[-1]
        if mth not in args.methods:
            raise UsageError(f"--median-method {mth} was not simulated")
        k = median_replicate(table, mth)
        design = gen_scenario(spec, k)
        aio.write_design(
            design, args.median, head + [f"median replicate {k} for method {mth}"]
        )
    for row in table.as_rows():
        print(f"{row['method']:5s} ISE={row['ISE_mean']:.4g} ({row['ISE_sd']:.2g}) ok={row['n_ok']}")
    return 0


def cmd_kernel_table(args) -> int:
    if not args.beta > 0:
        raise UsageError("--beta must be positive")
    if args.grid < 3:
        raise UsageError("--grid must be at least 3")
    x = np.linspace(-args.half_width, args.half_width, 2 * args.grid - 1)
    comments = [f"adaspline {__version__}", "config " + json.dumps(_effective(args), sort_keys=True)]
    aio.write_csv(args.out, {"t": x, "L": eval_L(args.m, x)}, comments)
    j_out = args.j_out or _sibling(args.out, "_J.csv")
    penalty = aio.read_penalty(args.penalty) if args.penalty else PiecewisePenalty.uniform()
    wf = warp(penalty, lambda s: np.ones_like(np.asarray(s, dtype=float)), args.m)
    g = np.linspace(0.0, 1.0, args.grid)
    T, S = np.meshgrid(g, g, indexing="ij")
    J = eval_J(T.ravel(), S.ravel(), args.beta, wf, args.m)
    aio.write_csv(j_out, {"t": T.ravel(), "s": S.ravel(), "J": J}, comments)
    return 0


def cmd_verify_kernel(args) -> int:
    t = np.arange(1, args.n + 1) / args.n
    penalty = aio.read_penalty(args.penalty) if args.penalty else PiecewisePenalty.uniform()
    check = verify_equivalent_kernel(Design(t, np.zeros(args.n)), args.lam, penalty, args.m, args.t0)
    comments = [
        f"adaspline {__version__}",
        "config " + json.dumps(_effective(args), sort_keys=True),
        f"t_star {check.t_star!r} beta {check.beta!r} discrepancy {check.discrepancy!r}",
    ]
    aio.write_csv(
        args.out,
        {"t_i": t, "hat_weight": check.hat_weights, "kernel_weight": check.kernel_weights},
        comments,
    )
    flag = " (beta below asymptotic regime)" if check.regime_warning else ""
    print(f"discrepancy={check.discrepancy:.6g} beta={check.beta:.6g}{flag}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaspline", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"adaspline {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="penalized spline fit with a given penalty")
    f.add_argument("--input", type=Path, required=True)
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--m", type=int, default=2)
    f.add_argument("--lambda", dest="lam", type=_lambda_arg, default="auto")
    f.add_argument("--penalty", type=Path)
    f.add_argument("--criterion", choices=("gcv", "gml"), default="gcv")
    f.add_argument("--grid-out", type=Path)
    f.add_argument("--grid-size", type=int, default=201)
    f.add_argument("--rescale", action="store_true")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("adapt-fit", help="fit with a data-driven piecewise penalty")
    a.add_argument("--input", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--m", type=int)
    a.add_argument("--S", type=_int_list)
    a.add_argument("--gamma", type=_float_list)
    a.add_argument("--config", type=Path)
    a.add_argument("--grid-out", type=Path)
    a.add_argument("--rescale", action="store_true")
    a.set_defaults(func=cmd_adapt_fit)

    s = sub.add_parser("simulate", help="Monte Carlo comparison of smoothing methods")
    s.add_argument("--scenario", choices=("heaviside", "mexican_hat"), required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--replicates", type=int, default=100)
    s.add_argument("--methods", type=_methods_arg, default=METHODS)
    s.add_argument("--n", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--adss-m", type=int, default=1)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--records", type=Path)
    s.add_argument("--bands", type=Path)
    s.add_argument("--median", type=Path)
    s.add_argument("--median-method", choices=METHODS)
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("kernel-table", help="tabulate equivalent kernels")
    k.add_argument("--m", type=int, choices=(1, 2, 3, 4), required=True)
    k.add_argument("--beta", type=float, required=True)
    k.add_argument("--grid", type=int, default=101)
    k.add_argument("--half-width", type=float, default=10.0)
    k.add_argument("--penalty", type=Path)
    k.add_argument("--out", type=Path, required=True)
    k.add_argument("--j-out", type=Path)
    k.set_defaults(func=cmd_kernel_table)

    v = sub.add_parser("verify-kernel", help="compare a hat-matrix row with the equivalent kernel")
    v.add_argument("--m", type=int, choices=(1, 2, 3, 4), default=2)
    v.add_argument("--n", type=int, default=500)
    v.add_argument("--lambda", dest="lam", type=float, default=1e-5)
    v.add_argument("--t0", type=float, default=0.5)
    v.add_argument("--penalty", type=Path)
    v.add_argument("--out", type=Path, required=True)
    v.set_defaults(func=cmd_verify_kernel)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"adaspline: usage error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"adaspline: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
