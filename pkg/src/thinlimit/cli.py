"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 solver divergence, 3 parse error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .expr import ExpressionError, ScalarField
from .fdsolver import (
    BarrierError,
    DivergenceError,
    SchemeConfig,
    SchemeError,
    discretize_limit,
    discretize_thin,
    solve,
)
from .harness import (
    ConvergenceReport,
    CounterexampleReport,
    ManufacturedReport,
    SweepConfig,
    SweepRefused,
    laplacian_neumann_instance,
    run_checks,
    run_counterexample,
    run_manufactured,
    run_sweep,
)
from .limit import ExpansionError, build_limit
from .problem import InvariantError, ParseError, load_problem, serialize_problem
from .report import dumps_csv, dumps_json

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_PARSE = 0, 1, 2, 3


def _eps_list(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="write the machine report here instead of stdout")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key after parsing, e.g. solver.nx=401 (repeatable)")
    common.add_argument("--seed", type=int, help="seed for randomized checks (default: solver.seed)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    common.add_argument("--no-timing", action="store_true",
                        help="report wall times as 0 so repeated runs give identical bytes")

    parser = argparse.ArgumentParser(prog="thinlimit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_problem(name, help_, optional=False):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if optional:
            p.add_argument("problem", nargs="?", help="problem file (default: built-in Laplacian, Neumann sides)")
        else:
            p.add_argument("problem", help="problem file")
        return p

    with_problem("parse", "parse and validate a problem file; print its normalized form")
    with_problem("check", "run the hypothesis-check battery")
    p = with_problem("reduce", "tabulate the limit coefficients and reduced families")
    p.add_argument("--nx", type=int, help="number of sample points in x (default: solver.nx)")
    p = with_problem("solve-thin", "solve the thin problem at one eps")
    p.add_argument("--eps", type=float, help="domain thickness (default: solver.eps)")
    with_problem("solve-limit", "solve the limit problem on the base interval")
    p = with_problem("sweep", "solve for decreasing eps and report the sup error to the limit")
    p.add_argument("--eps-list", type=_eps_list, help="comma separated, strictly decreasing")
    p.add_argument("--workers", type=int, default=1, help="solve eps entries concurrently")
    p = sub.add_parser("counterexample", parents=[common],
                       help="reproduce the blow-up of the problem without compatibility")
    p.add_argument("--nt", type=int, default=200, help="grid points across the strip (default 200)")
    p.add_argument("--nx", type=int, default=5, help="grid points along the strip (default 5)")
    p.add_argument("--eps-list", type=_eps_list, default=(0.4, 0.2, 0.1))
    p.add_argument("--rtol", type=float, default=0.01, help="relative sup tolerance (default 0.01)")
    p = with_problem("mms", "manufactured-solution refinement study", optional=True)
    p.add_argument("--exact", required=True, help="exact solution, an expression in x")
    p.add_argument("--levels", type=int, default=3, help="number of grid levels (default 3)")
    p.add_argument("--kind", choices=("limit", "thin"), default="limit")
    p.add_argument("--eps", type=float, default=0.1, help="thickness for --kind thin")
    p.add_argument("--nx0", type=int, default=21, help="coarsest nx")
    p.add_argument("--nt0", type=int, default=6, help="coarsest nt (--kind thin)")
    p.add_argument("--min-order", type=float, default=None,
                   help="fail (exit 1) if an observed order falls below this")
    return parser


def _emit(args, text):
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _load(args, validate=True):
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"solver.seed={args.seed}")
    return load_problem(args.problem, validate=validate, overrides=overrides)


def _table(args, header, rows, extra=None):
    if args.format == "json":
        payload = {"rows": [dict(zip(header, r)) for r in rows]}
        payload.update(extra or {})
        return dumps_json(payload)
    return dumps_csv(header, rows)


def cmd_parse(args):
    inst = _load(args)
    _emit(args, serialize_problem(inst))
    return EXIT_OK


def cmd_check(args):
    inst = _load(args, validate=False)
    rep = run_checks(inst, seed=args.seed)
    for line in rep.lines():
        print(line, file=sys.stderr)
    header = ("check", "passed", "value", "witness", "detail")
    rows = [(r.name, r.passed, r.value, ";".join(f"{k}={v}" for k, v in r.witness.items()), r.detail)
            for r in rep.results]
    _emit(args, _table(args, header, rows, {"passed": rep.passed}))
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_reduce(args):
    inst = _load(args)
    limop = build_limit(inst)
    nx = args.nx or inst.solver.nx
    x = np.linspace(0.0, 1.0, nx)
    co = limop.coeffs
    cols = [x, co.gamma_o(x), co.beta_o(x), co.b(x), co.c(x)]
    header = ["x", "gamma_o", "beta_o", "b", "c"]
    for fam in limop.reduced:
        tag = f"{fam.lam}_{fam.mu}"
        header += [f"sts_{tag}", f"btilde_{tag}", f"ftilde_{tag}"]
        cols += [np.broadcast_to(fam.a(x), x.shape), np.broadcast_to(fam.b(x), x.shape),
                 np.broadcast_to(fam.f(x), x.shape)]
    rows = [tuple(float(c[i]) for c in cols) for i in range(nx)]
    _emit(args, _table(args, header, rows))
    return EXIT_OK


def _solution_output(args, u, rep):
    if args.no_timing:
        rep.wall_time = 0.0
    print(f"iterations={rep.iterations} residual={rep.final_residual:.3e} sup={rep.sup_norm:.6g}",
          file=sys.stderr)
    if args.format == "json":
        _emit(args, dumps_json(asdict(rep)))
    else:
        _emit(args, dumps_csv(u.header(), u.rows()))


def cmd_solve_thin(args):
    inst = _load(args)
    cfg = SchemeConfig.from_instance(inst)
    eps = args.eps if args.eps is not None else inst.solver.eps
    u, rep = solve(discretize_thin(inst, eps, cfg), cfg)
    _solution_output(args, u, rep)
    return EXIT_OK


def cmd_solve_limit(args):
    inst = _load(args)
    cfg = SchemeConfig.from_instance(inst)
    nx = inst.solver.nx_limit or cfg.nx
    u, rep = solve(discretize_limit(build_limit(inst), inst.lateral, cfg, nx), cfg)
    _solution_output(args, u, rep)
    return EXIT_OK


def cmd_sweep(args):
    inst = _load(args)
    cfg = SchemeConfig.from_instance(inst)
    eps_list = args.eps_list or inst.solver.eps_list
    try:
        sweep = SweepConfig(inst, eps_list, cfg, args.workers)
    except ValueError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report: ConvergenceReport = run_sweep(sweep)
    timing = not args.no_timing
    for r in report.rows:
        status = r.error or f"sup_error={r.sup_error:.6g}"
        print(f"eps={r.eps:g}: {status}", file=sys.stderr)
    extra = {"limit": {"nx": report.limit_nx, "residual": report.limit_residual},
             "strictly_decreasing": report.strictly_decreasing()}
    _emit(args, _table(args, report.HEADER, report.table(timing), extra))
    return EXIT_OK if report.ok else EXIT_DIVERGED


def cmd_counterexample(args):
    cfg = SchemeConfig(nx=args.nx, nt=args.nt)
    rep: CounterexampleReport = run_counterexample(cfg, args.eps_list)
    ok = rep.growth and all(r.rel_error <= args.rtol for r in rep.rows)
    for r in rep.rows:
        print(f"eps={r.eps:g}: sup|u|={r.sup_u:.6g} exact={r.sup_exact:.6g} rel_error={r.rel_error:.3e}",
              file=sys.stderr)
    extra = {"growth": rep.growth, "passed": ok}
    _emit(args, _table(args, rep.HEADER, rep.table(), extra))
    return EXIT_OK if ok else EXIT_INVALID


def cmd_mms(args):
    if args.problem:
        inst = _load(args)
    else:
        inst = laplacian_neumann_instance()
    try:
        exact = ScalarField(args.exact, two_d=False)
    except ExpressionError as exc:
        raise ParseError(f"--exact: {exc}") from None
    rep: ManufacturedReport = run_manufactured(inst, exact, args.levels, args.kind, args.nx0, args.nt0, args.eps)
    ok = args.min_order is None or all(o >= args.min_order for o in rep.orders)
    for nx, nt, err in rep.levels:
        print(f"nx={nx} nt={nt}: sup_error={err:.6g}", file=sys.stderr)
    _emit(args, _table(args, rep.HEADER, rep.table(), {"orders": rep.orders}))
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {
    "parse": cmd_parse,
    "check": cmd_check,
    "reduce": cmd_reduce,
    "solve-thin": cmd_solve_thin,
    "solve-limit": cmd_solve_limit,
    "sweep": cmd_sweep,
    "counterexample": cmd_counterexample,
    "mms": cmd_mms,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ParseError, FileNotFoundError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InvariantError, SweepRefused, BarrierError, SchemeError, ExpansionError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
