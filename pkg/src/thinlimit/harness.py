"""Sweeps in eps, the blow-up regression, manufactured-solution studies and
the hypothesis-check battery."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import FunctionField, ScalarField, YSlopeField
from .fdsolver import (
    DivergenceError,
    SchemeConfig,
    SchemeError,
    build_barriers,
    check_barrier_sandwich,
    discretize_limit,
    discretize_thin,
    solve,
    sup_norm_error,
)
from .limit import LimitOperator, ExpansionError, build_limit, check_degenerate_ellipticity
from .operators import (
    CoefficientFamily,
    check_alpha,
    check_bounds,
    check_normal_ellipticity,
    check_properness,
)
from .problem import (
    LateralBC,
    ProblemInstance,
    check_compatibility,
    check_expansion,
    check_fields,
    check_lateral,
    check_obliqueness_tb,
    check_profile,
    iter_fields,
    parse_problem,
)
from .report import CheckResult


class SweepRefused(ValueError):
    pass


# ---------------------------------------------------------------------------
# check battery


@dataclass
class BatteryReport:
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]

    def __getitem__(self, name) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _positivity(inst: ProblemInstance, samples, seed) -> CheckResult:
    """``c >= alpha`` on a dense sample together with sampled properness in ``r``."""
    bound = check_alpha(inst.operator)
    proper = check_properness(inst.operator, samples, seed, vary_X=False)
    ok = bound.passed and proper.passed
    first = bound if not bound.passed else proper
    return CheckResult("positivity of c", ok, min(bound.value, proper.value),
                       {} if ok else first.witness,
                       f"min c - alpha={bound.value:.4g}; r-properness margin={proper.value:.4g}")


def _normal_ellipticity(inst: ProblemInstance) -> CheckResult:
    if inst.lateral.kind != "dirichlet":
        res = check_normal_ellipticity(inst.operator, inst.oblique)
        return CheckResult(res.name, True, res.value, {}, f"not required ({inst.lateral.kind} sides)")
    return check_normal_ellipticity(inst.operator, inst.oblique)


def _limit_ellipticity(inst: ProblemInstance, samples, seed) -> CheckResult:
    try:
        limop = build_limit(inst)
    except ExpansionError as exc:
        return CheckResult("limit degenerate ellipticity", False, math.nan, {}, str(exc))
    return check_degenerate_ellipticity(limop, samples, seed)


def run_checks(inst: ProblemInstance, eps: float | None = None, samples: int | None = None,
               seed: int | None = None) -> BatteryReport:
    """Every structural check on ``inst``; one result per check."""
    samples = inst.solver.samples if samples is None else samples
    seed = inst.solver.seed if seed is None else seed
    eps = eps if eps is not None else max((inst.solver.eps, *inst.solver.eps_list))
    results = [
        check_fields(iter_fields(inst)),
        check_profile(inst.profile),
        check_obliqueness_tb(inst.profile, inst.oblique, eps),
        check_compatibility(inst.oblique),
        check_expansion(inst.oblique),
        check_properness(inst.operator, samples, seed, vary_r=False),
        _positivity(inst, samples, seed),
        check_bounds(inst.operator, samples, seed),
        check_lateral(inst.lateral),
        _normal_ellipticity(inst),
        _limit_ellipticity(inst, samples, seed),
    ]
    return BatteryReport(results)


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepConfig:
    instance: ProblemInstance
    eps_list: tuple[float, ...]
    cfg: SchemeConfig
    workers: int = 1

    def __post_init__(self):
        e = tuple(float(v) for v in self.eps_list)
        if not e or any(v <= 0 for v in e):
            raise ValueError("eps_list must hold positive values")
        if any(b >= a for a, b in zip(e, e[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        self.eps_list = e


@dataclass
class SweepRow:
    eps: float
    sup_error: float
    iters: int
    residual: float
    barrier_margin: float
    wall_s: float
    error: str = ""


@dataclass
class ConvergenceReport:
    rows: list[SweepRow]
    limit_nx: int
    limit_residual: float
    checks: list[str] = field(default_factory=list)

    HEADER = ("eps", "sup_error", "iters", "residual", "barrier_margin", "wall_s")

    def table(self, timing: bool = True):
        return [(r.eps, r.sup_error, r.iters, r.residual, r.barrier_margin,
                 r.wall_s if timing else 0.0) for r in self.rows]

    @property
    def ok(self) -> bool:
        return all(not r.error for r in self.rows)

    def strictly_decreasing(self) -> bool:
        errs = [r.sup_error for r in self.rows]
        return all(b < a for a, b in zip(errs, errs[1:]))


def _sweep_entry(inst, eps, cfg, u_limit):
    start = time.perf_counter()
    try:
        scheme = discretize_thin(inst, eps, cfg)
        u, rep = solve(scheme, cfg)
        err = sup_norm_error(u, u_limit)
        bars = build_barriers(inst, eps, cfg, scheme=scheme)
        margin = check_barrier_sandwich(u, bars).value
        return SweepRow(eps, err, rep.iterations, rep.final_residual, margin, time.perf_counter() - start)
    except (DivergenceError, SchemeError) as exc:
        return SweepRow(eps, math.nan, -1, math.nan, math.nan, time.perf_counter() - start, str(exc))


def run_sweep(sweep: SweepConfig, check: bool = True) -> ConvergenceReport:
    inst, cfg = sweep.instance, sweep.cfg
    lines = []
    if check:
        battery = run_checks(inst, eps=sweep.eps_list[0])
        lines = battery.lines()
        if not battery.passed:
            raise SweepRefused("hypothesis checks failed: " + ", ".join(battery.failed()))
    limop = build_limit(inst)
    nx_lim = inst.solver.nx_limit or cfg.nx
    u_limit, lrep = solve(discretize_limit(limop, inst.lateral, cfg, nx_lim), cfg)
    if sweep.workers > 1:
        with ThreadPoolExecutor(sweep.workers) as pool:
            rows = list(pool.map(lambda e: _sweep_entry(inst, e, cfg, u_limit), sweep.eps_list))
    else:
        rows = [_sweep_entry(inst, e, cfg, u_limit) for e in sweep.eps_list]
    rows.sort(key=lambda r: -r.eps)
    return ConvergenceReport(rows, nx_lim, lrep.final_residual, lines)


# ---------------------------------------------------------------------------
# blow-up without compatibility

COUNTEREXAMPLE = """\
[domain]
g_plus = 1
g_minus = 0

[oblique]
beta_plus = 1
beta_minus = 0

[operator]
alpha = 1
C_F = 10
family.0.sigma = [[0, 1]]
family.0.c = 1
family.0.f = 1
"""


def counterexample_instance() -> ProblemInstance:
    """``-u_yy + u = 1`` on ``(0,1) x (0,eps)``, ``u_y = 1`` on top, ``-u_y = 0`` below."""
    return parse_problem(COUNTEREXAMPLE, validate=False, name="counterexample")


def counterexample_exact(eps, y):
    return (np.exp(y) + np.exp(-y)) / (np.exp(eps) - np.exp(-eps)) + 1.0


@dataclass
class CounterexampleRow:
    eps: float
    sup_u: float
    sup_exact: float
    rel_error: float
    iters: int


@dataclass
class CounterexampleReport:
    rows: list[CounterexampleRow]
    growth: bool
    wall_s: float

    HEADER = ("eps", "sup_u", "sup_exact", "rel_error", "iters")

    def table(self):
        return [(r.eps, r.sup_u, r.sup_exact, r.rel_error, r.iters) for r in self.rows]


def run_counterexample(cfg: SchemeConfig | None = None, eps_list=(0.4, 0.2, 0.1)) -> CounterexampleReport:
    cfg = cfg or SchemeConfig(nx=5, nt=200)
    inst = counterexample_instance()
    start = time.perf_counter()
    rows = []
    for eps in eps_list:
        u, rep = solve(discretize_thin(inst, eps, cfg), cfg)
        exact = counterexample_exact(eps, u.grid.Y)
        rel = float(np.max(np.abs(u.values - exact)) / np.max(np.abs(exact)))
        rows.append(CounterexampleRow(eps, u.sup_norm(), float(np.max(exact)), rel, rep.iterations))
    order = sorted(rows, key=lambda r: -r.eps)
    growth = all(b.sup_u > a.sup_u for a, b in zip(order, order[1:]))
    return CounterexampleReport(rows, growth, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class ManufacturedReport:
    levels: list[tuple[int, int, float]]  # (nx, nt, sup error); nt = 0 for the limit problem
    orders: list[float]
    ratios: list[float]

    HEADER = ("nx", "nt", "sup_error", "order")

    def table(self):
        out = []
        for k, (nx, nt, err) in enumerate(self.levels):
            out.append((nx, nt, err, self.orders[k - 1] if k else math.nan))
        return out


def _as_exact(exact) -> ScalarField:
    return exact if isinstance(exact, ScalarField) else ScalarField(str(exact), two_d=False)


def _mms_lateral(lateral: LateralBC, w) -> LateralBC:
    if lateral.kind == "dirichlet":
        return LateralBC("dirichlet", beta=FunctionField(lambda x, y: w(x), two_d=True))
    if lateral.kind == "neumann" and max(abs(float(w.dx(0.0))), abs(float(w.dx(1.0)))) < 1e-12:
        return lateral
    g1 = lateral.gamma1 if lateral.kind == "oblique" else FunctionField(lambda x, y: np.where(x < 0.5, -1.0, 1.0))
    g2 = lateral.gamma2 if lateral.kind == "oblique" else FunctionField(lambda x, y: 0.0 * x)
    # y-independent exact solution: gamma . Du = gamma1 w'
    return LateralBC("oblique", g1, g2, FunctionField(lambda x, y: g1(x, y) * w.dx(x)))


def _orders(levels):
    errs = [e for *_, e in levels]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(errs, errs[1:])]
    orders = [math.log2(r) if r > 0 and math.isfinite(r) else math.inf for r in ratios]
    return orders, ratios


def manufactured_limit(limop: LimitOperator, exact) -> LimitOperator:
    """Shift every reduced source by ``G[exact]`` so that ``exact`` solves ``G = 0``."""
    w = _as_exact(exact)

    def G_exact(x):
        return limop.eval_reduced(w.dxx(x), w.dx(x), w(x), x)

    fams = tuple(replace(f, f=FunctionField(lambda x, y=0.0, f=f: f.f(x) + G_exact(x), two_d=False))
                 for f in limop.reduced)
    return LimitOperator(limop.coeffs, limop.base, fams)


def manufactured_thin(inst: ProblemInstance, exact) -> ProblemInstance:
    """Instance whose thin solution is the y-independent ``exact(x)`` for every eps."""
    w = _as_exact(exact)
    op = inst.operator

    def F_exact(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        zero = np.zeros_like(x)
        d2 = w.dxx(x)
        X = np.stack([np.stack([d2, zero], -1), np.stack([zero, zero], -1)], -2)
        P = np.stack([w.dx(x), zero], -1)
        return op.evaluate(X, P, w(x), x, y)

    fams = tuple(CoefficientFamily(f.sigma, f.drift, f.zeroth,
                                   FunctionField(lambda x, y, f=f: f.source(x, y) + F_exact(x, y)),
                                   f.lam, f.mu) for f in op.families)
    d = inst.oblique
    bp = FunctionField(lambda x, y: d.gamma1_plus(x, y) * w.dx(x))
    bm = FunctionField(lambda x, y: d.gamma1_minus(x, y) * w.dx(x))
    oblique = replace(d, beta_plus=bp, beta_minus=bm, k_plus=YSlopeField(d.gamma1_plus),
                      k_minus=YSlopeField(d.gamma1_minus), l_plus=YSlopeField(bp),
                      l_minus=YSlopeField(bm), slopes_given=False)
    return replace(inst, operator=replace(op, families=fams), oblique=oblique,
                   lateral=_mms_lateral(inst.lateral, w), name=inst.name + "+mms")


def run_manufactured(inst: ProblemInstance, exact, refinements: int = 3, kind: str = "limit",
                     nx0: int = 21, nt0: int = 6, eps: float = 0.1,
                     cfg: SchemeConfig | None = None) -> ManufacturedReport:
    """Sup errors against ``exact`` on ``refinements`` successively doubled grids.

    ``kind='limit'`` studies the limit problem with lateral data taken from
    ``exact``; ``kind='thin'`` the thin problem at fixed ``eps`` with a
    y-independent ``exact``.
    """
    w = _as_exact(exact)
    cfg = cfg or SchemeConfig.from_instance(inst)
    levels = []
    if kind == "limit":
        lat = _mms_lateral(inst.lateral, w)
        limop = manufactured_limit(build_limit(inst), w)
        for k in range(refinements):
            nx = (nx0 - 1) * 2**k + 1
            u, _ = solve(discretize_limit(limop, lat, cfg, nx), cfg)
            levels.append((nx, 0, float(np.max(np.abs(u.values - w(u.grid.x))))))
    elif kind == "thin":
        mms = manufactured_thin(inst, w)
        for k in range(refinements):
            nx, nt = (nx0 - 1) * 2**k + 1, (nt0 - 1) * 2**k + 1
            c = replace(cfg, nx=nx, nt=nt)
            u, _ = solve(discretize_thin(mms, eps, c), c)
            levels.append((nx, nt, float(np.max(np.abs(u.values - w(u.grid.X))))))
    else:
        raise ValueError("kind must be 'limit' or 'thin'")
    orders, ratios = _orders(levels)
    return ManufacturedReport(levels, orders, ratios)


def laplacian_neumann_instance() -> ProblemInstance:
    """``-Laplacian u + u = f`` on the flat strip with Neumann sides and zero oblique data."""
    return parse_problem(LAPLACIAN_NEUMANN, name="laplacian_neumann")


LAPLACIAN_NEUMANN = """\
[domain]
g_plus = 1
g_minus = -1

[operator]
alpha = 1
C_F = 10
family.0.sigma = [[1, 0], [0, 1]]
family.0.c = 1
"""
