"""Acceptance criteria 1-9, one PASS/FAIL line each (also shown in the terminal summary)."""
import math
import time

import numpy as np
import pytest

from conftest import FIXTURES, make
from thinlimit.fdsolver import SchemeConfig, solve_limit
from thinlimit.harness import (
    SweepConfig,
    laplacian_neumann_instance,
    run_checks,
    run_counterexample,
    run_manufactured,
    run_sweep,
)
from thinlimit.limit import (
    assemble_ABC,
    boundary_residual,
    build_limit,
    check_degenerate_ellipticity,
    corrector_expand,
    eval_G,
    limit_coefficients,
)
from thinlimit.problem import bundled_problems, load_problem

RESULTS = []


def record(n, title, ok, detail):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_1_counterexample():
    start = time.perf_counter()
    rep = run_counterexample(SchemeConfig(nx=5, nt=200), (0.4, 0.2, 0.1))
    wall = time.perf_counter() - start
    by = {r.eps: r for r in rep.rows}
    worst = max(r.rel_error for r in rep.rows)
    target = 1 / math.tanh(0.1) + 1
    sup_err = abs(by[0.1].sup_u - target) / target
    ok = worst <= 0.01 and sup_err <= 0.01 and rep.growth and wall < 10
    assert record(1, "counterexample regression", ok,
                  f"max rel error {worst:.2e}, sup|u| at 0.1 = {by[0.1].sup_u:.4f} vs {target:.4f}, "
                  f"{wall:.2f} s")


def _random_bi(rng):
    def num():
        return f"{rng.uniform(-0.5, 0.5):.6f}"

    g0, g1 = num(), num()
    b0, b1 = num(), num()
    ob = {"gamma1_plus": f"{g0} + {g1}*x + {num()}*y", "gamma1_minus": f"-({g0} + {g1}*x) + {num()}*y",
          "beta_plus": f"{b0} + {b1}*x^2 + {num()}*y", "beta_minus": f"-({b0} + {b1}*x^2) + {num()}*y"}
    fams = []
    for lam in range(2):
        for mu in range(2):
            s = [[f"1 + {abs(rng.uniform(0, 0.5)):.6f}*x", num()], [num(), f"1 + {num()}*y"]]
            fams.append({"sigma": str(s).replace("'", ""),
                         "drift": f"[{num()}*x, {num()}]", "c": f"1 + {abs(rng.uniform(0, 1)):.6f}*x",
                         "f": f"{num()} + sin({num()}*x + y)", "lambda": lam, "mu": mu})
    return make(g_plus="1 + 0.2*x", g_minus="-0.7 - 0.1*x^2", oblique=ob, families=fams, C_F=50)


def test_2_dual_path():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(5):
        inst = _random_bi(rng)
        limop = build_limit(inst)
        X, p, r = rng.normal(size=(3, 1000)) * 3
        x = rng.uniform(0, 1, 1000)
        d, red = limop.eval_direct(X, p, r, x), limop.eval_reduced(X, p, r, x)
        co = limop.coeffs
        xs = np.linspace(0, 1, 11)
        for fld in (co.gamma_o, co.beta_o, co.k_plus, co.k_minus, co.l_plus, co.l_minus):
            assert np.max(np.abs(fld(xs))) > 1e-6
        worst = max(worst, float(np.max(np.abs(d - red) / (1 + np.abs(d)))))
    wall = time.perf_counter() - start
    ok = worst <= 1e-10 and wall < 5
    assert record(2, "dual-path operator equivalence", ok,
                  f"max |G1 - G2|/(1+|G|) = {worst:.2e} over 5 x 1000 samples, {wall:.2f} s")


def test_3_special_cases():
    rng = np.random.default_rng(42)
    X, p, r = rng.normal(size=(3, 500))
    x = rng.uniform(0, 1, 500)

    # Neumann/BBI case: gamma_o = 0, g- = 0, k+ = -g+'/g+, l = 0
    bbi = make(g_plus="1 + x/2 + 0.1*sin(3*x)\ng_plus.dx = 1/2 + 0.3*cos(3*x)", g_minus="0",
               oblique={"gamma1_plus": "-y*(1/2 + 0.3*cos(3*x))/(1 + x/2 + 0.1*sin(3*x))",
                        "k_plus": "-(1/2 + 0.3*cos(3*x))/(1 + x/2 + 0.1*sin(3*x))",
                        "k_minus": "0", "l_plus": "0", "l_minus": "0"})
    A, B, C = assemble_ABC(limit_coefficients(bbi), X, p, x)
    gp = 1 + x / 2 + 0.1 * np.sin(3 * x)
    gp1 = 0.5 + 0.3 * np.cos(3 * x)
    expected = np.zeros_like(A)
    expected[:, 0, 0] = X
    expected[:, 1, 1] = gp1 / gp * p
    err1 = float(np.max(np.abs(A + B + C - expected)))

    # -Laplacian base with oblique data: G = -((1 + gamma_o^2) X + b p + c) + r
    lap = load_problem("laplacian_oblique.prob")
    G = eval_G(build_limit(lap), X, p, r, x)
    gp = 1 + 0.25 * np.sin(np.pi * x) ** 2
    go = x / 2
    b = go * 0.5 - (0.2 * gp - 0.1) / (gp + 1)   # k+ = 0.2, k- = 0.1, g- = -1
    c = (0.3 * gp + 0.2) / (gp + 1)             # l+ = 0.3, l- = -0.2, beta_o' = 0
    f = 1 + 0.5 * np.cos(np.pi * x)
    G_hand = -((1 + go**2) * X + b * p + c) + r - f
    err2 = float(np.max(np.abs(G - G_hand)))
    ok = err1 <= 1e-12 and err2 <= 1e-12
    assert record(3, "special-case formulas", ok,
                  f"Neumann/BBI matrix error {err1:.1e}, Laplacian G error {err2:.1e}")


def test_4_degenerate_ellipticity():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    insts = [load_problem(p) for p in bundled_problems()] + [_random_bi(rng) for _ in range(2)]
    results = [check_degenerate_ellipticity(build_limit(i), samples=1000, seed=42) for i in insts]
    wall = time.perf_counter() - start
    ok = all(r.passed for r in results) and wall < 5
    worst = min(r.value for r in results)
    assert record(4, "degenerate ellipticity suite", ok,
                  f"{len(insts)} instances x 1000 trials, min margin {worst:.2e}, {wall:.2f} s")


def test_5_corrector_residual():
    inst = load_problem("laplacian_oblique.prob")
    co = limit_coefficients(inst)
    u0, _ = solve_limit(inst)  # smooth limit solution, splined
    prof = inst.profile

    def scaled(eps, delta=0.0):
        x, top, bottom = boundary_residual(corrector_expand(prof, co, u0, eps, delta), inst.oblique)
        return x, top / eps, bottom / eps

    r = {e: max(np.max(np.abs(t)), np.max(np.abs(b))) for e in (0.1, 0.025) for _, t, b in [scaled(e)]}
    ratio = r[0.025] / r[0.1]
    x, top, _ = scaled(0.025, 0.01)
    target = 0.01 * (prof.g_plus(x) - prof.h(x))
    rel = float(np.max(np.abs(top - target) / target))
    ok = ratio <= 0.5 and rel <= 0.2
    assert record(5, "corrector residual", ok,
                  f"max residual/eps ratio (0.025 vs 0.1) {ratio:.3f}; "
                  f"delta=0.01 top residual/eps off delta(g+ - h) by {100 * rel:.1f}%")


SWEEP_EPS = (0.2, 0.1, 0.05, 0.025)


@pytest.fixture(scope="module")
def sweeps():
    start = time.perf_counter()
    cfg = SchemeConfig(nx=201, nt=41)
    out = {}
    for name in ("laplacian_oblique.prob", "bellman_isaacs.prob"):
        out[name] = run_sweep(SweepConfig(load_problem(name), SWEEP_EPS, cfg))
    return out, time.perf_counter() - start


def test_6_convergence_sweep(sweeps):
    reports, wall = sweeps
    ok = wall < 300
    parts = []
    for name, rep in reports.items():
        errs = [r.sup_error for r in rep.rows]
        good = rep.ok and rep.strictly_decreasing() and errs[-1] < 0.5 * errs[0]
        ok &= good
        parts.append(f"{name.split('.')[0]} " + " > ".join(f"{e:.4g}" for e in errs))
    assert record(6, "convergence sweep", ok, "; ".join(parts) + f"; {wall:.1f} s")


def test_7_barrier_sandwich(sweeps):
    reports, _ = sweeps
    margins = [r.barrier_margin for rep in reports.values() for r in rep.rows]
    ok = len(margins) == 8 and all(m >= -1e-6 for m in margins)
    assert record(7, "barrier sandwich", ok,
                  f"min margin {min(margins):.3g} over {len(margins)} solves (tol 1e-6)")


def test_8_hypothesis_battery():
    valid = {p.name: run_checks(load_problem(p)) for p in bundled_problems()}
    broken = {"incompatible.prob": "compatibility", "zero_c.prob": "positivity of c",
              "degenerate_dirichlet.prob": "normal ellipticity"}
    got = {f: run_checks(load_problem(FIXTURES / f, validate=False)).failed() for f in broken}
    ok = all(r.passed for r in valid.values()) and all(got[f] == [c] for f, c in broken.items())
    detail = f"{sum(r.passed for r in valid.values())}/{len(valid)} shipped pass; " + ", ".join(
        f"{f} fails {got[f]}" for f in broken)
    assert record(8, "hypothesis battery", ok, detail)


def test_9_manufactured_order():
    lim = run_manufactured(laplacian_neumann_instance(), "cos(pi*x)", 3)
    thin = run_manufactured(load_problem("laplacian_oblique.prob"), "cos(pi*x)", 3, kind="thin",
                            nx0=41, nt0=11, eps=0.1)
    ok = min(lim.orders) >= 1.5 and min(thin.ratios) >= 1.5
    assert record(9, "manufactured-solution order", ok,
                  "limit orders " + ", ".join(f"{o:.2f}" for o in lim.orders)
                  + "; thin ratios " + ", ".join(f"{q:.2f}" for q in thin.ratios))
