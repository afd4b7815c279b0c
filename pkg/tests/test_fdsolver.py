import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, make
from thinlimit.fdsolver import (
    DIRICHLET,
    INTERIOR,
    BarrierError,
    DivergenceError,
    GridFunction,
    SchemeConfig,
    SchemeError,
    build_barriers,
    check_barrier_sandwich,
    discretize_limit,
    discretize_thin,
    solve,
    solve_limit,
    solve_thin,
    sup_norm_error,
)
from thinlimit.limit import build_limit
from thinlimit.problem import BaseGrid, ThinGrid, load_problem

Y_ONLY = {"sigma": "[[0, 0], [0, 1]]", "c": "1", "f": "1"}


def test_constant_solution_neumann():
    inst = make(families=[Y_ONLY])
    cfg = SchemeConfig(nx=11, nt=9)
    u, rep = solve_thin(inst, 0.1, cfg)
    assert rep.converged
    np.testing.assert_allclose(u.values, 1.0, atol=1e-9)


def test_y_laplacian_three_point():
    inst = make(families=[Y_ONLY])
    scheme = discretize_thin(inst, 0.1, SchemeConfig(nx=7, nt=6))
    w = scheme.weights[0]
    g = scheme.grid
    expected = 1 / (0.1 * 2 * g.dt) ** 2  # flat strip of height 2 eps
    np.testing.assert_allclose(w[(0, 1)], expected, rtol=1e-12)
    np.testing.assert_allclose(w[(0, -1)], expected, rtol=1e-12)
    for o in ((1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)):
        assert np.all(w[o] == 0)


def test_mapped_cross_moment():
    inst = make(g_plus="1 + x/2\ng_plus.dx = 1/2", g_minus="0", h="(1 + x/2)/2\nh.dx = 1/4")
    eps = 0.1
    scheme = discretize_thin(inst, eps, SchemeConfig(nx=41, nt=6))
    g, w = scheme.grid, scheme.weights[0]
    moment = sum(wk * di * dj * g.dX * g.dt for (di, dj), wk in w.items())
    # t = y / (eps (1 + x/2)) so t_x = -t / (2 + x); the mixed moment is 2 t_x
    x, t = g.X[1:-1, 1:-1], g.T[1:-1, 1:-1]
    np.testing.assert_allclose(moment, -2 * t / (2 + x), rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(moment)) > 0.1


def test_dirichlet_identity_rows(bellman):
    scheme = discretize_thin(bellman, 0.1, SchemeConfig(nx=11, nt=7))
    kinds = scheme.row_kind.reshape(scheme.shape)
    rows = np.flatnonzero(scheme.row_kind == DIRICHLET)
    assert rows.size == 2 * (7 - 2)
    assert set(kinds[0, 1:-1]) == {DIRICHLET}
    for m, f in zip(scheme.matrices, scheme.rhs):
        sub = m[rows].toarray()
        np.testing.assert_array_equal(sub[np.arange(rows.size), rows], 1.0)
        assert np.count_nonzero(sub) == rows.size
        g = scheme.grid
        np.testing.assert_allclose(f[rows], 1 + 0.5 * g.X.ravel()[rows])


def test_all_rows_monotone(laplacian, bellman):
    for inst in (laplacian, bellman, load_problem("oblique_sides.prob")):
        for eps in (0.2, 0.025):
            discretize_thin(inst, eps, SchemeConfig(nx=41, nt=11)).check_monotone()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 11 * 7 - 1), st.integers(0, 11 * 7 - 1), st.floats(0.01, 5), st.integers(0, 2**31))
def test_residual_nonincreasing_in_neighbours(node, other, bump, seed):
    inst = load_problem("bellman_isaacs.prob")
    scheme = _small_scheme(inst)
    u = np.random.default_rng(seed).normal(size=scheme.size)
    if node == other:
        return
    v = u.copy()
    v[other] += bump
    assert scheme.residual(v)[node] <= scheme.residual(u)[node] + 1e-9


_CACHE = {}


def _small_scheme(inst):
    if "bi" not in _CACHE:
        _CACHE["bi"] = discretize_thin(inst, 0.1, SchemeConfig(nx=11, nt=7))
    return _CACHE["bi"]


def test_cross_term_failure_named():
    inst = make(families=[{"sigma": "[[1, 0.5], [0, 1]]", "c": "1"}])
    with pytest.raises(SchemeError, match=r"node \(i=\d+, j=\d+\): A22\*dX >= \|A12\|\*dt fails; use a finer nt"):
        discretize_thin(inst, 0.5, SchemeConfig(nx=201, nt=3))
    with pytest.raises(SchemeError, match=r"A11\*dt >= \|A12\|\*dX fails; refine nx"):
        discretize_thin(inst, 0.01, SchemeConfig(nx=11, nt=201))


def test_obliqueness_guard():
    inst = make(g_plus="1 + x", g_minus="0", oblique={"gamma1_plus": "2", "gamma1_minus": "-2"},
                validate=False)
    with pytest.raises(SchemeError, match="obliqueness"):
        discretize_thin(inst, 0.6, SchemeConfig(nx=11, nt=5))


def test_tau_validation(laplacian):
    with pytest.raises(SchemeError, match="tau"):
        discretize_thin(laplacian, 0.1, SchemeConfig(nx=11, nt=5, tau=1.5))
    with pytest.raises(SchemeError, match="stable range"):
        discretize_thin(laplacian, 0.1, SchemeConfig(nx=11, nt=5, method="explicit", tau=1.0))


def test_divergence_error_history(laplacian):
    cfg = SchemeConfig(nx=21, nt=7, method="explicit", max_iter=3)
    with pytest.raises(DivergenceError) as err:
        solve_thin(laplacian, 0.1, cfg)
    assert len(err.value.history) == 4
    _, rep = solve(discretize_thin(laplacian, 0.1, cfg), cfg, raise_on_divergence=False)
    assert not rep.converged and rep.iterations == 3


def test_explicit_matches_policy():
    inst = make(families=[{"sigma": "[[1, 0], [0, 1]]", "c": "1", "f": "1 + x"}],
                oblique={"gamma1_plus": "0.2*x", "gamma1_minus": "-0.2*x"})
    cfg_p = SchemeConfig(nx=9, nt=5, tol=1e-11)
    cfg_e = SchemeConfig(nx=9, nt=5, tol=1e-11, method="explicit", max_iter=200000)
    up, _ = solve_thin(inst, 0.5, cfg_p)
    ue, rep = solve_thin(inst, 0.5, cfg_e)
    assert rep.converged
    np.testing.assert_allclose(ue.values, up.values, atol=1e-8)


def test_limit_constant_solution():
    inst = make(families=[{"sigma": "[[1, 0], [0, 1]]", "c": "1", "f": "1"}])
    u, _ = solve_limit(inst, SchemeConfig(), nx=21)
    np.testing.assert_allclose(u.values, 1.0, atol=1e-10)


def test_limit_manufactured_second_order():
    # G = -(1 + x^2) u'' - b u' + u - f with gamma_o = x; f chosen so u = cos(pi x)
    inst = make(oblique={"gamma1_plus": "x", "gamma1_minus": "-x"})
    limop = build_limit(inst)
    fam = limop.reduced[0]
    errs = []
    for nx in (21, 41, 81):
        x = np.linspace(0, 1, nx)
        exact = np.cos(np.pi * x)
        scheme = discretize_limit(limop, inst.lateral, SchemeConfig(), nx)
        shift = (fam.a(x) * np.pi**2 * np.cos(np.pi * x) + fam.b(x) * np.pi * np.sin(np.pi * x)
                 + fam.c(x) * exact - fam.f(x))
        scheme.rhs[0] = scheme.rhs[0] + shift
        u, _ = solve(scheme, SchemeConfig(tol=1e-12))
        errs.append(np.max(np.abs(u.values - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.5), orders


def test_sup_norm_error_examples():
    inst = make()
    g = ThinGrid(inst.profile, 0.1, 11, 5)
    base = BaseGrid(11)
    lim = GridFunction(base, base.x.copy())
    assert sup_norm_error(GridFunction(g, g.X.copy()), lim) == 0.0
    assert sup_norm_error(GridFunction(g, g.X + g.Y), lim) == pytest.approx(0.1)
    fine = BaseGrid(21)
    lim2 = GridFunction(fine, fine.x**2)
    err = sup_norm_error(GridFunction(g, g.X**2 + 0.0), lim2)
    assert err <= (fine.dx) ** 2 / 4 + 1e-15


def test_barriers(laplacian):
    cfg = SchemeConfig(nx=41, nt=11)
    scheme = discretize_thin(laplacian, 0.1, cfg)
    u, _ = solve(scheme, cfg)
    bars = build_barriers(laplacian, 0.1, cfg, scheme=scheme)
    res = check_barrier_sandwich(u, bars)
    assert res.passed and res.value > 0
    touch = GridFunction(u.grid, bars.psi_upper.values + bars.M)
    res = check_barrier_sandwich(touch, bars)
    assert res.passed and res.value == pytest.approx(0.0, abs=1e-12)
    over = GridFunction(u.grid, bars.psi_upper.values + bars.M + 1)
    res = check_barrier_sandwich(over, bars)
    assert not res.passed and res.witness["side"] == "upper"


def test_barriers_refuse_incompatible():
    inst = load_problem(FIXTURES / "incompatible.prob", validate=False)
    with pytest.raises(BarrierError, match="compatibility required"):
        build_barriers(inst, 0.1, SchemeConfig(nx=11, nt=5))


def test_discrete_comparison(laplacian):
    # raising the top data can only raise the solution
    cfg = SchemeConfig(nx=21, nt=7)
    s = discretize_thin(laplacian, 0.1, cfg)
    u, _ = solve(s, cfg)
    top = np.flatnonzero(s.row_kind.reshape(s.shape)[:, -1] != INTERIOR) * s.shape[1] + s.shape[1] - 1
    s.rhs[0] = s.rhs[0].copy()
    s.rhs[0][top] += 0.1
    v, _ = solve(s, cfg)
    assert np.all(v.values >= u.values - 1e-9)
