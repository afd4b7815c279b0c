import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, make, problem_text
from thinlimit.problem import (
    InvariantError,
    ParseError,
    ThinGrid,
    bundled_problems,
    check_lateral,
    check_obliqueness_tb,
    load_problem,
    outward_normal_tb,
    parse_problem,
    resolve_problem_path,
    serialize_problem,
)


def test_constant_profile_infers_delta0():
    inst = make(g_plus="1", g_minus="0", h="0.5")
    assert inst.profile.delta0 == pytest.approx(0.5)


def test_equal_profiles_rejected():
    with pytest.raises(InvariantError, match="g_minus < g_plus violated at x=0"):
        make(g_plus="x", g_minus="x")


def test_incompatible_data_rejected():
    with pytest.raises(InvariantError, match="compatibility violated"):
        make(g_plus="1", g_minus="0", oblique={"beta_plus": "1", "beta_minus": "0"})


def test_h_outside_margin_rejected():
    with pytest.raises(InvariantError, match="delta0"):
        parse_problem(problem_text(g_plus="1", g_minus="0", h="0.5") .replace("h = 0.5", "h = 0.5\ndelta0 = 0.6"))


def test_parse_error_positions():
    with pytest.raises(ParseError) as err:
        parse_problem("[domain]\ng_plus = 1 + foo(x)\n")
    assert (err.value.line, err.value.column) == (2, 14)
    with pytest.raises(ParseError, match="unknown key 'domain.bogus'"):
        parse_problem("[domain]\nbogus = 1\n")
    with pytest.raises(ParseError, match="unknown section"):
        parse_problem("[nowhere]\n")
    with pytest.raises(ParseError, match="missing required key 'operator.alpha'"):
        parse_problem("[domain]\ng_plus = 1\ng_minus = 0\n[operator]\nC_F = 1\n")


def test_bad_derivative_expression_rejected():
    make(g_plus="1 + x^2", g_minus="-1")
    with pytest.raises(InvariantError, match="g_plus.dx"):
        parse_problem(problem_text(g_plus="1 + x^2").replace("g_plus = 1 + x^2", "g_plus = 1 + x^2\ng_plus.dx = x"))


def test_supplied_slopes_must_agree():
    ob = {"gamma1_plus": "x + 2*y", "gamma1_minus": "-x", "k_plus": "2", "k_minus": "0",
          "l_plus": "0", "l_minus": "0"}
    make(oblique=ob)
    with pytest.raises(InvariantError, match="disagrees"):
        make(oblique={**ob, "k_plus": "3"})


def test_non_smooth_y_dependence_rejected():
    with pytest.raises(InvariantError, match="y-expansion not satisfied"):
        make(oblique={"gamma1_plus": "abs(y)", "gamma1_minus": "abs(y)"})


def test_slopes_extracted():
    inst = make(oblique={"gamma1_plus": "sin(y)", "beta_plus": "1", "beta_minus": "-1"})
    x = np.linspace(0, 1, 5)
    np.testing.assert_allclose(inst.oblique.k_plus(x), 1.0, atol=1e-8)
    np.testing.assert_allclose(inst.oblique.l_plus(x), 0.0, atol=1e-12)


def test_lateral_oblique_requirements():
    ok = make(lateral={"kind": "oblique", "gamma1": "2*x - 1", "gamma2": "y"})
    assert check_lateral(ok.lateral).passed
    with pytest.raises(InvariantError, match="gamma1 \\* nu"):
        make(lateral={"kind": "oblique", "gamma1": "1"})
    with pytest.raises(InvariantError, match="gamma2"):
        make(lateral={"kind": "oblique", "gamma1": "2*x - 1", "gamma2": "1"})
    with pytest.raises(ParseError, match="not used by lateral kind neumann"):
        make(lateral={"kind": "neumann", "beta": "1"})


def test_normals():
    flat = make(g_plus="1", g_minus="0").profile
    np.testing.assert_allclose(outward_normal_tb(flat, 0.3, 0.5, "top"), [0, 1], atol=1e-10)
    np.testing.assert_allclose(outward_normal_tb(flat, 0.3, 0.5, "bottom"), [0, -1], atol=1e-10)
    slope = make(g_plus="x + 1", g_minus="0", h="(x+1)/2").profile
    np.testing.assert_allclose(outward_normal_tb(slope, 1.0, 0.5, "top"), np.array([-1, 1]) / np.sqrt(2),
                               atol=1e-10)


def test_obliqueness_examples():
    inst = make(g_plus="1 + x", g_minus="0", oblique={"gamma1_plus": "2", "gamma1_minus": "-2"},
                validate=False)
    assert check_obliqueness_tb(inst.profile, inst.oblique, 0.4).value == pytest.approx(0.2)
    res = check_obliqueness_tb(inst.profile, inst.oblique, 0.6)
    assert not res.passed and res.value == pytest.approx(-0.2)
    zero = make(g_plus="1 + x", g_minus="0")
    assert check_obliqueness_tb(zero.profile, zero.oblique, 0.1).value == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 2.0))
def test_obliqueness_halving_never_fails(eps):
    inst = load_problem("laplacian_oblique.prob")
    if check_obliqueness_tb(inst.profile, inst.oblique, eps).passed:
        assert check_obliqueness_tb(inst.profile, inst.oblique, eps / 2).passed


def test_thin_grid_geometry(laplacian):
    g = ThinGrid(laplacian.profile, 0.1, 11, 5)
    p = laplacian.profile
    np.testing.assert_allclose(g.Y[:, 0], 0.1 * p.g_minus(g.x))
    np.testing.assert_allclose(g.Y[:, -1], 0.1 * p.g_plus(g.x))
    assert np.all(g.Y[:, 1:] >= g.Y[:, :-1])
    fine = ThinGrid(laplacian.profile, 0.1, 21, 9)
    np.testing.assert_allclose(fine.X[::2, ::2], g.X)
    np.testing.assert_allclose(fine.Y[::2, ::2], g.Y)


def test_thin_grid_metric_terms(laplacian):
    g = ThinGrid(laplacian.profile, 0.1, 41, 11)
    # s = -(dt/dX at fixed y) * ... check u_x = U_X - s U_t for u = y
    h = 1e-6
    p = laplacian.profile
    y = lambda X, T: 0.1 * (p.g_minus(X) + T * (p.g_plus(X) - p.g_minus(X)))
    UX = (y(g.X + h, g.T) - y(g.X - h, g.T)) / (2 * h)
    Ut = (y(g.X, g.T + h) - y(g.X, g.T - h)) / (2 * h)
    np.testing.assert_allclose(UX - g.s * Ut, 0.0, atol=1e-8)  # u = y has u_x = 0
    np.testing.assert_allclose(Ut / (0.1 * g.H), 1.0, atol=1e-8)  # and u_y = 1


def test_round_trip_bundled():
    for path in bundled_problems():
        inst = load_problem(path)
        again = parse_problem(serialize_problem(inst))
        assert again.raw == inst.raw
        assert serialize_problem(again) == serialize_problem(inst)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3), st.floats(-0.5, 0.5), st.integers(3, 400))
def test_round_trip_random(a, k, nx):
    text = problem_text(g_plus=f"{a!r} + 0.1*x", g_minus=f"-{a!r}",
                        oblique={"gamma1_plus": f"{k!r}*x + y", "gamma1_minus": f"-{k!r}*x"},
                        solver={"nx": nx})
    inst = parse_problem(text)
    assert parse_problem(serialize_problem(inst)).raw == inst.raw


def test_overrides_and_bundled_resolution():
    inst = load_problem("examples/laplacian_oblique.prob", overrides=["solver.nx=51", "operator.alpha=0.5"])
    assert inst.solver.nx == 51 and inst.operator.alpha == 0.5
    assert resolve_problem_path("nowhere/bellman_isaacs.prob").name == "bellman_isaacs.prob"
    with pytest.raises(ParseError, match="unknown key"):
        load_problem("laplacian_oblique.prob", overrides=["solver.bogus=1"])


def test_fixtures_load_without_validation():
    for path in FIXTURES.glob("*.prob"):
        load_problem(path, validate=False)
    with pytest.raises(InvariantError, match="compatibility"):
        load_problem(FIXTURES / "incompatible.prob")
