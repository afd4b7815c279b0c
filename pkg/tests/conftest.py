from __future__ import annotations

from pathlib import Path

import pytest

from thinlimit.problem import PROBLEMS_DIR, load_problem, parse_problem

FIXTURES = Path(__file__).parent / "fixtures"


def problem_text(g_plus="1", g_minus="-1", h=None, oblique=None, lateral=None, families=None,
                 alpha=1, C_F=10, solver=None):
    """Assemble a problem file from keyword pieces (dicts of key -> value)."""
    lines = ["[domain]", f"g_plus = {g_plus}", f"g_minus = {g_minus}"]
    if h is not None:
        lines.append(f"h = {h}")
    if oblique:
        lines += ["", "[oblique]"] + [f"{k} = {v}" for k, v in oblique.items()]
    if lateral:
        lines += ["", "[lateral]"] + [f"{k} = {v}" for k, v in lateral.items()]
    lines += ["", "[operator]", f"alpha = {alpha}", f"C_F = {C_F}"]
    for idx, fam in enumerate(families or [{"sigma": "[[1, 0], [0, 1]]", "c": "1"}]):
        lines += [f"family.{idx}.{k} = {v}" for k, v in fam.items()]
    if solver:
        lines += ["", "[solver]"] + [f"{k} = {v}" for k, v in solver.items()]
    return "\n".join(lines) + "\n"


def make(validate=True, **kw):
    return parse_problem(problem_text(**kw), validate=validate)


@pytest.fixture(scope="session")
def laplacian():
    return load_problem(PROBLEMS_DIR / "laplacian_oblique.prob")


@pytest.fixture(scope="session")
def bellman():
    return load_problem(PROBLEMS_DIR / "bellman_isaacs.prob")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
