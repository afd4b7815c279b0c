"""Thin-domain dimension reduction for fully nonlinear elliptic equations with
oblique top/bottom conditions: limit operator assembly, monotone finite
differences for the thin and limit problems, and hypothesis checks."""
from .fdsolver import GridFunction, SchemeConfig, SolveReport, solve, sup_norm_error
from .harness import run_checks, run_counterexample, run_manufactured, run_sweep
from .limit import LimitOperator, build_limit, eval_G
from .operators import BellmanIsaacsOperator, eval_F
from .problem import ProblemInstance, load_problem, parse_problem, serialize_problem

__all__ = [
    "BellmanIsaacsOperator", "GridFunction", "LimitOperator", "ProblemInstance", "SchemeConfig",
    "SolveReport", "build_limit", "eval_F", "eval_G", "load_problem", "parse_problem",
    "run_checks", "run_counterexample", "run_manufactured", "run_sweep", "serialize_problem",
    "solve", "sup_norm_error",
]
__version__ = "0.1.0"
