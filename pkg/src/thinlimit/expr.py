"""Analytic fields over [0,1] or [0,1]x[-1,1] built from a small expression language.

Expressions are parsed with :mod:`ast`, checked against a whitelist and
compiled to vectorised numpy callables. Supported syntax::

    numbers, x, y, pi, e
    +  -  *  /  ^ (or **)  unary -
    exp log sin cos tan sqrt sinh cosh tanh abs min max
"""
from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

X_DOMAIN = (0.0, 1.0)
Y_DOMAIN = (-1.0, 1.0)

_FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "abs": np.abs,
}
_REDUCERS = {"min": np.minimum, "max": np.maximum}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


class ExpressionError(ValueError):
    """Malformed or disallowed expression; carries a 1-based column."""

    def __init__(self, message: str, column: int | None = None):
        self.column = column
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)


def _caret_to_pow(text: str) -> tuple[str, list[int]]:
    """Rewrite ``^`` as ``**`` and keep a map back to original columns."""
    out = []
    colmap = []
    for i, ch in enumerate(text):
        if ch == "^":
            out.append("**")
            colmap.extend([i, i])
        else:
            out.append(ch)
            colmap.append(i)
    colmap.append(len(text))
    return "".join(out), colmap


class _Validator(ast.NodeVisitor):
    def __init__(self, allowed_vars, colmap):
        self.allowed_vars = allowed_vars
        self.colmap = colmap
        self.used: set[str] = set()

    def _fail(self, node, msg):
        col = getattr(node, "col_offset", None)
        if col is not None:
            col = self.colmap[min(col, len(self.colmap) - 1)] + 1
        raise ExpressionError(msg, col)

    def generic_visit(self, node):
        self._fail(node, f"unsupported syntax '{type(node).__name__}'")

    def visit_Expression(self, node):
        self.visit(node.body)

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            self._fail(node, f"unsupported constant {node.value!r}")

    def visit_Name(self, node):
        if node.id in self.allowed_vars:
            self.used.add(node.id)
        elif node.id not in _CONSTANTS:
            self._fail(node, f"unknown name '{node.id}'")

    def visit_BinOp(self, node):
        if not isinstance(node.op, _BINOPS):
            self._fail(node, f"unsupported operator '{type(node.op).__name__}'")
        self.visit(node.left)
        self.visit(node.right)

    def visit_UnaryOp(self, node):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            self._fail(node, "unsupported unary operator")
        self.visit(node.operand)

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name):
            self._fail(node, "only plain function calls are allowed")
        name = node.func.id
        if node.keywords:
            self._fail(node, "keyword arguments are not allowed")
        if name in _FUNCTIONS:
            if len(node.args) != 1:
                self._fail(node, f"{name}() takes exactly one argument")
        elif name in _REDUCERS:
            if len(node.args) < 2:
                self._fail(node, f"{name}() needs at least two arguments")
        else:
            self._fail(node, f"unknown function '{name}'")
        for arg in node.args:
            self.visit(arg)


class _Substitute(ast.NodeTransformer):
    def __init__(self, name, value):
        self.name = name
        self.value = value

    def visit_Name(self, node):
        if node.id == self.name:
            return ast.copy_location(ast.Constant(self.value), node)
        return node


def _reduce(fn):
    def call(*args):
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out

    return call


_NAMESPACE = {"__builtins__": {}, **_FUNCTIONS, **_CONSTANTS}
_NAMESPACE.update({k: _reduce(v) for k, v in _REDUCERS.items()})


class Expression:
    """A validated expression in the variables ``x`` (and ``y``)."""

    def __init__(self, text: str | float, variables=("x", "y")):
        text = str(text).strip()
        if not text:
            raise ExpressionError("empty expression", 1)
        rewritten, colmap = _caret_to_pow(text)
        try:
            tree = ast.parse(rewritten, mode="eval")
        except SyntaxError as exc:
            col = exc.offset or 1
            raise ExpressionError(
                f"syntax error: {exc.msg}", colmap[min(col - 1, len(colmap) - 1)] + 1
            ) from None
        self._init_from_tree(tree, tuple(variables), colmap)

    def _init_from_tree(self, tree, variables, colmap=None):
        colmap = colmap or list(range(10_000))
        validator = _Validator(set(variables), colmap)
        validator.visit(tree)
        self.variables = variables
        self.used = frozenset(validator.used)
        self.tree = ast.fix_missing_locations(tree)
        self.source = ast.unparse(self.tree)
        self._code = compile(self.tree, "<expr>", "eval")

    @classmethod
    def _from_tree(cls, tree, variables):
        obj = cls.__new__(cls)
        obj._init_from_tree(tree, variables)
        return obj

    def __call__(self, x, y=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        with np.errstate(all="ignore"):
            val = eval(self._code, _NAMESPACE, {"x": x, "y": y})
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()

    def substitute(self, name: str, value: float) -> "Expression":
        tree = _Substitute(name, float(value)).visit(ast.parse(self.source, mode="eval"))
        return Expression._from_tree(tree, self.variables)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.source == self.source

    def __hash__(self):
        return hash(self.source)


# ---------------------------------------------------------------------------
# finite differences

_C1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_C1_FWD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_C2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_C2_FWD = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0


def derivative(f, x, order=1, h=None, lo=X_DOMAIN[0], hi=X_DOMAIN[1]):
    """Fourth-order finite-difference derivative of a vectorised ``f`` at ``x``.

    Central stencils are used where the five-point stencil fits in
    ``[lo, hi]``; one-sided fourth-order stencils are used otherwise.
    ``f`` is always called with arrays shaped like ``x``.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if h is None:
        h = 1e-4 if order == 1 else 1e-3
    x = np.asarray(x, dtype=float)
    c_central, c_fwd = (_C1, _C1_FWD) if order == 1 else (_C2, _C2_FWD)
    scale = h**order
    with np.errstate(all="ignore"):
        out = sum(c * f(x + k * h) for c, k in zip(c_central, range(-2, 3))) / scale
        left = x - 2 * h < lo - 1e-15
        right = x + 2 * h > hi + 1e-15
        if np.any(left):
            fwd = sum(c * f(x + k * h) for k, c in enumerate(c_fwd)) / scale
            out = np.where(left, fwd, out)
        if np.any(right):
            bwd = sum(c * f(x - k * h) for k, c in enumerate(c_fwd)) / scale * (-1) ** order
            out = np.where(right, bwd, out)
    return out


# ---------------------------------------------------------------------------
# fields


class Field:
    """Vectorised scalar field ``f(x, y)``; ``y`` is ignored on 1-D fields.

    Subclasses may supply analytic partial derivatives; otherwise finite
    differences are used.
    """

    two_d = True

    def __call__(self, x, y=0.0):
        raise NotImplementedError

    def dx(self, x, y=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return derivative(lambda s: self(s, y), x)

    def dxx(self, x, y=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return derivative(lambda s: self(s, y), x, order=2)

    def dy(self, x, y=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return derivative(lambda s: self(x, s), y, lo=Y_DOMAIN[0], hi=Y_DOMAIN[1])

    def at_y(self, y0: float) -> "Field":
        """Trace ``x -> f(x, y0)`` as a 1-D field."""
        return FunctionField(lambda x, y=0.0: self(x, y0), dx=lambda x, y=0.0: self.dx(x, y0),
                             two_d=False)


class FunctionField(Field):
    def __init__(self, fn, dx=None, dy=None, two_d=True):
        self._fn = fn
        self._dx = dx
        self._dy = dy
        self.two_d = two_d

    def __call__(self, x, y=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.broadcast_to(np.asarray(self._fn(x, y), dtype=float), shape).copy()

    def dx(self, x, y=0.0):
        if self._dx is not None:
            return np.broadcast_to(self._dx(x, y), np.broadcast_shapes(np.shape(x), np.shape(y)))
        return super().dx(x, y)

    def dy(self, x, y=0.0):
        if self._dy is not None:
            return np.broadcast_to(self._dy(x, y), np.broadcast_shapes(np.shape(x), np.shape(y)))
        return super().dy(x, y)


def constant(value: float, two_d=True) -> Field:
    return ScalarField(repr(float(value)), two_d=two_d)


class ScalarField(Field):
    """Expression-backed field, optionally with analytic ``dx``/``dy``."""

    def __init__(self, expr, two_d=True, dx=None, dy=None):
        variables = ("x", "y") if two_d else ("x",)
        self.two_d = two_d
        self.expr = expr if isinstance(expr, Expression) else Expression(expr, variables)
        self.dx_expr = None if dx is None else (
            dx if isinstance(dx, Expression) else Expression(dx, variables))
        self.dy_expr = None if dy is None else (
            dy if isinstance(dy, Expression) else Expression(dy, variables))
        if self.dy_expr is not None and not two_d:
            raise ExpressionError("dy given for a field of x only")

    @property
    def source(self) -> str:
        return self.expr.source

    def __call__(self, x, y=0.0):
        return self.expr(x, y)

    def dx(self, x, y=0.0):
        if self.dx_expr is not None:
            return self.dx_expr(x, y)
        return super().dx(x, y)

    def dy(self, x, y=0.0):
        if self.dy_expr is not None:
            return self.dy_expr(x, y)
        return super().dy(x, y)

    def dxx(self, x, y=0.0):
        if self.dx_expr is not None:
            x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
            return derivative(lambda s: self.dx_expr(s, y), x)
        return super().dxx(x, y)

    def at_y(self, y0: float) -> "ScalarField":
        if not self.two_d:
            return self
        dx = None if self.dx_expr is None else self.dx_expr.substitute("y", y0)
        return ScalarField(self.expr.substitute("y", y0), two_d=False, dx=dx)

    def sample_points(self, n=1001):
        xs = np.linspace(*X_DOMAIN, n)
        if not self.two_d:
            return xs, np.zeros_like(xs)
        ny = max(3, min(n, 201))
        X, Y = np.meshgrid(xs, np.linspace(*Y_DOMAIN, ny), indexing="ij")
        return X.ravel(), Y.ravel()

    def check_finite(self, n=1001):
        """Return a witness point where the field is not finite, or None."""
        xs, ys = self.sample_points(n)
        vals = self(xs, ys)
        bad = ~np.isfinite(vals)
        if bad.any():
            k = int(np.argmax(bad))
            return (float(xs[k]), float(ys[k]))
        return None

    def check_derivatives(self, n=101, rtol=1e-6):
        """Compare supplied derivative expressions against central differences."""
        problems = []
        xs = np.linspace(*X_DOMAIN, n)
        ys = np.zeros_like(xs) if not self.two_d else np.linspace(-0.5, 0.5, n)
        for name, expr, fd in (("dx", self.dx_expr, Field.dx), ("dy", self.dy_expr, Field.dy)):
            if expr is None:
                continue
            exact = expr(xs, ys)
            approx = fd(self, xs, ys)
            err = np.abs(exact - approx) / np.maximum(1.0, np.abs(approx))
            k = int(np.argmax(err))
            if err[k] > rtol:
                problems.append((name, float(xs[k]), float(ys[k]), float(err[k])))
        return problems

    def __repr__(self):
        return f"ScalarField({self.source!r})"


# ---------------------------------------------------------------------------
# slopes in y at y = 0

Y_SLOPE_STEPS = (1e-2, 5e-3)


def y_slope(field: Field, x, steps=Y_SLOPE_STEPS):
    """Richardson-extrapolated central slope ``d/dy field(x, 0)``.

    Returns ``(slope, residual)`` where the residual combines the
    extrapolation correction and the mismatch between one-sided slopes
    (which exposes a kink at ``y = 0``).
    """
    x = np.asarray(x, dtype=float)
    h1, h2 = steps
    f0 = field(x, 0.0)

    def parts(h):
        fwd = (field(x, h) - f0) / h
        bwd = (f0 - field(x, -h)) / h
        return 0.5 * (fwd + bwd), fwd - bwd

    d1, m1 = parts(h1)
    d2, m2 = parts(h2)
    ratio = (h1 / h2) ** 2
    slope = (ratio * d2 - d1) / (ratio - 1)
    residual = np.maximum(np.abs(slope - d2), np.abs(2 * m2 - m1))
    return slope, residual


class YSlopeField(Field):
    """The function ``x -> d/dy field(x, 0)`` computed by :func:`y_slope`."""

    two_d = False

    def __init__(self, field: Field):
        self.field = field

    def __call__(self, x, y=0.0):
        return y_slope(self.field, x)[0]
