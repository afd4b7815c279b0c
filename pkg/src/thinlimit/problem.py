"""Problem files, validated instances and thin-domain geometry.

A problem file is a line-oriented key/value text with sections::

    [domain]
    g_plus = 1 + 0.25*sin(pi*x)^2
    g_minus = -1

    [operator]
    alpha = 1
    C_F = 10
    family.0.sigma = [[1, 0], [0, 1]]
    family.0.c = 1

See ``docs/problem_format.md`` for the full grammar.
"""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .expr import (
    ExpressionError,
    Field,
    ScalarField,
    X_DOMAIN,
    YSlopeField,
    y_slope,
)
from .operators import BellmanIsaacsOperator, CoefficientFamily
from .report import CheckResult

COMPAT_TOL = 1e-10
EXPANSION_TOL = 1e-4
SLOPE_AGREE_TOL = 1e-6
SAMPLES = 1001

LATERAL_KINDS = ("neumann", "oblique", "dirichlet")
CORNER_RULES = ("prefer_top_bottom", "prefer_lateral")
METHODS = ("policy", "explicit")

PROBLEMS_DIR = Path(__file__).parent / "problems"


class ParseError(ValueError):
    """Malformed problem text; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class InvariantError(ValueError):
    """A parsed instance violates a structural requirement."""

    def __init__(self, result: CheckResult):
        self.result = result
        wit = ", ".join(f"{k}={_fmt(v)}" for k, v in result.witness.items())
        msg = result.detail or f"{result.name} violated"
        super().__init__(f"{msg} at {wit}" if wit else msg)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class DomainProfile:
    g_minus: ScalarField
    g_plus: ScalarField
    h: ScalarField
    delta0: float

    def thickness(self, x):
        return self.g_plus(x) - self.g_minus(x)


@dataclass(frozen=True)
class ObliqueData:
    """Top/bottom oblique data; ``gamma2`` is +1 on top and -1 on bottom."""

    gamma1_plus: ScalarField
    gamma1_minus: ScalarField
    beta_plus: ScalarField
    beta_minus: ScalarField
    k_plus: Field
    k_minus: Field
    l_plus: Field
    l_minus: Field
    slopes_given: bool = False

    @property
    def gamma_o(self) -> ScalarField:
        return self.gamma1_plus.at_y(0.0)

    @property
    def beta_o(self) -> ScalarField:
        return self.beta_plus.at_y(0.0)


@dataclass(frozen=True)
class LateralBC:
    kind: str = "neumann"
    gamma1: ScalarField | None = None
    gamma2: ScalarField | None = None
    beta: ScalarField | None = None

    def __post_init__(self):
        if self.kind not in LATERAL_KINDS:
            raise ValueError(f"unknown lateral kind {self.kind!r}")


@dataclass(frozen=True)
class SolverSettings:
    nx: int = 201
    nt: int = 41
    eps: float = 0.1
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    tol: float = 1e-9
    max_iter: int = 500
    tau: float | None = None
    method: str = "policy"
    cross_scheme: str = "seven_point_split"
    bc_corner_rule: str = "prefer_top_bottom"
    seed: int = 42
    samples: int = 1000
    nx_limit: int | None = None


@dataclass(frozen=True)
class ProblemInstance:
    profile: DomainProfile
    oblique: ObliqueData
    lateral: LateralBC
    operator: BellmanIsaacsOperator
    solver: SolverSettings = field(default_factory=SolverSettings)
    raw: dict = field(default_factory=dict, compare=False, repr=False)
    name: str = ""

    def with_solver(self, **changes) -> "ProblemInstance":
        return replace(self, solver=replace(self.solver, **changes))


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class BaseGrid:
    nx: int

    @property
    def x(self):
        return np.linspace(*X_DOMAIN, self.nx)

    @property
    def dx(self):
        return 1.0 / (self.nx - 1)


class ThinGrid:
    """Fitted grid ``y = eps*(g_minus + t*(g_plus - g_minus))`` on Omega_eps.

    Metric terms of the map ``(X, t) -> (x, y)``: with ``H = g_plus - g_minus``
    and ``s = (g_minus' + t H')/H`` one has ``u_x = U_X - s U_t`` and
    ``u_y = U_t/(eps H)``. ``s_t`` and ``s_X`` are the partials of ``s``.
    """

    def __init__(self, profile: DomainProfile, eps: float, nx: int, nt: int):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if nx < 3 or nt < 3:
            raise ValueError("need nx >= 3 and nt >= 3")
        self.profile = profile
        self.eps = float(eps)
        self.nx, self.nt = int(nx), int(nt)
        self.x = np.linspace(*X_DOMAIN, self.nx)
        self.t = np.linspace(0.0, 1.0, self.nt)
        self.dX = 1.0 / (self.nx - 1)
        self.dt = 1.0 / (self.nt - 1)
        X, T = np.meshgrid(self.x, self.t, indexing="ij")
        self.X, self.T = X, T
        gm, gp = profile.g_minus(X), profile.g_plus(X)
        gm1, gp1 = profile.g_minus.dx(X), profile.g_plus.dx(X)
        gm2, gp2 = profile.g_minus.dxx(X), profile.g_plus.dxx(X)
        H = gp - gm
        Hp = gp1 - gm1
        Hpp = gp2 - gm2
        self.H, self.Hp = H, Hp
        self.Y = self.eps * (gm + T * H)
        self.s = (gm1 + T * Hp) / H
        self.s_t = Hp / H
        self.s_X = (gm2 + T * Hpp) / H - (gm1 + T * Hp) * Hp / H**2
        if np.max(np.abs(self.Y)) > 1.0 + 1e-12:
            raise ValueError(f"eps={eps:g} puts the strip outside the data range |y| <= 1")

    @property
    def shape(self):
        return (self.nx, self.nt)

    def index(self, i, j):
        return i * self.nt + j


# ---------------------------------------------------------------------------
# geometry


def outward_normal_tb(profile: DomainProfile, eps: float, x: float, side: str):
    """Unit outward normal on the top (``side='top'``) or bottom boundary."""
    if side == "top":
        n = np.array([-eps * float(profile.g_plus.dx(x)), 1.0])
    elif side == "bottom":
        n = np.array([eps * float(profile.g_minus.dx(x)), -1.0])
    else:
        raise ValueError("side must be 'top' or 'bottom'")
    return n / np.linalg.norm(n)


def obliqueness_tb(profile: DomainProfile, data: ObliqueData, eps: float, x):
    """Pointwise ``(1 - eps g+' gamma1+, 1 + eps g-' gamma1-)`` on the boundaries."""
    top = 1.0 - eps * profile.g_plus.dx(x) * data.gamma1_plus(x, eps * profile.g_plus(x))
    bot = 1.0 + eps * profile.g_minus.dx(x) * data.gamma1_minus(x, eps * profile.g_minus(x))
    return top, bot


def check_obliqueness_tb(profile: DomainProfile, data: ObliqueData, eps: float,
                         n: int = SAMPLES) -> CheckResult:
    x = np.linspace(*X_DOMAIN, n)
    top, bot = obliqueness_tb(profile, data, eps, x)
    kt, kb = int(np.argmin(top)), int(np.argmin(bot))
    if top[kt] <= bot[kb]:
        value, witness = float(top[kt]), {"side": "top", "x": float(x[kt])}
    else:
        value, witness = float(bot[kb]), {"side": "bottom", "x": float(x[kb])}
    # eps at which the trace-level quantity first vanishes
    slope = max(float(np.max(profile.g_plus.dx(x) * data.gamma1_plus(x, 0.0))),
                float(np.max(-profile.g_minus.dx(x) * data.gamma1_minus(x, 0.0))), 0.0)
    threshold = np.inf if slope == 0 else 1.0 / slope
    return CheckResult("top/bottom obliqueness", passed=value > 0, value=value, witness=witness,
                       detail=f"eps={eps:g}, eps_max~{threshold:.4g}")


# ---------------------------------------------------------------------------
# structural checks used by parsing and by the check battery


def check_profile(profile: DomainProfile, n: int = SAMPLES) -> CheckResult:
    x = np.linspace(*X_DOMAIN, n)
    gm, gp, h = profile.g_minus(x), profile.g_plus(x), profile.h(x)
    gap = gp - gm
    k = int(np.argmin(gap))
    if gap[k] <= 0:
        return CheckResult("profile order", False, float(gap[k]), {"x": float(x[k])},
                           "g_minus < g_plus violated")
    margin = np.minimum(gp - h, h - gm) - profile.delta0
    k = int(np.argmin(margin))
    ok = profile.delta0 > 0 and margin[k] >= -1e-14
    return CheckResult("profile order", bool(ok), float(margin[k]), {"x": float(x[k])},
                       "" if ok else "g_minus + delta0 <= h <= g_plus - delta0 violated")


def check_compatibility(data: ObliqueData, tol: float = COMPAT_TOL, n: int = SAMPLES) -> CheckResult:
    x = np.linspace(*X_DOMAIN, n)
    db = np.abs(data.beta_plus(x, 0.0) + data.beta_minus(x, 0.0))
    dg = np.abs(data.gamma1_plus(x, 0.0) + data.gamma1_minus(x, 0.0))
    kb, kg = int(np.argmax(db)), int(np.argmax(dg))
    if db[kb] >= dg[kg]:
        value, witness, what = float(db[kb]), {"x": float(x[kb])}, "beta_plus(x,0) + beta_minus(x,0)"
    else:
        value, witness, what = float(dg[kg]), {"x": float(x[kg])}, "gamma1_plus(x,0) + gamma1_minus(x,0)"
    ok = value <= tol
    return CheckResult("compatibility", ok, value, witness,
                       "" if ok else f"compatibility violated: |{what}| = {value:.3g}")


def check_expansion(data: ObliqueData, n: int = 201) -> CheckResult:
    """Slopes at y = 0 exist (extraction residual) and describe the data near 0.

    Each field is compared with its own trace, ``f(x,y) - f(x,0) - k(x) y``,
    at dyadic scales ``|y| = 0.1, 0.01, 0.001``; the relative remainder must
    shrink with ``|y|``.
    """
    x = np.linspace(*X_DOMAIN, n)
    worst_res, worst_name, worst_x = 0.0, "", 0.0
    notes = []
    pairs = (("gamma1_plus", data.gamma1_plus, data.k_plus),
             ("gamma1_minus", data.gamma1_minus, data.k_minus),
             ("beta_plus", data.beta_plus, data.l_plus),
             ("beta_minus", data.beta_minus, data.l_minus))
    ok = True
    for name, f, k in pairs:
        slope, res = y_slope(f, x)
        j = int(np.argmax(res))
        if res[j] > worst_res:
            worst_res, worst_name, worst_x = float(res[j]), name, float(x[j])
        kval = k(x)
        if data.slopes_given:
            dev = np.abs(kval - slope)
            j = int(np.argmax(dev))
            if dev[j] > SLOPE_AGREE_TOL * (1 + abs(slope[j])):
                ok = False
                notes.append(f"given slope for {name} disagrees by {dev[j]:.3g} at x={x[j]:.4g}")
        f0 = f(x, 0.0)
        rem = []
        for y in (0.1, 0.01, 0.001):
            r = max(np.max(np.abs(f(x, s * y) - f0 - kval * s * y)) for s in (1.0, -1.0)) / y
            rem.append(float(r))
        scale = 1.0 + float(np.max(np.abs(kval)))
        if not (rem[2] <= 1e-2 * scale and rem[2] <= rem[0] + 1e-9):
            ok = False
            notes.append(f"{name} remainder/|y| = {rem[2]:.3g} at |y|=0.001")
    if worst_res > EXPANSION_TOL:
        ok = False
        notes.insert(0, f"y-expansion not satisfied: slope residual {worst_res:.3g} for {worst_name}")
    return CheckResult("y-expansion", ok, worst_res, {} if ok else {"field": worst_name, "x": worst_x},
                       "; ".join(notes))


def check_lateral(lateral: LateralBC, n: int = SAMPLES) -> CheckResult:
    if lateral.kind != "oblique":
        return CheckResult("lateral obliqueness", True, np.nan, {}, f"not applicable ({lateral.kind})")
    y = np.linspace(-1.0, 1.0, n)
    worst, witness = np.inf, {}
    for xb, nu in ((0.0, -1.0), (1.0, 1.0)):
        vals = lateral.gamma1(xb, y) * nu
        k = int(np.argmin(vals))
        if vals[k] < worst:
            worst, witness = float(vals[k]), {"x": xb, "y": float(y[k])}
    g2 = max(abs(float(lateral.gamma2(xb, 0.0))) for xb in (0.0, 1.0))
    ok = worst > 0 and g2 <= COMPAT_TOL
    detail = ""
    if worst <= 0:
        detail = "gamma1 * nu > 0 violated"
    elif not ok:
        detail = f"gamma2(x,0) = 0 violated (|gamma2| = {g2:.3g})"
        witness = {}
    return CheckResult("lateral obliqueness", ok, worst, witness, detail)


def check_fields(instance_fields, n: int = SAMPLES) -> CheckResult:
    """Finite values on the sample grid and consistent derivative expressions."""
    for name, f in instance_fields:
        if not isinstance(f, ScalarField):
            continue
        bad = f.check_finite(n)
        if bad is not None:
            return CheckResult("field sanity", False, np.nan, {"field": name, "x": bad[0], "y": bad[1]},
                               f"{name} is not finite")
        mism = f.check_derivatives()
        if mism:
            d, xw, yw, err = mism[0]
            return CheckResult("field sanity", False, err, {"field": f"{name}.{d}", "x": xw, "y": yw},
                               f"derivative expression {name}.{d} does not match finite differences")
    return CheckResult("field sanity", True, 0.0)


def iter_fields(inst: ProblemInstance):
    p, o, lat = inst.profile, inst.oblique, inst.lateral
    yield from (("g_minus", p.g_minus), ("g_plus", p.g_plus), ("h", p.h))
    yield from (("gamma1_plus", o.gamma1_plus), ("gamma1_minus", o.gamma1_minus),
                ("beta_plus", o.beta_plus), ("beta_minus", o.beta_minus))
    if o.slopes_given:
        yield from (("k_plus", o.k_plus), ("k_minus", o.k_minus),
                    ("l_plus", o.l_plus), ("l_minus", o.l_minus))
    for name in ("gamma1", "gamma2", "beta"):
        f = getattr(lat, name)
        if f is not None:
            yield f"lateral.{name}", f
    for idx, fam in enumerate(inst.operator.families):
        for r, row in enumerate(fam.sigma):
            for c, s in enumerate(row):
                yield f"family.{idx}.sigma[{r}][{c}]", s
        yield f"family.{idx}.drift[0]", fam.drift[0]
        yield f"family.{idx}.drift[1]", fam.drift[1]
        yield f"family.{idx}.c", fam.zeroth
        yield f"family.{idx}.f", fam.source


def validate_instance(inst: ProblemInstance):
    """Raise :class:`InvariantError` on the first failed structural check."""
    from .operators import check_alpha, check_bounds

    checks = (
        lambda: check_fields(iter_fields(inst)),
        lambda: check_profile(inst.profile),
        lambda: check_compatibility(inst.oblique),
        lambda: check_expansion(inst.oblique),
        lambda: check_lateral(inst.lateral),
        lambda: check_alpha(inst.operator),
        lambda: check_bounds(inst.operator, inst.solver.samples, inst.solver.seed),
    )
    for run in checks:
        res = run()
        if not res.passed:
            raise InvariantError(res)


# ---------------------------------------------------------------------------
# text format

_SCHEMA = {
    "domain": {"g_plus", "g_minus", "h", "delta0", "g_plus.dx", "g_minus.dx", "h.dx"},
    "oblique": {
        *(f"{n}{d}" for n in ("gamma1_plus", "gamma1_minus", "beta_plus", "beta_minus")
          for d in ("", ".dx", ".dy")),
        "k_plus", "k_minus", "l_plus", "l_minus",
    },
    "lateral": {"kind", "gamma1", "gamma2", "beta"},
    "operator": {"alpha", "C_F"},
    "solver": {f.name for f in SolverSettings.__dataclass_fields__.values()},
}
_FAMILY_KEY = re.compile(r"^family\.(\d+)\.(sigma|drift|c|f|lambda|mu)$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_LATERAL_KEYS = {"neumann": set(), "oblique": {"gamma1", "gamma2", "beta"}, "dirichlet": {"beta"}}


@dataclass
class _Entry:
    value: str
    line: int | None = None
    column: int | None = None


def _known(section, key):
    if section == "operator" and _FAMILY_KEY.match(key):
        return True
    return key in _SCHEMA.get(section, ())


def read_sections(text: str) -> dict[str, dict[str, _Entry]]:
    """Split problem text into ``{section: {key: entry}}`` keeping positions."""
    out: dict[str, dict[str, _Entry]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped or stripped.startswith(";"):
            continue
        indent = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError("unterminated section header", lineno, indent + 1)
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ParseError(f"unknown section [{section}]", lineno, indent + 2)
            out.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", lineno, indent + 1)
        if section is None:
            raise ParseError("key outside of any section", lineno, indent + 1)
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ParseError(f"malformed key {key!r}", lineno, indent + 1)
        if not _known(section, key):
            raise ParseError(f"unknown key '{section}.{key}'", lineno, indent + 1)
        if key in out[section]:
            raise ParseError(f"duplicate key '{section}.{key}'", lineno, indent + 1)
        vcol = line.index("=") + 2 + (len(value) - len(value.lstrip()))
        value = value.strip()
        if not value:
            raise ParseError(f"empty value for '{section}.{key}'", lineno, vcol)
        out[section][key] = _Entry(value, lineno, vcol)
    return out


def apply_overrides(sections, overrides):
    """Apply dotted ``section.key=value`` overrides to parsed sections."""
    for item in overrides or ():
        if "=" not in item:
            raise ParseError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        dotted, value = dotted.strip(), value.strip()
        if "." not in dotted:
            raise ParseError(f"override key {dotted!r} needs a section prefix")
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or not _known(section, key):
            raise ParseError(f"unknown key '{dotted}' in override")
        sections.setdefault(section, {})[key] = _Entry(value)
    return sections


class _Builder:
    def __init__(self, sections):
        self.sections = sections

    def entry(self, section, key):
        return self.sections.get(section, {}).get(key)

    def has(self, section, key):
        return self.entry(section, key) is not None

    def expr(self, section, key, two_d, default=None, required=False) -> ScalarField | None:
        e = self.entry(section, key)
        if e is None:
            if required:
                raise ParseError(f"missing required key '{section}.{key}'")
            return None if default is None else ScalarField(default, two_d=two_d)
        dx = self._text(section, key + ".dx")
        dy = self._text(section, key + ".dy")
        try:
            return ScalarField(e.value, two_d=two_d,
                               dx=None if dx is None else self._expr_at(section, key + ".dx", two_d),
                               dy=None if dy is None else self._expr_at(section, key + ".dy", two_d))
        except ExpressionError as exc:
            self._raise(exc, e, section, key)

    def _text(self, section, key):
        e = self.entry(section, key)
        return None if e is None else e.value

    def _expr_at(self, section, key, two_d):
        e = self.entry(section, key)
        try:
            return ScalarField(e.value, two_d=two_d).expr
        except ExpressionError as exc:
            self._raise(exc, e, section, key)

    @staticmethod
    def _raise(exc, e, section, key):
        col = None
        if e.column is not None and exc.column is not None:
            col = e.column + exc.column - 1
        msg = str(exc)
        if exc.column is not None:
            msg = msg.rsplit(" (column", 1)[0]
        raise ParseError(f"{section}.{key}: {msg}", e.line, col) from None

    def number(self, section, key, kind=float, default=None, required=False):
        e = self.entry(section, key)
        if e is None:
            if required:
                raise ParseError(f"missing required key '{section}.{key}'")
            return default
        try:
            if kind is int:
                return int(e.value)
            return float(ScalarField(e.value, two_d=False)(0.0)) if kind is float else kind(e.value)
        except (ValueError, ExpressionError):
            raise ParseError(f"{section}.{key}: expected {kind.__name__}, got {e.value!r}",
                             e.line, e.column) from None

    def matrix(self, section, key, e: _Entry):
        """Parse ``[[a, b], ...]`` or ``[a, b]`` into nested expression sources."""
        try:
            tree = ast.parse(e.value.replace("^", "**"), mode="eval").body
        except SyntaxError as exc:
            raise ParseError(f"{section}.{key}: syntax error", e.line,
                             (e.column or 1) + (exc.offset or 1) - 1) from None

        def conv(node):
            if isinstance(node, ast.List):
                return [conv(n) for n in node.elts]
            return ast.unparse(node)

        return conv(tree)


def _family_fields(b: _Builder):
    groups: dict[int, dict[str, _Entry]] = {}
    for key, e in b.sections.get("operator", {}).items():
        m = _FAMILY_KEY.match(key)
        if m:
            groups.setdefault(int(m.group(1)), {})[m.group(2)] = e
    if not groups:
        raise ParseError("operator needs at least one family (operator.family.0.sigma, ...)")
    families = []
    for idx in sorted(groups):
        g = groups[idx]
        prefix = f"family.{idx}"

        def field_of(src, e, what):
            try:
                return ScalarField(src, two_d=True)
            except ExpressionError as exc:
                b._raise(exc, _Entry(src, e.line, None), "operator", f"{prefix}.{what}")

        if "sigma" not in g:
            raise ParseError(f"missing required key 'operator.{prefix}.sigma'")
        e = g["sigma"]
        rows = b.matrix("operator", f"{prefix}.sigma", e)
        if (not isinstance(rows, list) or not rows
                or not all(isinstance(r, list) and len(r) == 2 and all(isinstance(v, str) for v in r)
                           for r in rows)):
            raise ParseError(f"operator.{prefix}.sigma must be a list of rows [[s1, s2], ...]",
                             e.line, e.column)
        sigma = tuple((field_of(r[0], e, "sigma"), field_of(r[1], e, "sigma")) for r in rows)
        if "drift" in g:
            e = g["drift"]
            d = b.matrix("operator", f"{prefix}.drift", e)
            if not (isinstance(d, list) and len(d) == 2 and all(isinstance(v, str) for v in d)):
                raise ParseError(f"operator.{prefix}.drift must be [b1, b2]", e.line, e.column)
            drift = (field_of(d[0], e, "drift"), field_of(d[1], e, "drift"))
        else:
            drift = (ScalarField("0"), ScalarField("0"))
        if "c" not in g:
            raise ParseError(f"missing required key 'operator.{prefix}.c'")
        c = b.expr("operator", f"{prefix}.c", True)
        f = b.expr("operator", f"{prefix}.f", True, default="0")
        lam = b.number("operator", f"{prefix}.lambda", int, default=idx)
        mu = b.number("operator", f"{prefix}.mu", int, default=0)
        families.append(CoefficientFamily(sigma, drift, c, f, lam, mu))
    return tuple(families)


def _solver(b: _Builder) -> SolverSettings:
    s = SolverSettings()
    kw = {}
    for name in ("nx", "nt", "max_iter", "seed", "samples", "nx_limit"):
        v = b.number("solver", name, int)
        if v is not None:
            kw[name] = v
    for name in ("eps", "tol", "tau"):
        v = b.number("solver", name, float)
        if v is not None:
            kw[name] = v
    e = b.entry("solver", "eps_list")
    if e is not None:
        try:
            kw["eps_list"] = tuple(float(v) for v in e.value.replace("[", "").replace("]", "").split(",")
                                   if v.strip())
        except ValueError:
            raise ParseError("solver.eps_list: expected comma separated numbers", e.line, e.column) from None
    for name, allowed in (("method", METHODS), ("cross_scheme", ("seven_point_split",)),
                          ("bc_corner_rule", CORNER_RULES)):
        e = b.entry("solver", name)
        if e is not None:
            if e.value not in allowed:
                raise ParseError(f"solver.{name} must be one of {', '.join(allowed)}", e.line, e.column)
            kw[name] = e.value
    return replace(s, **kw)


def build_instance(sections, validate: bool = True, name: str = "") -> ProblemInstance:
    b = _Builder(sections)
    g_plus = b.expr("domain", "g_plus", False, required=True)
    g_minus = b.expr("domain", "g_minus", False, required=True)
    h = b.expr("domain", "h", False)
    if h is None:
        h = ScalarField(f"0.5 * ({g_plus.source} + {g_minus.source})", two_d=False)
    x = np.linspace(*X_DOMAIN, SAMPLES)
    delta0 = b.number("domain", "delta0", float)
    if delta0 is None:
        with np.errstate(all="ignore"):
            delta0 = float(np.min(np.minimum(g_plus(x) - h(x), h(x) - g_minus(x))))
    profile = DomainProfile(g_minus, g_plus, h, delta0)

    gp = b.expr("oblique", "gamma1_plus", True, default="0")
    gm = b.expr("oblique", "gamma1_minus", True, default="0")
    bp = b.expr("oblique", "beta_plus", True, default="0")
    bm = b.expr("oblique", "beta_minus", True, default="0")
    slope_keys = ("k_plus", "k_minus", "l_plus", "l_minus")
    given = [b.has("oblique", k) for k in slope_keys]
    if any(given) and not all(given):
        raise ParseError("give all of k_plus, k_minus, l_plus, l_minus or none")
    if all(given):
        slopes = [b.expr("oblique", k, False) for k in slope_keys]
    else:
        slopes = [YSlopeField(f) for f in (gp, gm, bp, bm)]
    oblique = ObliqueData(gp, gm, bp, bm, *slopes, slopes_given=all(given))

    e = b.entry("lateral", "kind")
    kind = "neumann" if e is None else e.value
    if kind not in LATERAL_KINDS:
        raise ParseError(f"lateral.kind must be one of {', '.join(LATERAL_KINDS)}", e.line, e.column)
    for key, ent in b.sections.get("lateral", {}).items():
        if key != "kind" and key not in _LATERAL_KEYS[kind]:
            raise ParseError(f"lateral.{key} is not used by lateral kind {kind}", ent.line, ent.column)
    if kind == "oblique":
        lateral = LateralBC(kind, b.expr("lateral", "gamma1", True, required=True),
                            b.expr("lateral", "gamma2", True, default="0"),
                            b.expr("lateral", "beta", True, default="0"))
    elif kind == "dirichlet":
        lateral = LateralBC(kind, beta=b.expr("lateral", "beta", True, default="0"))
    else:
        lateral = LateralBC(kind)

    alpha = b.number("operator", "alpha", float, required=True)
    C_F = b.number("operator", "C_F", float, required=True)
    try:
        operator = BellmanIsaacsOperator(_family_fields(b), alpha, C_F)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from None

    inst = ProblemInstance(profile, oblique, lateral, operator, _solver(b),
                           raw=normalized(sections), name=name)
    if validate:
        validate_instance(inst)
    return inst


def _normalize_value(section, key, value):
    if section == "operator" and _FAMILY_KEY.match(key) and key.endswith((".sigma", ".drift")):
        tree = ast.parse(value.replace("^", "**"), mode="eval")
        return ast.unparse(tree)
    if (section, key) in {("lateral", "kind"), ("solver", "method"), ("solver", "cross_scheme"),
                          ("solver", "bc_corner_rule"), ("solver", "eps_list")}:
        return " ".join(value.split())
    try:
        return ScalarField(value).source
    except ExpressionError:
        return value


def normalized(sections) -> dict[str, dict[str, str]]:
    out = {}
    for section in _SCHEMA:
        if section in sections:
            out[section] = {k: _normalize_value(section, k, e.value)
                            for k, e in sorted(sections[section].items())}
    return out


def serialize_problem(inst: ProblemInstance) -> str:
    lines = []
    for section, items in inst.raw.items():
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in items.items())
    return "\n".join(lines) + "\n"


def parse_problem(text: str, validate: bool = True, overrides=(), name: str = "") -> ProblemInstance:
    """Parse and (optionally) validate a problem description."""
    sections = apply_overrides(read_sections(text), overrides)
    return build_instance(sections, validate=validate, name=name)


def resolve_problem_path(path) -> Path:
    """Return ``path`` if it exists, else a bundled problem with the same file name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = PROBLEMS_DIR / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no such problem file: {path}")


def load_problem(path, validate: bool = True, overrides=()) -> ProblemInstance:
    p = resolve_problem_path(path)
    return parse_problem(p.read_text(), validate=validate, overrides=overrides, name=p.stem)


def bundled_problems() -> list[Path]:
    return sorted(PROBLEMS_DIR.glob("*.prob"))
