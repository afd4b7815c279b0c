"""The limit operator G on the base interval, its reduced Bellman-Isaacs
form, and the two-scale correctors used to test the thin-to-limit expansion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Field, FunctionField, X_DOMAIN, y_slope
from .operators import BellmanIsaacsOperator, inf_sup
from .problem import EXPANSION_TOL, DomainProfile, LateralBC, ObliqueData, ProblemInstance
from .report import CheckResult


class ExpansionError(ValueError):
    pass


def _field(fn) -> FunctionField:
    """Wrap a function of ``x`` as a 1-D field with finite-difference derivatives."""
    return FunctionField(lambda x, y=0.0: fn(x), two_d=False)


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class YExpansion:
    k_plus: Field
    k_minus: Field
    l_plus: Field
    l_minus: Field
    residual: float


def extract_y_expansion(data: ObliqueData, n: int = 201) -> YExpansion:
    """Slopes ``k+-, l+-`` of the oblique data in ``y`` at ``y = 0``.

    Given slopes are returned unchanged (residual 0); otherwise the slopes
    are Richardson-extrapolated central differences and the residual is the
    largest extrapolation/kink indicator over a sample in ``x``.
    """
    if data.slopes_given:
        return YExpansion(data.k_plus, data.k_minus, data.l_plus, data.l_minus, 0.0)
    x = np.linspace(*X_DOMAIN, n)
    residual = 0.0
    for f in (data.gamma1_plus, data.gamma1_minus, data.beta_plus, data.beta_minus):
        residual = max(residual, float(np.max(y_slope(f, x)[1])))
    if residual > EXPANSION_TOL:
        raise ExpansionError(f"y-expansion not satisfied (slope residual {residual:.3g})")
    return YExpansion(data.k_plus, data.k_minus, data.l_plus, data.l_minus, residual)


@dataclass(frozen=True)
class LimitCoefficients:
    gamma_o: Field
    beta_o: Field
    b: Field
    c: Field
    k_plus: Field
    k_minus: Field
    l_plus: Field
    l_minus: Field


def build_b_c(profile: DomainProfile, gamma_o: Field, beta_o: Field,
              k_plus: Field, k_minus: Field, l_plus: Field, l_minus: Field) -> LimitCoefficients:
    gp, gm = profile.g_plus, profile.g_minus

    def b(x):
        return gamma_o(x) * gamma_o.dx(x) - (gp(x) * k_plus(x) + gm(x) * k_minus(x)) / (gp(x) - gm(x))

    def c(x):
        return -gamma_o(x) * beta_o.dx(x) + (gp(x) * l_plus(x) + gm(x) * l_minus(x)) / (gp(x) - gm(x))

    return LimitCoefficients(gamma_o, beta_o, _field(b), _field(c), k_plus, k_minus, l_plus, l_minus)


def limit_coefficients(inst: ProblemInstance) -> LimitCoefficients:
    data = inst.oblique
    ex = extract_y_expansion(data)
    return build_b_c(inst.profile, data.gamma_o, data.beta_o, ex.k_plus, ex.k_minus, ex.l_plus, ex.l_minus)


def assemble_ABC(coeffs: LimitCoefficients, X, p, x):
    """The matrices ``A(X)``, ``B(p)``, ``C`` at ``x``; each of shape ``(..., 2, 2)``."""
    X, p, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (X, p, x)))
    g, g1 = coeffs.gamma_o(x), coeffs.gamma_o.dx(x)
    bo1 = coeffs.beta_o.dx(x)
    b, c = coeffs.b(x), coeffs.c(x)
    zero = np.zeros_like(X)
    A = np.stack([np.stack([X, -X * g], -1), np.stack([-g * X, g * X * g], -1)], -2)
    B = np.stack([np.stack([zero, -p * g1], -1), np.stack([-p * g1, b * p], -1)], -2)
    C = np.stack([np.stack([zero, bo1 + zero], -1), np.stack([bo1 + zero, c + zero], -1)], -2)
    return A, B, C


# ---------------------------------------------------------------------------
# reduced families and G


@dataclass(frozen=True)
class ReducedFamily:
    """``-a X - b p + c r - f`` on the base interval, ``a = sigma~^T sigma~``."""

    sigma_tilde: object  # callable x -> (..., k)
    a: Field
    b: Field
    c: Field
    f: Field
    lam: int
    mu: int

    def evaluate(self, X, p, r, x):
        return -self.a(x) * X - self.b(x) * p + self.c(x) * r - self.f(x)


def reduce_BI(base: BellmanIsaacsOperator, coeffs: LimitCoefficients) -> tuple[ReducedFamily, ...]:
    out = []
    g = coeffs.gamma_o
    for fam in base.families:
        def sigma_tilde(x, fam=fam):
            x = np.asarray(x, dtype=float)
            S = fam.sigma_matrix(x, np.zeros_like(x))
            return S[..., 0] - S[..., 1] * g(x)[..., None]

        def a(x, fam=fam):
            a11, a12, a22 = fam.diffusion(x, 0.0)
            gx = g(x)
            return a11 - 2 * a12 * gx + a22 * gx * gx

        def bt(x, fam=fam):
            a11, a12, a22 = fam.diffusion(x, 0.0)
            trB = -2 * a12 * g.dx(x) + a22 * coeffs.b(x)
            return trB + fam.drift[0](x, 0.0) - fam.drift[1](x, 0.0) * g(x)

        def ft(x, fam=fam):
            a11, a12, a22 = fam.diffusion(x, 0.0)
            trC = 2 * a12 * coeffs.beta_o.dx(x) + a22 * coeffs.c(x)
            return fam.source(x, 0.0) + trC + fam.drift[1](x, 0.0) * coeffs.beta_o(x)

        def c(x, fam=fam):
            return fam.zeroth(x, 0.0)

        out.append(ReducedFamily(sigma_tilde, _field(a), _field(bt), _field(c), _field(ft),
                                 fam.lam, fam.mu))
    return tuple(out)


@dataclass(frozen=True)
class LimitOperator:
    coeffs: LimitCoefficients
    base: BellmanIsaacsOperator
    reduced: tuple[ReducedFamily, ...]

    @classmethod
    def build(cls, base: BellmanIsaacsOperator, coeffs: LimitCoefficients) -> "LimitOperator":
        return cls(coeffs, base, reduce_BI(base, coeffs))

    @property
    def alpha(self):
        return self.base.alpha

    def eval_direct(self, X, p, r, x):
        """``F(A+B+C, (p, beta_o - gamma_o p), r, (x, 0))``."""
        A, B, C = assemble_ABC(self.coeffs, X, p, x)
        p, x = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(x, dtype=float))
        q = np.stack([p, self.coeffs.beta_o(x) - self.coeffs.gamma_o(x) * p], -1)
        return self.base.evaluate(A + B + C, q, r, x, np.zeros_like(x))

    def eval_reduced(self, X, p, r, x):
        vals = np.stack([np.asarray(f.evaluate(X, p, r, x), dtype=float) for f in self.reduced])
        return inf_sup(vals, [f.lam for f in self.reduced], [f.mu for f in self.reduced])[0]

    def family_tables(self, x):
        """Per-family arrays ``(a, b, c, f)`` evaluated on the points ``x``."""
        return [(f.a(x), f.b(x), f.c(x), f.f(x)) for f in self.reduced]


def eval_G(limop: LimitOperator, X, p, r, x):
    return limop.eval_direct(X, p, r, x)


def build_limit(inst: ProblemInstance) -> LimitOperator:
    return LimitOperator.build(inst.operator, limit_coefficients(inst))


def limit_lateral(lateral: LateralBC):
    """Endpoint rows of the limit problem as ``(kind, gamma(x), beta(x))``.

    Neumann and oblique lateral data reduce to ``gamma1(x,0) u' = beta(x,0)``
    (Neumann: ``gamma1 = nu``, ``beta = 0``); Dirichlet to ``u = beta(x,0)``.
    """
    if lateral.kind == "neumann":
        return "oblique", (lambda x: -1.0 if x == 0 else 1.0), (lambda x: 0.0)
    if lateral.kind == "oblique":
        return ("oblique", lambda x: float(lateral.gamma1(x, 0.0)),
                lambda x: float(lateral.beta(x, 0.0)))
    return "dirichlet", None, lambda x: float(lateral.beta(x, 0.0))


def check_degenerate_ellipticity(limop: LimitOperator, samples: int = 1000, seed: int = 42) -> CheckResult:
    """``A(X)`` is PSD for ``X >= 0`` and ``G`` is nonincreasing in ``X``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(*X_DOMAIN, samples)
    Xp = rng.exponential(size=samples)
    Xp[0] = 0.0
    A, _, _ = assemble_ABC(limop.coeffs, Xp, 0.0, x)
    eig = np.linalg.eigvalsh(A).min(axis=-1)
    g = limop.coeffs.gamma_o(x)
    v = np.stack([np.ones_like(g), -g], -1)
    fact = Xp[:, None, None] * v[:, :, None] * v[:, None, :]
    fact_err = float(np.max(np.abs(fact - A)))

    X = rng.normal(size=samples)
    Y = X + rng.exponential(size=samples)
    Y[0] = X[0]
    p = rng.normal(size=samples)
    r = rng.normal(size=samples)
    gx, gy = eval_G(limop, X, p, r, x), eval_G(limop, Y, p, r, x)
    mono = gx - gy
    min_eig = float(eig.min())
    min_mono = float(mono.min())
    passed = min_eig >= -1e-12 and min_mono >= -1e-12 and fact_err <= 1e-12 * (1 + float(np.max(np.abs(A))))
    value = min(min_eig, min_mono)
    k = int(np.argmin(eig)) if min_eig <= min_mono else int(np.argmin(mono))
    return CheckResult("limit degenerate ellipticity", passed, value, {"x": float(x[k])},
                       f"min eig A={min_eig:.3g}, min G(X)-G(Y)={min_mono:.3g}")


# ---------------------------------------------------------------------------
# correctors and the test function


def _as_field(u0) -> Field:
    """Accept a :class:`Field` or a 1-D grid function; the latter is splined."""
    if isinstance(u0, Field):
        return u0
    from scipy.interpolate import make_interp_spline

    spline = make_interp_spline(u0.grid.x, u0.values, k=5)
    d1, d2 = spline.derivative(1), spline.derivative(2)

    class _Spline(Field):
        two_d = False

        def __call__(self, x, y=0.0):
            return spline(np.asarray(x, dtype=float))

        def dx(self, x, y=0.0):
            return d1(np.asarray(x, dtype=float))

        def dxx(self, x, y=0.0):
            return d2(np.asarray(x, dtype=float))

    return _Spline()


@dataclass(frozen=True)
class Corrector:
    """Correctors ``v``, ``w+-`` of ``u0`` and the test function ``Psi_eps``.

    ``Psi = u0 + v y + ((y - eps g-)^2 w+ + (y - eps g+)^2 w- + delta (y - eps h)^2)/2``
    """

    profile: DomainProfile
    coeffs: LimitCoefficients
    u0: Field
    v: Field
    v1: Field
    w_plus: Field
    w_minus: Field
    eps: float
    delta: float

    def u2(self, x, Y):
        """Second-order corrector in the stretched variable ``Y = y/eps``."""
        p = self.profile
        return 0.5 * (Y - p.g_minus(x)) ** 2 * self.w_plus(x) + 0.5 * (Y - p.g_plus(x)) ** 2 * self.w_minus(x)

    def psi(self, x, y):
        p, e = self.profile, self.eps
        return (self.u0(x) + self.v(x) * y
                + 0.5 * ((y - e * p.g_minus(x)) ** 2 * self.w_plus(x)
                         + (y - e * p.g_plus(x)) ** 2 * self.w_minus(x)
                         + self.delta * (y - e * p.h(x)) ** 2))

    def psi_x(self, x, y):
        p, e = self.profile, self.eps
        ym, yp, yh = y - e * p.g_minus(x), y - e * p.g_plus(x), y - e * p.h(x)
        return (self.u0.dx(x) + y * self.v1(x)
                + 0.5 * (ym**2 * self.w_plus.dx(x) + yp**2 * self.w_minus.dx(x))
                - e * (ym * self.w_plus(x) * p.g_minus.dx(x) + yp * self.w_minus(x) * p.g_plus.dx(x)
                       + self.delta * yh * p.h.dx(x)))

    def psi_y(self, x, y):
        p, e = self.profile, self.eps
        return (self.v(x) + (y - e * p.g_minus(x)) * self.w_plus(x)
                + (y - e * p.g_plus(x)) * self.w_minus(x) + self.delta * (y - e * p.h(x)))


def corrector_expand(profile: DomainProfile, coeffs: LimitCoefficients, u0, eps: float,
                     delta: float = 0.0) -> Corrector:
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    u = _as_field(u0)
    go, bo = coeffs.gamma_o, coeffs.beta_o
    gp, gm = profile.g_plus, profile.g_minus

    def v(x):
        return bo(x) - go(x) * u.dx(x)

    def v1(x):
        return bo.dx(x) - go.dx(x) * u.dx(x) - go(x) * u.dxx(x)

    def w_plus(x):
        return gp(x) / (gp(x) - gm(x)) * (coeffs.l_plus(x) - coeffs.k_plus(x) * u.dx(x) - go(x) * v1(x))

    def w_minus(x):
        return gm(x) / (gp(x) - gm(x)) * (coeffs.l_minus(x) - coeffs.k_minus(x) * u.dx(x) + go(x) * v1(x))

    return Corrector(profile, coeffs, u, _field(v), _field(v1), _field(w_plus), _field(w_minus),
                     float(eps), float(delta))


def boundary_residual(psi: Corrector, data: ObliqueData, n: int = 1001):
    """Oblique residuals of ``Psi_eps`` on the top and bottom boundaries.

    Returns ``(x, top, bottom)`` with ``top = gamma1+ Psi_x + Psi_y - beta+``
    at ``y = eps g+`` and ``bottom = gamma1- Psi_x - Psi_y - beta-`` at
    ``y = eps g-``.
    """
    x = np.linspace(*X_DOMAIN, n)
    p, e = psi.profile, psi.eps
    yt, yb = e * p.g_plus(x), e * p.g_minus(x)
    top = data.gamma1_plus(x, yt) * psi.psi_x(x, yt) + psi.psi_y(x, yt) - data.beta_plus(x, yt)
    bottom = data.gamma1_minus(x, yb) * psi.psi_x(x, yb) - psi.psi_y(x, yb) - data.beta_minus(x, yb)
    return x, top, bottom
