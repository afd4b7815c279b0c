"""Monotone finite differences for the thin problem and the limit problem,
a fixed-point/policy solver, and the explicit barrier pair."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .expr import FunctionField
from .limit import LimitOperator, build_limit, limit_lateral
from .operators import inf_sup
from .problem import (
    BaseGrid,
    ProblemInstance,
    ThinGrid,
    check_compatibility,
    check_obliqueness_tb,
)
from .report import CheckResult

INTERIOR, TOP, BOTTOM, LATERAL, DIRICHLET = range(5)
ROW_KINDS = ("interior", "top", "bottom", "lateral", "dirichlet")

# neighbour offsets of the seven-point cross stencil (plus both diagonal pairs)
OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


class SchemeError(ValueError):
    """The requested discretisation cannot be made monotone (or is ill-posed)."""


class DivergenceError(RuntimeError):
    def __init__(self, message, history):
        self.history = list(history)
        tail = ", ".join(f"{r:.3g}" for r in self.history[-5:])
        super().__init__(f"{message}; residual tail [{tail}]")


class BarrierError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data types


@dataclass
class GridFunction:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    @property
    def is_thin(self):
        return isinstance(self.grid, ThinGrid)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def at(self, x):
        """Linear interpolation in ``x`` (base-grid functions only)."""
        if self.is_thin:
            raise TypeError("interpolation is defined for base-grid functions")
        return np.interp(x, self.grid.x, self.values)

    def rows(self):
        if self.is_thin:
            g = self.grid
            return zip(g.X.ravel(), g.Y.ravel(), self.values.ravel())
        return zip(self.grid.x, self.values)

    def header(self):
        return ("x", "y", "u") if self.is_thin else ("x", "u")


@dataclass(frozen=True)
class SchemeConfig:
    nx: int = 201
    nt: int = 41
    tau: float | None = None
    tol: float = 1e-9
    max_iter: int = 500
    method: str = "policy"
    cross_scheme: str = "seven_point_split"
    bc_corner_rule: str = "prefer_top_bottom"

    @classmethod
    def from_instance(cls, inst: ProblemInstance, **overrides) -> "SchemeConfig":
        s = inst.solver
        kw = dict(nx=s.nx, nt=s.nt, tau=s.tau, tol=s.tol, max_iter=s.max_iter, method=s.method,
                  cross_scheme=s.cross_scheme, bc_corner_rule=s.bc_corner_rule)
        kw.update(overrides)
        return cls(**kw)

    @property
    def damping(self) -> float:
        if self.tau is not None:
            return self.tau
        return 0.4 / EXPLICIT_LIPSCHITZ if self.method == "explicit" else 1.0


# row bound of D^{-1} S for a monotone row: diagonal plus equal off-diagonal mass
EXPLICIT_LIPSCHITZ = 2.0


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    sup_norm: float
    wall_time: float
    converged: bool = True
    method: str = "policy"
    history: list = field(default_factory=list)


@dataclass
class DiscreteScheme:
    """``S(u) = inf_lambda sup_mu (M_q u - F_q)`` row by row.

    Boundary rows are shared by all families.
    """

    shape: tuple
    matrices: list
    rhs: list
    lams: list
    mus: list
    row_kind: np.ndarray
    grid: object
    weights: dict | None = None  # family -> offset -> array over interior nodes

    def __post_init__(self):
        diags = np.stack([m.diagonal() for m in self.matrices])
        self.diag = diags.max(axis=0)
        if np.any(self.diag <= 0):
            k = int(np.argmin(self.diag))
            raise SchemeError(f"non-positive diagonal at row {k} ({ROW_KINDS[self.row_kind[k]]})")

    @property
    def size(self):
        return int(np.prod(self.shape))

    def family_residuals(self, u):
        u = np.ravel(u)
        return np.stack([m @ u - f for m, f in zip(self.matrices, self.rhs)])

    def residual(self, u, with_policy=False):
        val, choice = inf_sup(self.family_residuals(u), self.lams, self.mus)
        return (val, choice) if with_policy else val

    def scaled_residual(self, u):
        return self.residual(u) / self.diag

    def jacobian(self, choice):
        n = self.size
        J = sp.csr_matrix((n, n))
        for q, m in enumerate(self.matrices):
            mask = (choice == q).astype(float)
            if mask.any():
                J = J + sp.diags(mask) @ m
        return J.tocsc()

    def lipschitz_bound(self):
        """Row bound of ``D^{-1} S`` (diagonal plus off-diagonal mass)."""
        worst = 0.0
        for m in self.matrices:
            a = abs(m).sum(axis=1).A1
            worst = max(worst, float(np.max(a / self.diag)))
        return worst

    def check_monotone(self, tol=1e-12):
        for q, m in enumerate(self.matrices):
            coo = m.tocoo()
            off = coo.row != coo.col
            bad = off & (coo.data > tol * self.diag[coo.row])
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                raise SchemeError(f"family {q}: positive off-diagonal at row {coo.row[k]}")


# ---------------------------------------------------------------------------
# thin problem


def _interior_weights(fam_coef, grid: ThinGrid):
    """Non-negative neighbour weights of the interior stencil of one family.

    Returns ``(weights, c, f, diagnostics)`` over the interior nodes.
    """
    sl = (slice(1, -1), slice(1, -1))
    co = {k: v[sl] for k, v in fam_coef.items()}
    eps, dX, dt = grid.eps, grid.dX, grid.dt
    H, Hp, s, s_t, s_X = (a[sl] for a in (grid.H, grid.Hp, grid.s, grid.s_t, grid.s_X))
    eH = eps * H
    a11, a12, a22 = co["a11"], co["a12"], co["a22"]
    A11 = a11
    A12 = -s * a11 + a12 / eH
    A22 = a11 * s**2 - 2 * a12 * s / eH + a22 / eH**2
    dr_X = co["b1"]
    dr_t = a11 * (s * s_t - s_X) - 2 * a12 * Hp / (eps * H**2) - co["b1"] * s + co["b2"] / eH

    m = np.abs(A12)
    bad1 = A11 * dt < m * dX * (1 - 1e-12)
    bad2 = A22 * dX < m * dt * (1 - 1e-12)
    if bad1.any() or bad2.any():
        which = bad1 if bad1.any() else bad2
        i, j = (int(v[0]) + 1 for v in np.nonzero(which))
        if bad1.any():
            hint = "refine nx or coarsen nt"
            ineq = "A11*dt >= |A12|*dX"
        else:
            hint = "use a finer nt"
            ineq = "A22*dX >= |A12|*dt"
        raise SchemeError(f"cross term dominates the diagonal at node (i={i}, j={j}): "
                          f"{ineq} fails; {hint}")

    w = {o: np.zeros_like(A11) for o in OFFSETS}
    axis_X = A11 / dX**2 - m / (dX * dt)
    axis_t = A22 / dt**2 - m / (dX * dt)
    diag_w = m / (dX * dt)
    for o in ((1, 0), (-1, 0)):
        w[o] += axis_X
    for o in ((0, 1), (0, -1)):
        w[o] += axis_t
    pos = A12 >= 0
    w[(1, 1)] += np.where(pos, diag_w, 0.0)
    w[(-1, -1)] += np.where(pos, diag_w, 0.0)
    w[(1, -1)] += np.where(pos, 0.0, diag_w)
    w[(-1, 1)] += np.where(pos, 0.0, diag_w)

    # drift: central where that keeps the axis weights non-negative, upwind elsewhere
    for (plus, minus), dr, h in ((((1, 0), (-1, 0)), dr_X, dX), (((0, 1), (0, -1)), dr_t, dt)):
        central_ok = np.minimum(w[plus], w[minus]) >= np.abs(dr) / (2 * h)
        w[plus] += np.where(central_ok, dr / (2 * h), np.maximum(dr, 0) / h)
        w[minus] += np.where(central_ok, -dr / (2 * h), np.maximum(-dr, 0) / h)
    return w, co["c"], co["f"], {"A11": A11, "A12": A12, "A22": A22}


def _oblique_row(grid: ThinGrid, i, j, dxc, dtc, mirror=True):
    """Upwind one-sided row for ``dxc U_X + dtc U_t``; returns ``[(i', j', w)], diag``.

    The difference in each grid direction is taken against the neighbour
    opposite to the sign of the coefficient (inward for outward-pointing
    directions). A missing neighbour is replaced by its mirror image.
    """
    entries = []
    diag = 0.0
    for coef, h, axis in ((dxc, grid.dX, 0), (dtc, grid.dt, 1)):
        if coef == 0:
            continue
        step = -1 if coef > 0 else 1
        ii, jj = (i + step, j) if axis == 0 else (i, j + step)
        n_axis = grid.nx if axis == 0 else grid.nt
        k = ii if axis == 0 else jj
        if not 0 <= k < n_axis:
            if not mirror:
                raise SchemeError(f"upwind neighbour outside the grid at node (i={i}, j={j})")
            ii, jj = (i - step, j) if axis == 0 else (i, j - step)
        w = abs(coef) / h
        entries.append((ii, jj, w))
        diag += w
    return entries, diag


def discretize_thin(inst: ProblemInstance, eps: float, cfg: SchemeConfig, check: bool = True) -> DiscreteScheme:
    if cfg.cross_scheme != "seven_point_split":
        raise SchemeError(f"unknown cross scheme {cfg.cross_scheme!r}")
    if check:
        ob = check_obliqueness_tb(inst.profile, inst.oblique, eps)
        if not ob.passed:
            raise SchemeError(f"top/bottom obliqueness fails at eps={eps:g} ({ob.line()})")
    grid = ThinGrid(inst.profile, eps, cfg.nx, cfg.nt)
    nx, nt = grid.shape
    n = nx * nt
    idx = np.arange(n).reshape(nx, nt)
    row_kind = np.full((nx, nt), INTERIOR)
    data = inst.oblique
    lat = inst.lateral

    # --- boundary rows, shared by all families
    b_rows, b_cols, b_vals = [], [], []
    b_rhs = np.zeros(n)

    def add_row(i, j, entries, diag, beta, kind):
        r = idx[i, j]
        b_rows.append(r), b_cols.append(r), b_vals.append(diag)
        for ii, jj, w in entries:
            b_rows.append(r), b_cols.append(idx[ii, jj]), b_vals.append(-w)
        b_rhs[r] = beta
        row_kind[i, j] = kind

    corner_lateral = cfg.bc_corner_rule == "prefer_lateral"
    eps_ = grid.eps

    def tb_row(i, j):
        x, y = grid.X[i, j], grid.Y[i, j]
        eH = eps_ * grid.H[i, j]
        s = grid.s[i, j]
        if j == nt - 1:
            g1 = float(data.gamma1_plus(x, y))
            dxc, dtc = g1, 1.0 / eH - g1 * s
            beta, kind = float(data.beta_plus(x, y)), TOP
        else:
            g1 = float(data.gamma1_minus(x, y))
            dxc, dtc = g1, -g1 * s - 1.0 / eH
            beta, kind = float(data.beta_minus(x, y)), BOTTOM
        entries, diag = _oblique_row(grid, i, j, dxc, dtc)
        add_row(i, j, entries, diag, beta, kind)

    def lat_row(i, j):
        x, y = grid.X[i, j], grid.Y[i, j]
        if lat.kind == "dirichlet":
            add_row(i, j, [], 1.0, float(lat.beta(x, y)), DIRICHLET)
            return
        eH = eps_ * grid.H[i, j]
        s = grid.s[i, j]
        if lat.kind == "neumann":
            nu = -1.0 if i == 0 else 1.0
            g1, g2, beta = nu, 0.0, 0.0
        else:
            g1, g2, beta = float(lat.gamma1(x, y)), float(lat.gamma2(x, y)), float(lat.beta(x, y))
        entries, diag = _oblique_row(grid, i, j, g1, -g1 * s + g2 / eH)
        add_row(i, j, entries, diag, beta, LATERAL)

    for i in range(nx):
        for j in (0, nt - 1):
            if i in (0, nx - 1) and corner_lateral:
                continue
            tb_row(i, j)
    for i in (0, nx - 1):
        for j in range(nt):
            if j in (0, nt - 1) and not corner_lateral:
                continue
            lat_row(i, j)
    boundary = sp.csr_matrix((b_vals, (b_rows, b_cols)), shape=(n, n))

    # --- interior rows per family
    matrices, rhs, weights = [], [], {}
    I, J = np.meshgrid(np.arange(1, nx - 1), np.arange(1, nt - 1), indexing="ij")
    centre = idx[1:-1, 1:-1].ravel()
    for q, fam in enumerate(inst.operator.families):
        co = fam.coefficients(grid.X, grid.Y)
        w, c, f, _ = _interior_weights(co, grid)
        weights[q] = w
        rows = [centre]
        cols = [centre]
        vals = [(sum(w.values()) + c).ravel()]
        for (di, dj), wk in w.items():
            rows.append(centre)
            cols.append(idx[I + di, J + dj].ravel())
            vals.append(-wk.ravel())
        interior = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(n, n))
        F = b_rhs.copy()
        F[centre] = f.ravel()
        matrices.append((interior + boundary).tocsr())
        rhs.append(F)
    fams = inst.operator.families
    scheme = DiscreteScheme((nx, nt), matrices, rhs, [f.lam for f in fams], [f.mu for f in fams],
                            row_kind.ravel(), grid, weights)
    scheme.check_monotone()
    _check_tau(scheme, cfg)
    return scheme


def _check_tau(scheme, cfg):
    tau = cfg.damping
    if cfg.method == "policy":
        if not 0 < tau <= 1:
            raise SchemeError(f"policy step tau={tau:g} must lie in (0, 1]")
        return
    L = scheme.lipschitz_bound()
    if not 0 < tau * L < 2:
        raise SchemeError(f"damping tau={tau:g} outside the stable range (tau * {L:g} must be < 2)")


# ---------------------------------------------------------------------------
# limit problem


def discretize_limit(limop: LimitOperator, lateral, cfg: SchemeConfig, nx: int | None = None) -> DiscreteScheme:
    nx = nx or cfg.nx
    grid = BaseGrid(nx)
    x, dx = grid.x, grid.dx
    kind, gamma, beta = limit_lateral(lateral)
    n = nx
    row_kind = np.full(n, INTERIOR)
    matrices, rhs = [], []
    end_data = {}
    if kind == "oblique":
        for xb in (0, nx - 1):
            g = gamma(x[xb])
            if g == 0:
                raise SchemeError(f"lateral gamma vanishes at x={x[xb]:g}")
            end_data[xb] = beta(x[xb]) / g  # prescribed u'
            row_kind[xb] = LATERAL
    else:
        row_kind[[0, -1]] = DIRICHLET
    for fam in limop.reduced:
        a, b, c, f = (np.broadcast_to(v, x.shape).astype(float) for v in (fam.a(x), fam.b(x), fam.c(x), fam.f(x)))
        if np.any(a < -1e-14):
            raise SchemeError("reduced diffusion is negative")
        wp = a / dx**2
        wm = a / dx**2
        central_ok = np.minimum(wp, wm) >= np.abs(b) / (2 * dx)
        wp = wp + np.where(central_ok, b / (2 * dx), np.maximum(b, 0) / dx)
        wm = wm + np.where(central_ok, -b / (2 * dx), np.maximum(-b, 0) / dx)
        rows, cols, vals = [], [], []
        F = f.copy()
        for i in range(n):
            if kind == "dirichlet" and i in (0, n - 1):
                rows.append(i), cols.append(i), vals.append(1.0)
                F[i] = beta(x[i])
                continue
            if i in (0, n - 1):
                # ghost value from the prescribed slope: U_ghost = U_in -+ 2 dx u'
                inner = 1 if i == 0 else n - 2
                slope = end_data[i]
                sgn = -1.0 if i == 0 else 1.0
                w2 = 2 * a[i] / dx**2
                rows += [i, i]
                cols += [i, inner]
                vals += [w2 + c[i], -w2]
                F[i] = f[i] + sgn * 2 * a[i] * slope / dx + b[i] * slope
                continue
            rows += [i, i, i]
            cols += [i, i + 1, i - 1]
            vals += [wp[i] + wm[i] + c[i], -wp[i], -wm[i]]
        matrices.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
        rhs.append(F)
    scheme = DiscreteScheme((n,), matrices, rhs, [f.lam for f in limop.reduced],
                            [f.mu for f in limop.reduced], row_kind, grid)
    scheme.check_monotone()
    _check_tau(scheme, cfg)
    return scheme


# ---------------------------------------------------------------------------
# solver


def solve(scheme: DiscreteScheme, cfg: SchemeConfig, u0=None, raise_on_divergence=True):
    """Drive ``S(u) = 0`` to ``sup |S_i / D_i| <= tol``.

    ``method='explicit'``: damped Jacobi ``u <- u - tau S(u)/D``.
    ``method='policy'``: ``u <- u - tau J^{-1} S(u)`` with ``J`` the matrix of
    the families active at ``u`` and ``tau`` halved until the residual drops.
    """
    start = time.perf_counter()
    u = np.zeros(scheme.size) if u0 is None else np.array(u0, dtype=float).ravel()
    tau = cfg.damping
    history = []
    converged = False
    it = 0
    S, choice = scheme.residual(u, with_policy=True)
    res = float(np.max(np.abs(S / scheme.diag)))
    history.append(res)
    while it < cfg.max_iter:
        if res <= cfg.tol:
            converged = True
            break
        it += 1
        if cfg.method == "explicit":
            u = u - tau * S / scheme.diag
        else:
            step = spsolve(scheme.jacobian(choice), S)
            t = tau
            while True:
                trial = u - t * step
                S_new, ch_new = scheme.residual(trial, with_policy=True)
                r_new = float(np.max(np.abs(S_new / scheme.diag)))
                if r_new < res or t < 1e-3:
                    break
                t *= 0.5
            u = trial
        S, choice = scheme.residual(u, with_policy=True)
        res = float(np.max(np.abs(S / scheme.diag)))
        history.append(res)
        if not np.isfinite(res):
            break
    if res <= cfg.tol:
        converged = True
    values = u.reshape(scheme.shape)
    report = SolveReport(it, res, float(np.max(np.abs(u))), time.perf_counter() - start, converged,
                         cfg.method, history[-10:])
    if not converged and raise_on_divergence:
        raise DivergenceError(f"no convergence after {it} iterations (tol {cfg.tol:g})", history)
    return GridFunction(scheme.grid, values), report


def solve_thin(inst: ProblemInstance, eps: float, cfg: SchemeConfig | None = None):
    cfg = cfg or SchemeConfig.from_instance(inst)
    scheme = discretize_thin(inst, eps, cfg)
    return solve(scheme, cfg)


def solve_limit(inst: ProblemInstance, cfg: SchemeConfig | None = None, nx: int | None = None,
                limop: LimitOperator | None = None):
    cfg = cfg or SchemeConfig.from_instance(inst)
    limop = limop or build_limit(inst)
    nx = nx or inst.solver.nx_limit or cfg.nx
    scheme = discretize_limit(limop, inst.lateral, cfg, nx)
    return solve(scheme, cfg)


def sup_norm_error(u_thin: GridFunction, u_limit: GridFunction) -> float:
    g = u_thin.grid
    lim = u_limit.at(g.x)
    return float(np.max(np.abs(u_thin.values - lim[:, None])))


# ---------------------------------------------------------------------------
# barriers


@dataclass
class Barriers:
    psi_upper: GridFunction
    psi_lower: GridFunction
    M: float
    Lambda: float
    K: float = 0.0


def _rho(inst: ProblemInstance, K: float):
    """Lateral profile ``rho`` and its first two derivatives."""
    lat = inst.lateral
    if lat.kind == "dirichlet":
        return (lambda x: K + 0 * x), (lambda x: 0 * x), (lambda x: 0 * x)
    return (lambda x: K * (x - 0.5) ** 2), (lambda x: 2 * K * (x - 0.5)), (lambda x: 2 * K + 0 * x)


def barrier_derivatives(inst: ProblemInstance, eps, K, Lam, sign, x, y):
    """Value and derivatives of ``sign*rho + v y + sign*Lam/2 (y - eps h)^2``.

    ``sign=+1`` gives the upper barrier (``v = beta_o - gamma_o rho'``),
    ``sign=-1`` the lower one (``v = beta_o + gamma_o rho'``).
    """
    p = inst.profile
    go, bo = inst.oblique.gamma_o, inst.oblique.beta_o
    rho, rho1, rho2 = _rho(inst, K)
    vfun = FunctionField(lambda s, _y=0.0: bo(s) - sign * go(s) * rho1(s), two_d=False)
    h, h1, h2 = p.h(x), p.h.dx(x), p.h.dxx(x)
    v, v1, v2 = vfun(x), vfun.dx(x), vfun.dxx(x)
    d = y - eps * h
    val = sign * rho(x) + v * y + sign * 0.5 * Lam * d**2
    px = sign * rho1(x) + v1 * y - sign * Lam * eps * d * h1
    py = v + sign * Lam * d
    pxx = sign * rho2(x) + v2 * y + sign * Lam * eps * (eps * h1**2 - d * h2)
    pxy = v1 - sign * Lam * eps * h1
    pyy = sign * Lam + 0 * x
    return val, px, py, pxx, pxy, pyy


def _bc_residuals(inst, eps, K, Lam, sign, grid: ThinGrid):
    """Continuous oblique residuals of a barrier on top, bottom and lateral nodes."""
    data, lat = inst.oblique, inst.lateral
    out = {}
    for name, j in (("top", -1), ("bottom", 0)):
        x, y = grid.X[:, j], grid.Y[:, j]
        _, px, py, *_ = barrier_derivatives(inst, eps, K, Lam, sign, x, y)
        if name == "top":
            out[name] = data.gamma1_plus(x, y) * px + py - data.beta_plus(x, y)
        else:
            out[name] = data.gamma1_minus(x, y) * px - py - data.beta_minus(x, y)
    if lat.kind != "dirichlet":
        vals = []
        for i, nu in ((0, -1.0), (-1, 1.0)):
            x, y = grid.X[i, :], grid.Y[i, :]
            _, px, py, *_ = barrier_derivatives(inst, eps, K, Lam, sign, x, y)
            if lat.kind == "neumann":
                vals.append(nu * px)
            else:
                vals.append(lat.gamma1(x, y) * px + lat.gamma2(x, y) * py - lat.beta(x, y))
        out["lateral"] = np.concatenate(vals)
    return out


def build_barriers(inst: ProblemInstance, eps: float, cfg: SchemeConfig | None = None,
                   M_auto: bool = True, scheme: DiscreteScheme | None = None) -> Barriers:
    """Strict super/subsolutions ``psi_upper + M`` and ``psi_lower - M``.

    Constants are sized from the continuous residuals and then enlarged until
    the pair is also a discrete super/subsolution of the thin scheme, so that
    discrete comparison applies to the computed solution.
    """
    if not check_compatibility(inst.oblique).passed:
        raise BarrierError("compatibility required: beta_plus(x,0) = -beta_minus(x,0) and "
                           "gamma1_plus(x,0) = -gamma1_minus(x,0)")
    cfg = cfg or SchemeConfig.from_instance(inst)
    scheme = scheme or discretize_thin(inst, eps, cfg)
    grid = scheme.grid
    lat = inst.lateral
    p = inst.profile

    # rho: lateral strictness (Neumann/oblique) or domination of the data (Dirichlet)
    if lat.kind == "dirichlet":
        yy = np.linspace(-1, 1, 201)
        K = max(float(np.max(np.abs(lat.beta(xb, yy)))) for xb in (0.0, 1.0)) + 1.0
    elif lat.kind == "oblique":
        yy = np.linspace(-1, 1, 201)
        bmax = max(float(np.max(np.abs(lat.beta(xb, yy)))) for xb in (0.0, 1.0))
        gmin = min(float(np.min(np.abs(lat.gamma1(xb, yy)))) for xb in (0.0, 1.0))
        K = (bmax + 1.0) / gmin
    else:
        K = 1.0

    delta0 = p.delta0
    Lam = 0.0
    M = 0.0
    for _ in range(60):
        # Lambda: boundary residual is affine in Lambda
        need = 0.0
        for sign in (1.0, -1.0):
            r0 = _bc_residuals(inst, eps, K, 0.0, sign, grid)
            r1 = _bc_residuals(inst, eps, K, 1.0, sign, grid)
            for side in ("top", "bottom"):
                slope = sign * (r1[side] - r0[side])
                if np.any(slope <= 0):
                    raise BarrierError("barrier slope in Lambda is not positive; reduce eps")
                need = max(need, float(np.max((eps - sign * r0[side]) / slope)))
        C1 = max(0.0, need)
        Lam = max(Lam, C1, 1.0 / delta0)
        lateral_ok = True
        if lat.kind != "dirichlet":
            for sign in (1.0, -1.0):
                r = _bc_residuals(inst, eps, K, Lam, sign, grid)["lateral"]
                if np.min(sign * r) <= 0:
                    lateral_ok = False
        if not lateral_ok:
            K *= 2
            continue
        # M from the interior residual bound
        upper = barrier_derivatives(inst, eps, K, Lam, 1.0, grid.X, grid.Y)
        lower = barrier_derivatives(inst, eps, K, Lam, -1.0, grid.X, grid.Y)
        C3 = 0.0
        for val, px, py, pxx, pxy, pyy in (upper, lower):
            Xm = np.stack([np.stack([pxx, pxy], -1), np.stack([pxy, pyy], -1)], -2)
            P = np.stack([px, py], -1)
            C3 = max(C3, float(np.max(np.abs(inst.operator.evaluate(Xm, P, val, grid.X, grid.Y)))))
        M = max(M, (C3 + 1.0) / inst.operator.alpha) if M_auto else M
        if lat.kind == "dirichlet":
            for val, sgn in ((upper[0], 1.0), (lower[0], -1.0)):
                for i in (0, -1):
                    gap = sgn * (val[i] - lat.beta(grid.X[i], grid.Y[i])) + M
                    if np.min(gap) <= 0:
                        M += float(-np.min(gap)) + 1.0
        up = upper[0] + M
        lo = lower[0] - M
        r_up = scheme.residual(up)
        r_lo = scheme.residual(lo)
        kinds = scheme.row_kind
        bad_up, bad_lo = r_up < 0, r_lo > 0
        if not (bad_up.any() or bad_lo.any()):
            return Barriers(GridFunction(grid, upper[0]), GridFunction(grid, lower[0]), M, Lam, K)
        bad_kinds = set(kinds[bad_up | bad_lo])
        if bad_kinds & {TOP, BOTTOM}:
            Lam *= 2
        if LATERAL in bad_kinds:
            K *= 2
        if bad_kinds & {INTERIOR, DIRICHLET}:
            M = 2 * M + 1.0
    raise BarrierError("could not size barrier constants so that the discrete inequalities hold")


def check_barrier_sandwich(u: GridFunction, bars: Barriers, tol: float = 1e-6) -> CheckResult:
    upper = bars.psi_upper.values + bars.M - u.values
    lower = u.values - bars.psi_lower.values + bars.M
    mu, ml = float(upper.min()), float(lower.min())
    value = min(mu, ml)
    arr = upper if mu <= ml else lower
    i, j = np.unravel_index(int(np.argmin(arr)), arr.shape)
    g = u.grid
    witness = {"side": "upper" if mu <= ml else "lower", "x": float(g.X[i, j]), "y": float(g.Y[i, j])}
    return CheckResult("barrier sandwich", value >= -tol, value, witness,
                       f"M={bars.M:.4g}, Lambda={bars.Lambda:.4g}")
