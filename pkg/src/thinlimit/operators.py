"""Bellman-Isaacs operators F(X, p, r, x, y) = inf_lambda sup_mu F_lambda_mu and
sampled checks of their structural hypotheses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import Field, X_DOMAIN, Y_DOMAIN
from .report import CheckResult


@dataclass(frozen=True)
class CoefficientFamily:
    """One linear operator ``-tr(sigma^T sigma X) - b.p + c r - f``.

    ``sigma`` holds ``k`` rows of two fields each.
    """

    sigma: tuple[tuple[Field, Field], ...]
    drift: tuple[Field, Field]
    zeroth: Field
    source: Field
    lam: int = 0
    mu: int = 0

    @property
    def label(self) -> str:
        return f"{self.lam}_{self.mu}"

    def sigma_matrix(self, x, y):
        """Array of shape ``(..., k, 2)``."""
        rows = [np.stack(np.broadcast_arrays(s1(x, y), s2(x, y)), axis=-1) for s1, s2 in self.sigma]
        return np.stack(rows, axis=-2)

    def diffusion(self, x, y):
        """Entries ``(a11, a12, a22)`` of ``sigma^T sigma``."""
        a11 = a12 = a22 = 0.0
        for s1, s2 in self.sigma:
            v1, v2 = s1(x, y), s2(x, y)
            a11 = a11 + v1 * v1
            a12 = a12 + v1 * v2
            a22 = a22 + v2 * v2
        return a11, a12, a22

    def coefficients(self, x, y):
        a11, a12, a22 = self.diffusion(x, y)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        full = lambda v: np.broadcast_to(v, shape).astype(float)
        return {
            "a11": full(a11), "a12": full(a12), "a22": full(a22),
            "b1": full(self.drift[0](x, y)), "b2": full(self.drift[1](x, y)),
            "c": full(self.zeroth(x, y)), "f": full(self.source(x, y)),
        }

    def evaluate(self, X, p, r, x, y):
        """Vectorised ``F_lambda_mu``; ``X`` has shape ``(..., 2, 2)``, ``p`` ``(..., 2)``."""
        X = np.asarray(X, dtype=float)
        p = np.asarray(p, dtype=float)
        a11, a12, a22 = self.diffusion(x, y)
        trace = a11 * X[..., 0, 0] + 2 * a12 * X[..., 0, 1] + a22 * X[..., 1, 1]
        drift = self.drift[0](x, y) * p[..., 0] + self.drift[1](x, y) * p[..., 1]
        return -trace - drift + self.zeroth(x, y) * r - self.source(x, y)


def inf_sup(values: np.ndarray, lams: Sequence[int], mus: Sequence[int]):
    """Combine per-family values (first axis) into ``min_lambda max_mu``.

    Returns the combined values and the index of the selected family.
    """
    values = np.asarray(values)
    best = None
    choice = None
    for lam in sorted(set(lams)):
        idx = np.array([i for i, l in enumerate(lams) if l == lam])
        sub = values[idx]
        k = np.argmax(sub, axis=0)
        vmax = np.take_along_axis(sub, k[None], axis=0)[0]
        fam = idx[k]
        if best is None:
            best, choice = vmax, fam
        else:
            take = vmax < best
            best = np.where(take, vmax, best)
            choice = np.where(take, fam, choice)
    return best, choice


@dataclass(frozen=True)
class BellmanIsaacsOperator:
    families: tuple[CoefficientFamily, ...]
    alpha: float
    C_F: float

    def __post_init__(self):
        if not self.families:
            raise ValueError("operator needs at least one family")
        keys = [(f.lam, f.mu) for f in self.families]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (lambda, mu) index among families")

    @property
    def lams(self):
        return [f.lam for f in self.families]

    @property
    def mus(self):
        return [f.mu for f in self.families]

    def evaluate(self, X, p, r, x, y):
        vals = np.stack([np.asarray(f.evaluate(X, p, r, x, y), dtype=float) for f in self.families])
        return inf_sup(vals, self.lams, self.mus)[0]


@dataclass(frozen=True)
class OperatorPoint:
    X: np.ndarray
    p: np.ndarray
    r: float
    z: tuple[float, float]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.shape != (2, 2) or abs(X[0, 1] - X[1, 0]) > 1e-12:
            raise ValueError("X must be a symmetric 2x2 matrix")


def eval_F(op: BellmanIsaacsOperator, pt: OperatorPoint) -> float:
    x, y = pt.z
    return float(op.evaluate(np.asarray(pt.X, float), np.asarray(pt.p, float), pt.r, x, y))


# ---------------------------------------------------------------------------
# random inputs


def random_symmetric(rng, n, size=()):
    A = rng.normal(size=(*size, n, n))
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def random_psd(rng, n, size=()):
    A = rng.normal(size=(*size, n, n))
    return A @ np.swapaxes(A, -1, -2)


def _random_points(rng, samples):
    return rng.uniform(*X_DOMAIN, samples), rng.uniform(*Y_DOMAIN, samples)


def _sample_grid(nx=101, ny=41):
    X, Y = np.meshgrid(np.linspace(*X_DOMAIN, nx), np.linspace(*Y_DOMAIN, ny), indexing="ij")
    return X.ravel(), Y.ravel()


# ---------------------------------------------------------------------------
# checks


def check_properness(op: BellmanIsaacsOperator, samples: int = 1000, seed: int = 42,
                     vary_r: bool = True, vary_X: bool = True) -> CheckResult:
    """Sample ``F(X,p,r,z) - alpha r <= F(Y,p,s,z) - alpha s`` for ``X >= Y``, ``r <= s``.

    With ``vary_r=False`` only ellipticity in ``X`` is probed (``r = s``);
    with ``vary_X=False`` only properness in ``r`` (``X = Y``).
    """
    rng = np.random.default_rng(seed)
    Y = random_symmetric(rng, 2, (samples,))
    X = Y + random_psd(rng, 2, (samples,)) if vary_X else Y.copy()
    p = rng.normal(size=(samples, 2))
    r = rng.normal(size=samples)
    s = r + rng.exponential(size=samples) if vary_r else r.copy()
    x, y = _random_points(rng, samples)
    # deterministic probe: identical matrices, unit gap in r
    X[0] = Y[0] = 0.0
    p[0] = 0.0
    r[0], s[0] = 0.0, (1.0 if vary_r else 0.0)
    x[0], y[0] = 0.5, 0.0
    a = op.alpha
    lhs = op.evaluate(X, p, r, x, y) - a * r
    rhs = op.evaluate(Y, p, s, x, y) - a * s
    margin = rhs - lhs
    tol = 1e-10 * (1 + np.abs(lhs) + np.abs(rhs))
    bad = np.flatnonzero(margin < -tol)
    k = int(bad[0]) if bad.size else int(np.argmin(margin))
    witness = {"r": float(r[k]), "s": float(s[k]), "x": float(x[k]), "y": float(y[k])}
    name = "properness" if vary_X and vary_r else ("ellipticity in X" if vary_X
                                                     else "properness in r")
    return CheckResult(name, passed=not bad.size, value=float(margin.min()), witness=witness,
                       detail=f"{samples} samples, alpha={a:g}")


def check_alpha(op: BellmanIsaacsOperator, n: int = 1001) -> CheckResult:
    """``c_lambda_mu >= alpha`` on a dense sample."""
    x, y = _sample_grid(n, 201)
    worst, witness = np.inf, {}
    for fam in op.families:
        c = fam.zeroth(x, y)
        k = int(np.argmin(c))
        if c[k] < worst:
            worst = float(c[k])
            witness = {"family": fam.label, "x": float(x[k]), "y": float(y[k]), "c": worst}
    return CheckResult("positivity of c", passed=worst >= op.alpha, value=worst - op.alpha,
                       witness=witness, detail=f"alpha={op.alpha:g}")


def check_bounds(op: BellmanIsaacsOperator, samples: int = 1000, seed: int = 42) -> CheckResult:
    """Uniform bound and Lipschitz-in-z sample check with constant ``C_F``.

    The continuity modulus of ``c`` and ``f`` is only recorded (at the
    distance scale 0.05), not asserted.
    """
    x, y = _sample_grid()
    worst_bound, witness = -np.inf, {}
    for fam in op.families:
        co = fam.coefficients(x, y)
        sig = np.linalg.norm(fam.sigma_matrix(x, y).reshape(len(x), -1), axis=1)
        drift = np.hypot(co["b1"], co["b2"])
        for name, vals in (("sigma", sig), ("b", drift), ("c", np.abs(co["c"])), ("f", np.abs(co["f"]))):
            k = int(np.argmax(vals))
            if vals[k] > worst_bound:
                worst_bound = float(vals[k])
                witness = {"family": fam.label, "field": name, "x": float(x[k]), "y": float(y[k])}

    rng = np.random.default_rng(seed)
    x1, y1 = _random_points(rng, samples)
    d = rng.normal(size=(samples, 2))
    d *= (0.05 * rng.uniform(0.01, 1, samples) / np.linalg.norm(d, axis=1))[:, None]
    x2 = np.clip(x1 + d[:, 0], *X_DOMAIN)
    y2 = np.clip(y1 + d[:, 1], *Y_DOMAIN)
    dist = np.hypot(x2 - x1, y2 - y1)
    ok = dist > 1e-12
    worst_lip, omega = 0.0, 0.0
    for fam in op.families:
        ds = np.linalg.norm((fam.sigma_matrix(x1, y1) - fam.sigma_matrix(x2, y2)).reshape(samples, -1), axis=1)
        db = np.hypot(fam.drift[0](x1, y1) - fam.drift[0](x2, y2), fam.drift[1](x1, y1) - fam.drift[1](x2, y2))
        lip = np.max(np.maximum(ds, db)[ok] / dist[ok])
        worst_lip = max(worst_lip, float(lip))
        dc = np.abs(fam.zeroth(x1, y1) - fam.zeroth(x2, y2))
        df = np.abs(fam.source(x1, y1) - fam.source(x2, y2))
        omega = max(omega, float(np.max(np.maximum(dc, df))))
    C = op.C_F
    passed = worst_bound <= C and worst_lip <= C
    if worst_lip > C:
        witness = {"lipschitz": worst_lip}
    return CheckResult("coefficient bounds", passed=passed, value=C - max(worst_bound, worst_lip),
                       witness=witness,
                       detail=f"C_F={C:g}, max|coef|={worst_bound:.4g}, lip={worst_lip:.4g}, "
                              f"omega_F(0.05)={omega:.4g}")


def check_lipschitz_F(op: BellmanIsaacsOperator, samples: int = 1000, seed: int = 42) -> CheckResult:
    """``|F(X,p,r,z) - F(Y,q,r,z)| <= C_F^2 |X-Y| + C_F |p-q|`` (Frobenius norm)."""
    rng = np.random.default_rng(seed)
    X = random_symmetric(rng, 2, (samples,))
    Y = random_symmetric(rng, 2, (samples,))
    p = rng.normal(size=(samples, 2))
    q = rng.normal(size=(samples, 2))
    r = rng.normal(size=samples)
    x, y = _random_points(rng, samples)
    diff = np.abs(op.evaluate(X, p, r, x, y) - op.evaluate(Y, q, r, x, y))
    C = op.C_F
    bound = C**2 * np.linalg.norm((X - Y).reshape(samples, -1), axis=1) + C * np.linalg.norm(p - q, axis=1)
    margin = bound - diff
    k = int(np.argmin(margin))
    return CheckResult("Lipschitz in (X,p)", passed=bool(margin[k] >= -1e-10), value=float(margin[k]),
                       witness={"x": float(x[k]), "y": float(y[k])})


def normal_ellipticity_values(op: BellmanIsaacsOperator, gamma_o) -> dict[float, float]:
    """``min_families |sigma(x,0) (nu, -nu gamma_o)^T|`` at the two lateral points."""
    out = {}
    for xb, nu in ((0.0, -1.0), (1.0, 1.0)):
        g = float(gamma_o(np.array(xb)))
        vec = np.array([nu, -nu * g])
        vals = [np.linalg.norm(fam.sigma_matrix(np.array(xb), np.array(0.0)) @ vec) for fam in op.families]
        out[xb] = float(min(vals))
    return out


def check_normal_ellipticity(op: BellmanIsaacsOperator, data, samples: int = 0) -> CheckResult:
    """Strict ellipticity of the limit operator in the lateral normal direction."""
    vals = normal_ellipticity_values(op, data.gamma_o)
    xb = min(vals, key=vals.get)
    return CheckResult("normal ellipticity", passed=vals[xb] > 0, value=vals[xb],
                       witness={"x": xb})
