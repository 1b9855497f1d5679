"""Weighted penalized least squares with a piecewise-constant penalty.

Minimises

    (1/n) sum_i w_i (y_i - f(t_i))^2 + lam * int_0^1 rho(t) f^(m)(t)^2 dt

over f(t) = sum_i c_i K_rho(t_i, t) + sum_j d_j phi_j(t). The coefficients
solve the augmented system

    (K + n lam W^{-1}) c + T d = y,    T'c = 0.

Smoothing-parameter criteria (GCV, GML) use the eigen-decomposition of the
penalised system projected onto the orthogonal complement of the null
space, which makes each evaluation O(n) once the decomposition exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np
import scipy.linalg as sla

from .rkhs import GramContext, PiecewisePenalty, cross_gram, gram_matrix

__all__ = [
    "ConditioningError",
    "DegenerateFitError",
    "Design",
    "SplineFit",
    "OptimalityReport",
    "PenalizedSystem",
    "fit",
    "predict",
    "hat_matrix",
    "gcv",
    "gml",
    "select_lambda",
    "check_optimality",
    "objective",
    "weighted_poly_fit",
    "DEFAULT_LAMBDA_GRID",
    "lambda_grid",
    "default_lambda_grid",
]

JITTER = 1e-10
DEFAULT_LAMBDA_GRID = (1e-8, 1.0, 40)
GOLDEN_ITERATIONS = 20


class ConditioningError(ArithmeticError):
    """The augmented system is numerically singular."""

    def __init__(self, min_pivot):
        self.min_pivot = min_pivot
        super().__init__(f"augmented system is singular (minimum |pivot| = {min_pivot:.3g})")


class DegenerateFitError(ArithmeticError):
    """trace(I - A) vanishes, so GCV/GML are undefined."""


@dataclass(frozen=True)
class Design:
    """Observed sample: sorted abscissae in [0, 1], responses, weights.

    Weights play the role of 1/sigma^2(t_i) and default to one.
    ``t_range`` records the original (min, max) when the abscissae were
    min-max rescaled on ingestion.
    """

    t: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None
    t_range: tuple[float, float] | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.ones_like(t) if self.w is None else np.asarray(self.w, dtype=float).ravel()
        if not (t.size == y.size == w.size):
            raise ValueError(f"length mismatch: t {t.size}, y {y.size}, w {w.size}")
        if t.size == 0:
            raise ValueError("empty design")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise ValueError("design contains non-finite values")
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("abscissae must lie in [0, 1]")
        if np.any(np.diff(t) <= 0):
            raise ValueError("abscissae must be strictly increasing (sort and pre-bin)")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        for a in (t, y, w):
            a.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.t.size

    def with_y(self, y) -> "Design":
        return Design(self.t, y, self.w, self.t_range)

    def with_weights(self, w) -> "Design":
        return Design(self.t, self.y, w, self.t_range)

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.t, self.y, self.w):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplineFit:
    c: np.ndarray
    d: np.ndarray
    lam: float
    m: int
    penalty: PiecewisePenalty
    fitted: np.ndarray
    hat_trace: float
    design: Design
    context: GramContext = field(repr=False)

    @property
    def n(self) -> int:
        return self.design.n

    def __call__(self, tnew):
        return predict(self, tnew)


def _check_lambda(lam):
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive and finite, got {lam}")


def _augmented_solve(K, T, w, lam, rhs):
    """Solve the augmented system for one or many right-hand sides.

    The representer block is divided by ``alpha`` (with c = c'/alpha) so
    that it is O(1) for both tiny and huge lambda; the system stays
    symmetric and is factorised with Bunch-Kaufman LDL'.
    """
    n, m = T.shape
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    Y = rhs[:, None] if vec else rhs
    jitter = JITTER * np.trace(K) / n
    M11 = K + np.diag(jitter + n * lam / w)
    alpha = max(n * lam, np.trace(K) / n, np.finfo(float).tiny)
    A = np.zeros((n + m, n + m))
    A[:n, :n] = M11 / alpha
    A[:n, n:] = T
    A[n:, :n] = T.T
    lu, dmat, perm = sla.ldl(A, lower=True)
    diag = np.diag(dmat)
    off = np.diag(dmat, -1)
    pivots = sla.eigvalsh_tridiagonal(diag, off) if n + m > 1 else diag
    min_pivot = float(np.min(np.abs(pivots)))
    if not np.isfinite(min_pivot) or min_pivot <= np.finfo(float).tiny:
        raise ConditioningError(min_pivot)
    B = np.vstack([Y, np.zeros((m, Y.shape[1]))])
    Lp = lu[perm]
    z = sla.solve_triangular(Lp, B[perm], lower=True, unit_diagonal=True)
    z = sla.solve_banded((1, 1), _tridiag_bands(dmat), z)
    x = np.empty_like(z)
    x[perm] = sla.solve_triangular(Lp.T, z, lower=False, unit_diagonal=True)
    if not np.all(np.isfinite(x)):
        raise ConditioningError(min_pivot)
    c = x[:n] / alpha
    d = x[n:]
    if vec:
        return c[:, 0], d[:, 0]
    return c, d


def _tridiag_bands(dmat):
    k = dmat.shape[0]
    ab = np.zeros((3, k))
    ab[0, 1:] = np.diag(dmat, 1)
    ab[1] = np.diag(dmat)
    ab[2, :-1] = np.diag(dmat, -1)
    return ab


class PenalizedSystem:
    """Gram matrix plus the spectral quantities behind GCV and GML.

    With W^{1/2} T = [F1 F2] [R; 0] and F2' W^{1/2} K W^{1/2} F2 = U diag(e) U',
    the shrinkage factors a_k = n lam / (e_k + n lam) give the nonzero
    eigenvalues of W^{1/2}(I - A)W^{-1/2}.
    """

    def __init__(self, design: Design, penalty: PiecewisePenalty, m: int, context=None):
        if design.n < m:
            raise ValueError(f"need at least m = {m} observations, got {design.n}")
        self.design = design
        self.penalty = penalty
        self.m = int(m)
        self.context = context if context is not None else gram_matrix(design.t, penalty, m)

    @cached_property
    def _spectral(self):
        n, m = self.design.n, self.m
        sw = np.sqrt(self.design.w)
        K = self.context.gram
        T = self.context.null_basis_matrix
        F, _ = np.linalg.qr(sw[:, None] * T, mode="complete")
        F2 = F[:, m:]
        Kt = sw[:, None] * K * sw[None, :]
        B = F2.T @ Kt @ F2
        e, U = np.linalg.eigh(0.5 * (B + B.T))
        e = np.clip(e, 0.0, None)
        Z = U.T @ F2.T
        return e, Z

    def shrinkage(self, lam):
        _check_lambda(lam)
        e, _ = self._spectral
        nl = self.design.n * lam
        return nl / (e + nl)

    def z(self, y=None):
        y = self.design.y if y is None else np.asarray(y, dtype=float)
        _, Z = self._spectral
        return Z @ (np.sqrt(self.design.w) * y)

    def trace_residual(self, lam) -> float:
        return float(np.sum(self.shrinkage(lam)))

    def gcv(self, lam, y=None) -> float:
        a = self.shrinkage(lam)
        tr = float(np.sum(a))
        if tr <= 1e-10:
            raise DegenerateFitError(f"trace(I - A) = {tr:.3g} at lambda = {lam:g}")
        z = self.z(y)
        return self.design.n * float(np.sum((a * z) ** 2)) / tr**2

    def gml(self, lam, y=None) -> float:
        a = self.shrinkage(lam)
        tr = float(np.sum(a))
        if tr <= 1e-10 or np.any(a <= 0):
            raise DegenerateFitError(f"trace(I - A) = {tr:.3g} at lambda = {lam:g}")
        z = self.z(y)
        num = float(np.sum(a * z**2))
        return num / math.exp(float(np.mean(np.log(a))))

    def criterion(self, name: str):
        name = name.lower()
        if name == "gcv":
            return self.gcv
        if name == "gml":
            return self.gml
        raise ValueError(f"unknown criterion {name!r}; use 'gcv' or 'gml'")

    def fit(self, lam) -> SplineFit:
        _check_lambda(lam)
        K = self.context.gram
        T = self.context.null_basis_matrix
        c, d = _augmented_solve(K, T, self.design.w, lam, self.design.y)
        fitted = K @ c + T @ d
        hat_trace = self.design.n - self.trace_residual(lam)
        return SplineFit(
            c=c, d=d, lam=float(lam), m=self.m, penalty=self.penalty,
            fitted=fitted, hat_trace=hat_trace, design=self.design,
            context=self.context,
        )

    def solve_many(self, lam, Y):
        """Coefficients for several response vectors (columns of Y)."""
        _check_lambda(lam)
        return _augmented_solve(
            self.context.gram, self.context.null_basis_matrix, self.design.w, lam, Y
        )

    def hat_matrix(self, lam) -> np.ndarray:
        n = self.design.n
        C, D = self.solve_many(lam, np.eye(n))
        return self.context.gram @ C + self.context.null_basis_matrix @ D


def fit(design: Design, penalty: PiecewisePenalty, m: int, lam: float) -> SplineFit:
    """Fit the penalized spline at a fixed lambda."""
    return PenalizedSystem(design, penalty, m).fit(lam)


def predict(fit: SplineFit, tnew, deriv: int = 0) -> np.ndarray:
    """Evaluate the fitted expansion (or its ``deriv``-th derivative)."""
    tnew = np.asarray(tnew, dtype=float)
    scalar = tnew.ndim == 0
    tnew = np.atleast_1d(tnew)
    if np.any(tnew < 0) or np.any(tnew > 1):
        raise ValueError("prediction points must lie in [0, 1]; no extrapolation")
    Kx = cross_gram(tnew, fit.design.t, fit.penalty, fit.m, order=deriv)
    out = Kx @ fit.c
    for j in range(deriv, fit.m):
        out = out + fit.d[j] * tnew ** (j - deriv) / factorial(j - deriv)
    return out[0] if scalar else out


def hat_matrix(design: Design, penalty: PiecewisePenalty, m: int, lam: float) -> np.ndarray:
    return PenalizedSystem(design, penalty, m).hat_matrix(lam)


def gcv(design: Design, penalty: PiecewisePenalty, m: int, lam: float) -> float:
    """n ||W^{1/2}(I-A)y||^2 / trace(I-A)^2."""
    return PenalizedSystem(design, penalty, m).gcv(lam)


def gml(design: Design, penalty: PiecewisePenalty, m: int, lam: float) -> float:
    """y'W(I-A)y / det+(W^{1/2}(I-A)W^{-1/2})^{1/(n-m)}."""
    return PenalizedSystem(design, penalty, m).gml(lam)


def lambda_grid(lo=DEFAULT_LAMBDA_GRID[0], hi=DEFAULT_LAMBDA_GRID[1], num=DEFAULT_LAMBDA_GRID[2]):
    if not (0 < lo <= hi) or num < 1:
        raise ValueError("lambda grid needs 0 < lo <= hi and num >= 1")
    return np.logspace(np.log10(lo), np.log10(hi), int(num))


def default_lambda_grid(m: int) -> np.ndarray:
    """[1e-8, 1] for m <= 2; [10^{-4m}, 1] beyond, so lam^{1/(2m)} still reaches 0.01."""
    lo = DEFAULT_LAMBDA_GRID[0] if m <= 2 else 10.0 ** (-4 * m)
    return lambda_grid(lo, DEFAULT_LAMBDA_GRID[1], DEFAULT_LAMBDA_GRID[2])


def select_lambda(
    design: Design | PenalizedSystem,
    penalty: PiecewisePenalty | None = None,
    m: int | None = None,
    criterion: str = "gcv",
    grid=None,
    iterations: int = GOLDEN_ITERATIONS,
) -> float:
    """Grid search on a log-lambda grid, then golden-section refinement.

    Ties on the grid go to the smaller lambda; the refined value replaces
    the grid optimum only if it is strictly better. Data lying in the null
    space (residual-space component at rounding level) select the largest
    grid value, since every lambda fits them exactly and the criterion
    values are then pure rounding noise.
    """
    system = design if isinstance(design, PenalizedSystem) else PenalizedSystem(design, penalty, m)
    score = system.criterion(criterion)
    if grid is None:
        grid = default_lambda_grid(system.m)
    else:
        grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if system.design.n > system.m and _in_null_space(system):
        return float(grid[-1])

    vals = np.full(grid.size, np.inf)
    for i, lam in enumerate(grid):
        try:
            vals[i] = score(lam)
        except DegenerateFitError:
            pass
    if not np.any(np.isfinite(vals)):
        raise DegenerateFitError("criterion is degenerate at every grid point")
    best = int(np.argmin(vals))
    best_lam, best_val = float(grid[best]), float(vals[best])
    if grid.size == 1 or iterations <= 0:
        return best_lam

    lo = math.log(grid[max(best - 1, 0)])
    hi = math.log(grid[min(best + 1, grid.size - 1)])

    def g(x):
        try:
            return score(math.exp(x))
        except DegenerateFitError:
            return np.inf

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = g(x1), g(x2)
    for _ in range(iterations):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = g(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = g(x2)
    x, fx = (x1, f1) if f1 <= f2 else (x2, f2)
    if fx < best_val:
        return math.exp(x)
    return best_lam


def _in_null_space(system: PenalizedSystem) -> bool:
    wy = np.sqrt(system.design.w) * system.design.y
    scale = float(np.linalg.norm(wy))
    return float(np.linalg.norm(system.z())) <= 1e-12 * max(scale, np.finfo(float).tiny)


def objective(fit: SplineFit) -> float:
    """Penalized objective at the fitted coefficients."""
    design = fit.design
    K = fit.context.gram
    f = K @ fit.c + fit.context.null_basis_matrix @ fit.d
    resid = design.y - f
    return float(np.mean(design.w * resid**2) + fit.lam * fit.c @ K @ fit.c)


def weighted_poly_fit(design: Design, m: int) -> np.ndarray:
    """Fitted values of weighted least squares on (1, t, ..., t^{m-1}/(m-1)!)."""
    from .rkhs import null_basis_matrix

    T = null_basis_matrix(m, design.t)
    sw = np.sqrt(design.w)
    coef, *_ = np.linalg.lstsq(sw[:, None] * T, sw * design.y, rcond=None)
    return T @ coef


@dataclass(frozen=True)
class OptimalityReport:
    """Empirical moment conditions M_k = (1/n) sum w_i (f_i - y_i) t_i^k."""

    moments: np.ndarray
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "moments": self.moments.tolist(),
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def check_optimality(fit: SplineFit, rtol: float = 1e-6) -> OptimalityReport:
    """Check the boundary optimality conditions at a fit.

    The fitted values are recomputed from (c, d). The tolerance is
    ``rtol * mean(w) * max|y|``.
    """
    design = fit.design
    f = fit.context.gram @ fit.c + fit.context.null_basis_matrix @ fit.d
    r = design.w * (f - design.y)
    moments = np.array([np.mean(r * design.t**k) for k in range(fit.m)])
    scale = float(np.mean(design.w) * max(np.max(np.abs(design.y)), np.finfo(float).tiny))
    tol = rtol * scale
    return OptimalityReport(moments, tol, bool(np.max(np.abs(moments)) <= tol))
