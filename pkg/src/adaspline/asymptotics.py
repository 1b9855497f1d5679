"""Pointwise asymptotic bias and variance, IMSE functionals, and numerical
checks of the equivalent-kernel approximation.

Throughout, r(t) = sigma^2(t) / q(t). Fits are weighted by 1/sigma^2, so
the leading-order bias of the penalized estimate at an interior point t is

    lam (-1)^(m-1) r(t) d^m/dt^m [rho(t) f0^(m)(t)]

and its variance is L0 r(t)^(1-1/(2m)) rho(t)^(-1/(2m)) / (n lam^(1/(2m))).
For a piecewise-constant rho the derivative is taken inside a segment, which
ignores the jumps of rho.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .kernels import eval_J, kernel_L0, warp
from .rkhs import PiecewisePenalty, cross_gram, null_basis_matrix
from .solver import Design, PenalizedSystem

__all__ = [
    "TruthSpec",
    "AsymptoticsReport",
    "KernelCheck",
    "EmpiricalReport",
    "asymptotic_bias",
    "asymptotic_variance",
    "asymptotic_report",
    "imse",
    "pi_functional",
    "hat_row",
    "verify_equivalent_kernel",
    "effective_bandwidth",
    "empirical_bias_variance",
    "KNOT_EXCLUSION",
    "BETA_MIN",
]

FD_STEP = 1e-4
KNOT_EXCLUSION = 1e-3
BOUNDARY_MARGIN = 0.05
BETA_MIN = 5.0
PIECE_POINTS = 201


def _as_function(v) -> Callable:
    if callable(v):
        return v
    c = float(v)
    return lambda t: np.full(np.shape(t), c)


def _uniform_density(t):
    return np.ones(np.shape(t))


@dataclass(frozen=True)
class TruthSpec:
    """Regression function, optional derivatives, noise scale, design density.

    ``dm`` and ``d2m`` evaluate f0^(m) and f0^(2m) when known; otherwise they
    are approximated by central differences of ``f0``. ``sigma`` may be a
    constant or a function of t.
    """

    f0: Callable
    sigma: Callable | float = 1.0
    q: Callable = _uniform_density
    dm: Callable | None = None
    d2m: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_function(self.sigma))
        grid = np.linspace(0.0, 1.0, 2001)
        qv = np.asarray(self.q(grid), dtype=float) * np.ones_like(grid)
        if np.any(qv <= 0) or not np.all(np.isfinite(qv)):
            raise ValueError("design density q must be positive on [0, 1]")
        total = simpson(qv, x=grid)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"design density integrates to {total:.8g}, not 1")
        sv = np.asarray(self.sigma(grid), dtype=float) * np.ones_like(grid)
        if np.any(sv <= 0) or not np.all(np.isfinite(sv)):
            raise ValueError("sigma must be positive on [0, 1]")

    def r(self, t):
        t = np.asarray(t, dtype=float)
        return (np.asarray(self.sigma(t), dtype=float) ** 2 / np.asarray(self.q(t), dtype=float)) * np.ones_like(t)


@dataclass(frozen=True)
class AsymptoticsReport:
    t: float
    bias: float
    variance: float
    mse: float
    beta: float


# ------------------------------------------------------ derivatives


def _central_weights(order: int) -> np.ndarray:
    """Weights of the (order)-th central difference on offsets -k..k, k = ceil(order/2)."""
    k = (order + 1) // 2
    offsets = np.arange(-k, k + 1, dtype=float)
    # solve the Vandermonde system sum_j w_j x_j^p = p! [p == order]
    V = np.vander(offsets, increasing=True).T
    rhs = np.zeros(offsets.size)
    rhs[order] = math.factorial(order)
    return offsets, np.linalg.solve(V, rhs)


def _fd_step(order: int) -> float:
    # 1e-4 is fine for low orders; high orders need a larger step to keep
    # round-off (eps / h^order) below truncation (h^2).
    return max(FD_STEP, np.finfo(float).eps ** (1.0 / (order + 2)))


def _central_diff(fn, t, order: int, step: float):
    offsets, weights = _central_weights(order)
    t = np.asarray(t, dtype=float)
    vals = np.stack([np.asarray(fn(t + o * step), dtype=float) * np.ones_like(t) for o in offsets])
    return np.tensordot(weights, vals, axes=1) / step**order


def _stencil_radius(truth: TruthSpec, m: int) -> float:
    if truth.d2m is not None:
        return 0.0
    if truth.dm is not None:
        return ((m + 1) // 2) * FD_STEP
    return ((2 * m + 1) // 2) * _fd_step(2 * m)


def _f2m(truth: TruthSpec, m: int, t):
    """f0^(2m) at t, analytic when supplied, else by central differences."""
    if truth.d2m is not None:
        return np.asarray(truth.d2m(t), dtype=float) * np.ones(np.shape(t))
    if truth.dm is not None:
        return _central_diff(truth.dm, t, m, FD_STEP)
    return _central_diff(truth.f0, t, 2 * m, _fd_step(2 * m))


def _check_point(t, penalty: PiecewisePenalty, radius: float, interior=True):
    t = float(t)
    if interior and not BOUNDARY_MARGIN <= t <= 1.0 - BOUNDARY_MARGIN:
        raise ValueError(
            f"t = {t:g} is within {BOUNDARY_MARGIN} of the boundary; formulas are interior only"
        )
    if penalty.tau.size:
        gap = float(np.min(np.abs(penalty.tau - t)))
        if gap <= max(radius, 0.0) or gap < KNOT_EXCLUSION:
            raise ValueError(f"t = {t:g} is at a penalty knot; the derivative of rho is undefined")
    return t


def _check_m(m):
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    return int(m)


def _bias_values(t, lam, penalty, truth, m):
    # rho is constant on the stencil, so d^m[rho f0^(m)] = rho f0^(2m)
    return lam * (-1.0) ** (m - 1) * truth.r(t) * penalty(t) * _f2m(truth, m, t)


def _variance_values(t, n, lam, penalty, truth, m):
    e = 1.0 / (2 * m)
    return kernel_L0(m) * truth.r(t) ** (1.0 - e) * penalty(t) ** (-e) / (n * lam**e)


def asymptotic_bias(t, lam, penalty: PiecewisePenalty, truth: TruthSpec, m: int) -> float:
    """lam (-1)^(m-1) r(t) {rho f0^(m)}^(m)(t) at an interior, knot-free t."""
    m = _check_m(m)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    t = _check_point(t, penalty, _stencil_radius(truth, m))
    return float(_bias_values(np.array([t]), lam, penalty, truth, m)[0])


def asymptotic_variance(t, n, lam, penalty: PiecewisePenalty, truth: TruthSpec, m: int) -> float:
    """L0 r^(1-1/(2m)) rho^(-1/(2m)) / (n lam^(1/(2m)))."""
    m = _check_m(m)
    if not lam > 0 or n < 1:
        raise ValueError("need lambda > 0 and n >= 1")
    t = _check_point(t, penalty, 0.0)
    return float(_variance_values(np.array([t]), n, lam, penalty, truth, m)[0])


def asymptotic_report(t, n, lam, penalty, truth, m) -> AsymptoticsReport:
    b = asymptotic_bias(t, lam, penalty, truth, m)
    v = asymptotic_variance(t, n, lam, penalty, truth, m)
    return AsymptoticsReport(float(t), b, v, b * b + v, lam ** (-1.0 / (2 * m)))


# ------------------------------------------------------ functionals


def _pieces(penalty: PiecewisePenalty, radius: float, knot_gap: float):
    """Integration pieces inside [0, 1] that keep clear of knots and ends."""
    margin = max(radius, 0.0)
    gap = max(knot_gap, radius)
    breaks = penalty.breaks
    out = []
    for j, (lo, hi) in enumerate(zip(breaks[:-1], breaks[1:])):
        a = lo + (margin if j == 0 else gap)
        b = hi - (margin if j == len(breaks) - 2 else gap)
        if b <= a:
            raise ValueError(f"segment ({lo:g}, {hi:g}] is too short to integrate")
        out.append((j, a, b))
    return out


def imse(lam, penalty: PiecewisePenalty, truth: TruthSpec, n: int, m: int) -> float:
    """Integrated asymptotic bias^2 + variance.

    Composite Simpson on each segment, leaving out 1e-3 neighbourhoods of
    the knots (and, with finite differences, a stencil width at 0 and 1).
    """
    m = _check_m(m)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    total = 0.0
    for _, a, b in _pieces(penalty, _stencil_radius(truth, m), KNOT_EXCLUSION):
        x = np.linspace(a, b, PIECE_POINTS)
        vals = _bias_values(x, lam, penalty, truth, m) ** 2 + _variance_values(
            x, n, lam, penalty, truth, m
        )
        total += float(simpson(vals, x=x))
    return total


def pi_functional(penalty: PiecewisePenalty, truth: TruthSpec, m: int) -> float:
    """sum_j rho_j^2 int r^2 (f0^(2m))^2 + L0 rho_j^(-1/(2m)) int r^(1-1/(2m)).

    Segment integrals by composite Simpson; jumps of rho are ignored.
    """
    m = _check_m(m)
    L0 = kernel_L0(m)
    e = 1.0 / (2 * m)
    total = 0.0
    radius = _stencil_radius(truth, m)
    for j, a, b in _pieces(penalty, radius, radius):
        x = np.linspace(a, b, PIECE_POINTS)
        r = truth.r(x)
        A = simpson(r**2 * _f2m(truth, m, x) ** 2, x=x)
        C = simpson(r ** (1.0 - e), x=x)
        rho = penalty.values[j]
        total += rho**2 * A + L0 * rho ** (-e) * C
    return float(total)


# ------------------------------------------- equivalent-kernel checks


@dataclass(frozen=True)
class KernelCheck:
    index: int
    t_star: float
    beta: float
    discrepancy: float
    hat_weights: np.ndarray
    kernel_weights: np.ndarray
    regime_warning: bool


def hat_row(system: PenalizedSystem, lam: float, i: int) -> np.ndarray:
    """Row i of the hat matrix from one solve.

    A = W^{-1/2} S W^{1/2} with S symmetric, so A[i, :] = w * A[:, i] / w_i
    and column i is the fit to the unit response e_i.
    """
    n = system.design.n
    e = np.zeros((n, 1))
    e[i, 0] = 1.0
    C, D = system.solve_many(lam, e)
    col = (system.context.gram @ C + system.context.null_basis_matrix @ D)[:, 0]
    w = system.design.w
    return w * col / w[i]


def verify_equivalent_kernel(
    design: Design,
    lam: float,
    penalty: PiecewisePenalty,
    m: int,
    t0: float,
    q: Callable | None = None,
) -> KernelCheck:
    """Compare a hat-matrix row with J(t*, t_i) / (n q(t_i)).

    t* is the design point nearest t0. The variance entering r is 1/w,
    interpolated between design points; q defaults to the uniform density.
    The discrepancy is ||hat - kernel||_2 / ||kernel||_2.
    """
    m = _check_m(m)
    t0 = float(t0)
    if not BOUNDARY_MARGIN <= t0 <= 1.0 - BOUNDARY_MARGIN:
        raise ValueError("t0 must be interior")
    qf = _uniform_density if q is None else q
    beta = lam ** (-1.0 / (2 * m))
    flag = beta < BETA_MIN
    if flag:
        warnings.warn(f"beta = {beta:.3g} < {BETA_MIN}: outside the asymptotic regime")
    t = design.t
    i = int(np.argmin(np.abs(t - t0)))
    system = PenalizedSystem(design, penalty, m)
    hat = hat_row(system, lam, i)

    def r(s):
        w = np.interp(s, t, design.w)
        return 1.0 / (w * np.asarray(qf(s), dtype=float))

    wf = warp(penalty, r, m)
    kern = eval_J(np.full(t.size, t[i]), t, beta, wf, m) / (design.n * np.asarray(qf(t), dtype=float))
    disc = float(np.linalg.norm(hat - kern) / np.linalg.norm(kern))
    return KernelCheck(i, float(t[i]), beta, disc, hat, kern, flag)


def effective_bandwidth(weights, t, center: float) -> float:
    """Root second moment of |weights| about ``center``."""
    w = np.abs(np.asarray(weights, dtype=float))
    d = np.asarray(t, dtype=float) - center
    return float(np.sqrt(np.sum(w * d * d) / np.sum(w)))


# ----------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class EmpiricalReport:
    t0: float
    bias: float
    variance: float
    bias_se: float
    replicates: int


def empirical_bias_variance(
    truth: TruthSpec,
    penalty: PiecewisePenalty,
    m: int,
    lam: float,
    n: int,
    replicates: int,
    seed: int,
    t0: float,
) -> EmpiricalReport:
    """Monte Carlo bias and variance of fhat(t0) on t_i = i/n.

    Fits use weights 1/sigma^2(t_i); all replicates share one factorisation.
    """
    m = _check_m(m)
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    t = np.arange(1, n + 1) / n
    f = np.asarray(truth.f0(t), dtype=float)
    sig = np.asarray(truth.sigma(t), dtype=float) * np.ones(n)
    design = Design(t, f, w=1.0 / sig**2)
    system = PenalizedSystem(design, penalty, m)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))
    Y = f[:, None] + sig[:, None] * rng.standard_normal((n, replicates))
    C, D = system.solve_many(lam, Y)
    k0 = cross_gram(np.array([t0]), t, penalty, m)
    est = (k0 @ C + null_basis_matrix(m, np.array([t0])) @ D)[0]
    err = est - float(np.asarray(truth.f0(np.array([t0])))[0])
    var = float(np.var(est, ddof=1))
    return EmpiricalReport(float(t0), float(err.mean()), var, math.sqrt(var / replicates), replicates)
