"""Data-driven piecewise-constant penalty selection.

Pipeline: estimate the variance function and design density, estimate
f^(2m) from a weighted higher-order spline, place knots where the
conditional density of y given t changes most, set each segment value by
the closed-form minimiser of the segment-wise asymptotic risk, optionally
power up the contrasts, and choose (S, gamma) by GAIC.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, trapezoid

from . import _smooth
from ._smooth import Curve
from .kernels import kernel_L0
from .rkhs import PiecewisePenalty
from .solver import (
    Design,
    OptimalityReport,
    PenalizedSystem,
    SplineFit,
    check_optimality,
    predict,
    select_lambda,
)

__all__ = [
    "AdaptConfig",
    "AdaptResult",
    "GaicEntry",
    "Curve",
    "knot_scores",
    "select_knots",
    "estimate_variance",
    "estimate_density",
    "estimate_f2m",
    "optimal_rho",
    "segment_integrals",
    "power_up",
    "gaic",
    "adapt_fit",
    "CURVE_GRID_SIZE",
]

CURVE_GRID_SIZE = 201


@dataclass(frozen=True)
class AdaptConfig:
    S_grid: tuple = (0, 2, 4, 8)
    gamma_grid: tuple = (1.0, 2.0, 4.0)
    density_grid_size: int = 100
    m: int = 2
    pilot_m: int = 2
    curve_grid_size: int = CURVE_GRID_SIZE
    criterion: str = "gcv"

    def __post_init__(self):
        S = tuple(int(s) for s in self.S_grid)
        g = tuple(float(x) for x in self.gamma_grid)
        if not S or any(s < 0 for s in S):
            raise ValueError("S_grid must be nonempty with values >= 0")
        if not g or any(x < 1 for x in g):
            raise ValueError("gamma_grid must be nonempty with values >= 1")
        if any(s >= self.density_grid_size for s in S):
            raise ValueError("every S must be smaller than density_grid_size")
        if self.m < 1 or self.pilot_m < 1:
            raise ValueError("orders must be >= 1")
        object.__setattr__(self, "S_grid", tuple(sorted(set(S))))
        object.__setattr__(self, "gamma_grid", tuple(sorted(set(g))))

    def to_dict(self) -> dict:
        return {
            "S_grid": list(self.S_grid),
            "gamma_grid": list(self.gamma_grid),
            "density_grid_size": self.density_grid_size,
            "m": self.m,
            "pilot_m": self.pilot_m,
            "curve_grid_size": self.curve_grid_size,
            "criterion": self.criterion,
        }


@dataclass(frozen=True)
class GaicEntry:
    S: int
    gamma: float
    score: float
    lam: float
    knots: tuple
    values: tuple


@dataclass(frozen=True)
class AdaptResult:
    penalty: PiecewisePenalty
    fit: SplineFit
    variance_curve: Curve
    density_curve: Curve
    f2m_curve: Curve
    gaic_table: list
    selected: tuple
    optimality: OptimalityReport
    weights: np.ndarray = field(repr=False)

    @property
    def r_curve(self) -> Curve:
        return Curve(self.variance_curve.grid, self.variance_curve.values / self.density_curve.values)


# ---------------------------------------------------------------- knots


def knot_scores(design: Design, grid_size: int = 100):
    """L1 change of the conditional density of y given t between slices.

    Returns ``(s, scores)`` with s_k = k / grid_size for k = 1..grid_size-1
    and scores[k-1] = int |p(y | s_k) - p(y | s_{k+1})| dy. ``scores`` is
    None when y is constant.
    """
    t, y = design.t, design.y
    s = np.arange(1, grid_size + 1) / grid_size
    if np.ptp(y) == 0:
        return s[:-1], None
    ht = _smooth.rule_of_thumb(t)
    hy = _smooth.rule_of_thumb(y)
    ygrid = np.linspace(y.min() - 4 * hy, y.max() + 4 * hy, 512)
    wt = _smooth.gauss((s[:, None] - t[None, :]) / ht)
    wt /= wt.sum(axis=1, keepdims=True)
    ky = _smooth.gauss((ygrid[:, None] - y[None, :]) / hy) / hy
    cond = wt @ ky.T
    diff = np.abs(np.diff(cond, axis=0))
    scores = trapezoid(diff, ygrid, axis=1)
    return s[:-1], scores


def select_knots(design: Design, S: int, grid_size: int = 100) -> np.ndarray:
    """Top-S slice points by conditional-density change, kept >= 2/grid_size apart."""
    if S < 0 or S >= grid_size:
        raise ValueError("need 0 <= S < grid_size")
    if S == 0:
        return np.empty(0)
    if design.n < 10:
        raise ValueError("knot selection needs at least 10 observations")
    s, scores = knot_scores(design, grid_size)
    if scores is None:
        warnings.warn("conditional density is degenerate (constant y); no knots selected")
        return np.empty(0)
    return _greedy_top(s, scores, S, 2.0 / grid_size)


def _greedy_top(s, scores, S, min_sep):
    order = np.lexsort((np.arange(scores.size), -scores))
    chosen = []
    for k in order:
        if all(abs(s[k] - s[j]) >= min_sep - 1e-12 for j in chosen):
            chosen.append(k)
            if len(chosen) == S:
                break
    return np.sort(s[chosen])


# ------------------------------------------------------- nuisance curves


def _curve_grid(size=CURVE_GRID_SIZE):
    return np.linspace(0.0, 1.0, size)


def estimate_variance(
    design: Design,
    bandwidth: float | str = "auto",
    pilot_m: int = 2,
    grid_size: int = CURVE_GRID_SIZE,
) -> Curve:
    """Local-linear smooth of squared residuals from a GCV pilot spline.

    The pilot ignores the design weights. The result is floored at
    max(1e-8, 1e-4 * median) so that inverse-variance weights stay finite.
    """
    if design.n < 20:
        raise ValueError("variance estimation needs at least 20 observations")
    pilot_design = Design(design.t, design.y)
    system = PenalizedSystem(pilot_design, PiecewisePenalty.uniform(), pilot_m)
    pilot = system.fit(select_lambda(system, criterion="gcv"))
    r2 = (design.y - pilot.fitted) ** 2
    h = _smooth.rule_of_thumb(design.t) if bandwidth == "auto" else float(bandwidth)
    grid = _curve_grid(grid_size)
    values = _smooth.local_linear(design.t, r2, grid, h)
    floor = max(1e-8, 1e-4 * float(np.median(values)))
    return Curve(grid, np.maximum(values, floor))


def estimate_density(t, grid_size: int = CURVE_GRID_SIZE) -> Curve:
    """Design density q on [0, 1]; exactly 1 for (near) equispaced designs."""
    grid = _curve_grid(grid_size)
    if _smooth.is_equispaced(t):
        return Curve(grid, np.ones_like(grid))
    dens = _smooth.reflected_kde(t, grid)
    dens /= simpson(dens, x=grid)
    return Curve(grid, np.maximum(dens, 1e-8))


def estimate_f2m(design: Design, weights, m: int, grid_size: int = CURVE_GRID_SIZE) -> Curve:
    """Estimate f^(2m) by a weighted spline of penalty order 2m.

    The representer pieces then have degree 4m - 1, and the 2m-th
    derivative sum_i c_i (t_i - t)_+^{2m-1} / (2m-1)! is continuous, so it
    is evaluated directly on the curve grid.
    """
    p = 2 * m
    if design.n < 4 * m:
        raise ValueError(f"need n >= 4m = {4 * m} observations, got {design.n}")
    d = design.with_weights(np.asarray(weights, dtype=float) * np.ones(design.n))
    system = PenalizedSystem(d, PiecewisePenalty.uniform(), p)
    lam = select_lambda(system, criterion="gcv")
    f = system.fit(lam)
    grid = _curve_grid(grid_size)
    return Curve(grid, predict(f, grid, deriv=p))


# ----------------------------------------------------- penalty values


def _segment_integral(grid, values, a, b):
    inside = (grid > a) & (grid < b)
    if not np.any(inside):
        raise ValueError(
            f"segment ({a:g}, {b:g}] holds no curve-grid points; use a finer grid"
        )
    x = np.concatenate(([a], grid[inside], [b]))
    v = np.concatenate(([np.interp(a, grid, values)], values[inside], [np.interp(b, grid, values)]))
    return float(simpson(v, x=x))


def segment_integrals(knots, r_curve: Curve, f2m_curve: Curve, m: int):
    """Per-segment A_j = int r^2 (f^(2m))^2 and C_j = int r^{1-1/(2m)}."""
    grid = r_curve.grid
    if not np.array_equal(grid, f2m_curve.grid):
        raise ValueError("r and f2m curves must share a grid")
    r = r_curve.values
    if np.any(r <= 0):
        raise ValueError("r must be strictly positive")
    breaks = np.concatenate(([0.0], np.asarray(knots, dtype=float), [1.0]))
    a_int = r**2 * f2m_curve.values**2
    c_int = r ** (1.0 - 1.0 / (2 * m))
    A = np.array([_segment_integral(grid, a_int, lo, hi) for lo, hi in zip(breaks[:-1], breaks[1:])])
    C = np.array([_segment_integral(grid, c_int, lo, hi) for lo, hi in zip(breaks[:-1], breaks[1:])])
    return breaks, A, C, a_int


def optimal_rho(knots, r_curve: Curve, f2m_curve: Curve, m: int, L0: float | None = None) -> PiecewisePenalty:
    """Closed-form segment values

        rho_j = [L0 int r^{1-1/(2m)} / (4m int r^2 (f^(2m))^2)]^{2m/(4m+1)}

    with the denominator floored at 1e-8 * length_j * median(r^2 (f^(2m))^2).
    """
    if L0 is None:
        L0 = kernel_L0(m)
    knots = np.asarray(knots, dtype=float)
    breaks, A, C, a_int = segment_integrals(knots, r_curve, f2m_curve, m)
    med = float(np.median(a_int))
    floor = 1e-8 * np.diff(breaks) * med
    A = np.maximum(A, floor)
    if np.any(A <= 0):
        # f^(2m) vanishes on most of the grid; fall back to a uniform penalty
        A = np.where(A > 0, A, np.max(A) if np.any(A > 0) else 1.0)
    rho = (L0 * C / (4 * m * A)) ** (2 * m / (4 * m + 1))
    return PiecewisePenalty(knots, rho)


def power_up(penalty: PiecewisePenalty, gamma: float) -> PiecewisePenalty:
    """Normalise the geometric mean of the values to 1, then raise to gamma."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    logs = np.log(penalty.values)
    normalised = logs - logs.mean()
    return PiecewisePenalty(penalty.tau, np.exp(gamma * normalised), gamma)


def gaic(fit: SplineFit, S: int) -> float:
    """(n - m) log GML + 2S.

    (n - m) log GML is -2 times the profile log-likelihood of the GML
    model up to a constant, so S enters like a parameter count in AIC.
    """
    system = PenalizedSystem(fit.design, fit.penalty, fit.m, context=fit.context)
    score = system.gml(fit.lam)
    if not score > 0:
        raise ValueError(f"GML score {score} is not positive")
    return (fit.n - fit.m) * math.log(score) + 2.0 * S


# ------------------------------------------------------------ pipeline


class AdaptStageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"adapt_fit failed during {stage}: {exc}")


def adapt_fit(design: Design, config: AdaptConfig | None = None) -> AdaptResult:
    """Full adaptive fit; ties in GAIC go to smaller S, then smaller gamma."""
    config = AdaptConfig() if config is None else config
    m = config.m
    if design.n < 4 * m:
        raise ValueError(f"need n >= 4m = {4 * m} observations")
    size = config.curve_grid_size

    try:
        variance = estimate_variance(design, pilot_m=config.pilot_m, grid_size=size)
    except Exception as exc:
        raise AdaptStageError("variance estimation", exc) from exc
    weights = 1.0 / np.interp(design.t, variance.grid, variance.values)
    wdesign = design.with_weights(weights)
    density = estimate_density(design.t, size)
    r_curve = Curve(variance.grid, variance.values / density.values)
    try:
        f2m = estimate_f2m(wdesign, weights, m, size)
    except Exception as exc:
        raise AdaptStageError("derivative estimation", exc) from exc

    scores = None
    if any(S > 0 for S in config.S_grid):
        s, scores = knot_scores(design, config.density_grid_size)
        if scores is None:
            warnings.warn("conditional density is degenerate; using uniform penalty only")

    L0 = kernel_L0(m)
    table = []
    fits = {}
    cache = {}
    for S in config.S_grid:
        if S == 0 or scores is None:
            knots = np.empty(0)
        else:
            knots = _greedy_top(s, scores, S, 2.0 / config.density_grid_size)
        try:
            base = optimal_rho(knots, r_curve, f2m, m, L0)
        except Exception as exc:
            raise AdaptStageError(f"optimal rho (S={S})", exc) from exc
        for gamma in config.gamma_grid:
            pen = power_up(base, gamma)
            key = (pen.tau.tobytes(), pen.values.tobytes())
            if key not in cache:
                try:
                    system = PenalizedSystem(wdesign, pen, m)
                    lam = select_lambda(system, criterion=config.criterion)
                    f = system.fit(lam)
                except Exception as exc:
                    raise AdaptStageError(f"fit (S={S}, gamma={gamma:g})", exc) from exc
                cache[key] = f
            f = cache[key]
            score = gaic(f, S)
            table.append(GaicEntry(S, gamma, score, f.lam, tuple(pen.tau.tolist()), tuple(pen.values.tolist())))
            fits[(S, gamma)] = f

    best = min(table, key=lambda e: (e.score, e.S, e.gamma))
    chosen = fits[(best.S, best.gamma)]
    report = check_optimality(chosen)
    return AdaptResult(
        penalty=chosen.penalty,
        fit=chosen,
        variance_curve=variance,
        density_curve=density,
        f2m_curve=f2m,
        gaic_table=sorted(table, key=lambda e: (e.S, e.gamma)),
        selected=(best.S, best.gamma),
        optimality=report,
        weights=weights,
    )
