"""Equivalent kernels of smoothing splines of order m = 1..4.

``eval_L`` gives the interior equivalent kernel L(|t|) whose Fourier
transform is 1 / (1 + w^{2m}); ``eval_J`` gives the leading-order
spatially varying kernel obtained by warping the abscissa with
Q(t) = int_0^t {r(s) rho(s)}^{-1/(2m)} ds.

The warped kernel is leading order only: the density factor multiplying
Q' is taken as 1 and the O(1/beta) correction inside Q is dropped.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .rkhs import PiecewisePenalty

__all__ = [
    "MAX_ORDER",
    "KernelSpec",
    "WarpFunction",
    "eval_L",
    "kernel_L0",
    "kernel_spec",
    "kernel_moment",
    "tail_bound",
    "TruncationWarning",
    "adequate_half_width",
    "warp",
    "eval_J",
]

MAX_ORDER = 4

_C8 = np.cos(np.pi / 8)
_S8 = np.sin(np.pi / 8)
_R3 = np.sqrt(3.0)
_R2 = np.sqrt(2.0)

# Each kernel is a sum of damped oscillations
#   e^{-a|t|} (p cos(b|t|) + q sin(b|t|))
# stored as (a, b, p, q) rows.
_TERMS = {
    1: ((1.0, 0.0, 0.5, 0.0),),
    2: ((1 / _R2, 1 / _R2, 2**-1.5, 2**-1.5),),
    3: (
        (1.0, 0.0, 1 / 6, 0.0),
        (0.5, _R3 / 2, 1 / 6, _R3 / 6),
    ),
    # printed to four decimals as 0.9239, 0.3827, 0.2310, 0.0957
    4: (
        (_C8, _S8, _C8 / 4, _S8 / 4),
        (_S8, _C8, _S8 / 4, _C8 / 4),
    ),
}


def _check_order(m):
    if int(m) != m or not 1 <= m <= MAX_ORDER:
        raise ValueError(
            f"equivalent kernels are available for m = 1..{MAX_ORDER}, got m = {m}"
        )
    return int(m)


def eval_L(m: int, t):
    """Equivalent kernel L(|t|) for penalty order m (vectorised in t)."""
    m = _check_order(m)
    u = np.abs(np.asarray(t, dtype=float))
    out = np.zeros(u.shape)
    for a, b, p, q in _TERMS[m]:
        out = out + np.exp(-a * u) * (p * np.cos(b * u) + q * np.sin(b * u))
    return out


_L0_CACHE: dict[int, float] = {}
_L0_LOCK = threading.Lock()


def kernel_L0(m: int) -> float:
    """int L^2 over the real line, by adaptive quadrature; cached per m."""
    m = _check_order(m)
    with _L0_LOCK:
        if m not in _L0_CACHE:
            val, _ = integrate.quad(
                lambda x: eval_L(m, x) ** 2, 0.0, np.inf, epsabs=1e-14, epsrel=1e-13,
                limit=500,
            )
            _L0_CACHE[m] = 2.0 * val
        return _L0_CACHE[m]


@dataclass(frozen=True)
class KernelSpec:
    m: int
    L0: float

    def __call__(self, t):
        return eval_L(self.m, t)


def kernel_spec(m: int) -> KernelSpec:
    return KernelSpec(_check_order(m), kernel_L0(m))


def tail_bound(m: int, k: int, half_width: float) -> float:
    """Upper bound on int_{|t| > half_width} |t^k L(|t|)| dt.

    Uses |L(u)| <= A e^{-a u} with a the slowest decay rate and A the sum of
    absolute coefficients, so the bound is A * 2 * Gamma(k+1, a H) / a^{k+1}.
    """
    m = _check_order(m)
    terms = _TERMS[m]
    a = min(row[0] for row in terms)
    amp = sum(abs(row[2]) + abs(row[3]) for row in terms)
    upper_gamma = special.gammaincc(k + 1, a * half_width) * special.gamma(k + 1)
    return float(2.0 * amp * upper_gamma / a ** (k + 1))


def adequate_half_width(m: int, k: int, tol: float = 1e-12) -> float:
    """Smallest half width (to 1 unit) whose tail bound is below ``tol``."""
    h = 1.0
    while tail_bound(m, k, h) >= tol:
        h += 1.0
    return h


class TruncationWarning(UserWarning):
    """The window of a truncated moment leaves a non-negligible tail."""


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _half_line_moment(m: int, k: int, half_width: float) -> float:
    # 64-point Gauss-Legendre on unit cells: the integrand is analytic, so
    # each cell is exact to rounding and no adaptive error control is needed.
    edges = np.arange(0.0, half_width, 1.0)
    edges = np.append(edges, half_width)
    lo, hi = edges[:-1, None], edges[1:, None]
    x = 0.5 * (hi - lo) * _GL_NODES[None, :] + 0.5 * (hi + lo)
    vals = x**k * eval_L(m, x)
    return float(np.sum(0.5 * (hi - lo) * (vals @ _GL_WEIGHTS[:, None])))


def kernel_moment(
    m: int,
    k: int,
    half_width: float = 40.0,
    tail_tol: float = 1e-12,
    strict: bool = False,
) -> float:
    """int_{-H}^{H} t^k L(|t|) dt.

    Odd moments vanish by symmetry for any H. For even k the analytic tail
    bound beyond H is compared with ``tail_tol``; when it is larger the
    truncated value need not approximate the moment over the real line,
    and a ``TruncationWarning`` is issued (``ValueError`` if ``strict``).
    For m = 3, 4 this happens well beyond |t| = 40 because the slowest decay
    rates are 1/2 and sin(pi/8).
    """
    m = _check_order(m)
    if k < 0 or int(k) != k:
        raise ValueError("moment index must be a nonnegative integer")
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    if k % 2:
        return 0.0
    bound = tail_bound(m, k, half_width)
    if bound > tail_tol:
        msg = (
            f"tail of t^{k} L beyond |t| = {half_width:g} is up to {bound:.3g} "
            f"(> {tail_tol:g}); need half_width >= {adequate_half_width(m, k, tail_tol):g}"
        )
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=2)
    return 2.0 * _half_line_moment(m, k, float(half_width))


@dataclass(frozen=True)
class WarpFunction:
    """Tabulated warp Q on ``grid`` (which contains every penalty knot)."""

    grid: np.ndarray
    values: np.ndarray
    r: Callable
    rho: PiecewisePenalty
    m: int

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return (np.asarray(self.r(s), dtype=float) * self.rho(s)) ** (-1.0 / (2 * self.m))


def warp(rho: PiecewisePenalty, r: Callable, m: int, grid=None) -> WarpFunction:
    """Q(t) = int_0^t {r(s) rho(s)}^{-1/(2m)} ds on a grid.

    Penalty knots are merged into the grid, and each cell is integrated by
    Simpson's rule on a piece where rho is constant; constant r therefore
    gives the exact piecewise-linear Q.
    """
    m = _check_order(m)
    if grid is None:
        grid = np.linspace(0.0, 1.0, 2001)
    grid = np.union1d(np.asarray(grid, dtype=float), rho.tau)
    if grid[0] != 0.0:
        grid = np.concatenate(([0.0], grid))
    if np.any(grid < 0) or np.any(grid > 1):
        raise ValueError("warp grid must lie in [0, 1]")

    r_grid = np.asarray(r(grid), dtype=float) * np.ones_like(grid)
    if np.any(r_grid <= 0) or not np.all(np.isfinite(r_grid)):
        raise ValueError("r must be strictly positive on the grid")
    lo, hi = grid[:-1], grid[1:]
    mid = 0.5 * (lo + hi)
    # a cell (lo, hi] lies inside a single rho segment since knots are grid points
    rho_cell = rho(mid)
    r_mid = np.asarray(r(mid), dtype=float) * np.ones_like(mid)
    if np.any(r_mid <= 0):
        raise ValueError("r must be strictly positive on the grid")
    e = -1.0 / (2 * m)
    f_lo = (r_grid[:-1] * rho_cell) ** e
    f_hi = (r_grid[1:] * rho_cell) ** e
    f_mid = (r_mid * rho_cell) ** e
    cells = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    values = np.concatenate(([0.0], np.cumsum(cells)))
    if np.any(np.diff(values) <= 0):
        raise ValueError("warp is not strictly increasing; check r and rho")
    return WarpFunction(grid, values, r, rho, m)


def eval_J(t, s, beta: float, warp_fn: WarpFunction, m: int | None = None):
    """Leading-order kernel beta Q'(s) L(beta |Q(t) - Q(s)|)."""
    if m is None:
        m = warp_fn.m
    m = _check_order(m)
    if not beta > 0:
        raise ValueError("beta must be positive")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any((t < 0) | (t > 1)) or np.any((s < 0) | (s > 1)):
        raise ValueError("t and s must lie in [0, 1]")
    dq = np.abs(warp_fn(t) - warp_fn(s))
    return beta * warp_fn.derivative(s) * eval_L(m, beta * dq)
