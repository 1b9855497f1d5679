"""Small smoothing helpers: rule-of-thumb bandwidths, local-linear fits, KDEs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Curve:
    """A function tabulated on an increasing grid; linear in between."""

    grid: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)


def rule_of_thumb(x) -> float:
    """1.06 sd(x) n^{-1/5}."""
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def gauss(u):
    return np.exp(-0.5 * u * u) / _SQRT2PI


def local_linear(x, y, at, bandwidth: float):
    """Local-linear regression of y on x with a Gaussian kernel."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    at = np.asarray(at, dtype=float)
    dx = x[None, :] - at[:, None]
    k = gauss(dx / bandwidth)
    s0 = k.sum(axis=1)
    s1 = (k * dx).sum(axis=1)
    s2 = (k * dx * dx).sum(axis=1)
    t0 = k @ y
    t1 = (k * dx) @ y
    den = s0 * s2 - s1 * s1
    # fall back to Nadaraya-Watson where the local design is degenerate
    safe = den > 1e-12 * np.maximum(s0 * s2, np.finfo(float).tiny)
    nw = t0 / s0
    return np.where(safe, (s2 * t0 - s1 * t1) / np.where(safe, den, 1.0), nw)


def reflected_kde(x, at, bandwidth: float | None = None, lo=0.0, hi=1.0):
    """Gaussian KDE on [lo, hi] with reflection at both ends."""
    x = np.asarray(x, dtype=float)
    at = np.asarray(at, dtype=float)
    h = rule_of_thumb(x) if bandwidth is None else bandwidth
    pts = np.concatenate((x, 2 * lo - x, 2 * hi - x))
    dens = gauss((at[:, None] - pts[None, :]) / h).sum(axis=1) / (x.size * h)
    return dens


def is_equispaced(t, tol: float = 0.1) -> bool:
    gaps = np.diff(np.asarray(t, dtype=float))
    if gaps.size == 0:
        return True
    mean = gaps.mean()
    return bool(np.max(np.abs(gaps - mean)) < tol * mean)
