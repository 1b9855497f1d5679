"""Reproducing kernel for a piecewise-constant roughness penalty.

The penalized subspace of W_2^m (functions with f^(j)(0) = 0 for j < m)
carries the inner product ``<f, g> = int_0^1 rho(u) f^(m)(u) g^(m)(u) du``.
Its reproducing kernel is

    K(s, t) = int_0^1 rho(u)^{-1} G_m(s, u) G_m(t, u) du,
    G_m(x, u) = (x - u)_+^{m-1} / (m-1)!

For piecewise-constant rho the integrand is a polynomial in u on every
segment, so everything here is evaluated with exact antiderivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

__all__ = [
    "PiecewisePenalty",
    "GramContext",
    "null_basis",
    "null_basis_matrix",
    "k_rho",
    "k_rho_deriv",
    "gram_matrix",
    "cross_gram",
]


@dataclass(frozen=True)
class PiecewisePenalty:
    """Step function rho(t) = values[j] on (tau[j-1], tau[j]].

    ``tau`` are the interior knots, strictly inside (0, 1); there are
    ``len(tau) + 1`` segment values. The first segment is closed at 0.
    ``gamma`` records the power-up exponent that produced the values and
    is informational only.
    """

    tau: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.ones(1))
    gamma: float = 1.0

    def __post_init__(self):
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if tau.ndim != 1 or values.ndim != 1:
            raise ValueError("tau and values must be one-dimensional")
        if values.size != tau.size + 1:
            raise ValueError(
                f"need len(values) == len(tau) + 1, got {values.size} and {tau.size}"
            )
        if tau.size and (tau[0] <= 0.0 or tau[-1] >= 1.0):
            raise ValueError("knots must lie strictly inside (0, 1)")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("penalty values must be finite and strictly positive")
        if not self.gamma >= 1.0:
            raise ValueError("gamma must be >= 1")
        tau.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def uniform(cls, value: float = 1.0) -> "PiecewisePenalty":
        return cls(np.empty(0), np.array([value]))

    @property
    def n_segments(self) -> int:
        return self.values.size

    @property
    def breaks(self) -> np.ndarray:
        """Segment boundaries including 0 and 1."""
        return np.concatenate(([0.0], self.tau, [1.0]))

    def segment_index(self, t) -> np.ndarray:
        # (tau_{j-1}, tau_j] convention: t == tau_j belongs to segment j
        return np.searchsorted(self.tau, np.asarray(t, dtype=float), side="left")

    def __call__(self, t) -> np.ndarray:
        return self.values[self.segment_index(t)]

    def scaled(self, c: float) -> "PiecewisePenalty":
        return PiecewisePenalty(self.tau, self.values * c, self.gamma)

    def is_uniform(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def to_dict(self) -> dict:
        return {
            "knots": self.tau.tolist(),
            "values": self.values.tolist(),
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewisePenalty":
        allowed = {"knots", "values", "gamma"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown penalty keys: {sorted(unknown)}")
        if "values" not in data:
            raise ValueError("penalty needs 'values'")
        return cls(
            np.asarray(data.get("knots", []), dtype=float),
            np.asarray(data["values"], dtype=float),
            data.get("gamma", 1.0),
        )

    def __eq__(self, other):
        if not isinstance(other, PiecewisePenalty):
            return NotImplemented
        return (
            np.array_equal(self.tau, other.tau)
            and np.array_equal(self.values, other.values)
            and self.gamma == other.gamma
        )

    def __hash__(self):
        return hash((self.tau.tobytes(), self.values.tobytes(), self.gamma))


def null_basis(m: int, t: float) -> np.ndarray:
    """(1, t, t^2/2!, ..., t^{m-1}/(m-1)!)."""
    return np.array([t**j / factorial(j) for j in range(m)], dtype=float)


def null_basis_matrix(m: int, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.stack([t**j / factorial(j) for j in range(m)], axis=-1)


def _power_product_integral(x, d, v_lo, v_hi, px: int, py: int):
    """int_{v_lo}^{v_hi} v^px (d + v)^py dv, with x - u = v substituted.

    All terms of the binomial expansion are nonnegative for v, d >= 0,
    so there is no cancellation beyond the final endpoint difference.
    """
    total = 0.0
    for k in range(py + 1):
        e = px + k + 1
        total = total + comb(py, k) * d ** (py - k) * (v_hi**e - v_lo**e) / e
    return total


def _kernel_integral(s, t, penalty: PiecewisePenalty, ps: int, pt: int):
    """int_0^{min(s,t)} rho(u)^{-1} (s-u)^ps (t-u)^pt du  (no factorials).

    Vectorised over broadcastable s and t.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    s, t = np.broadcast_arrays(s, t)
    x = np.minimum(s, t)
    d = np.abs(s - t)
    s_is_min = s <= t
    breaks = penalty.breaks
    out = np.zeros(x.shape)
    for j, rho_j in enumerate(penalty.values):
        a, b = breaks[j], breaks[j + 1]
        c = np.minimum(b, x)
        active = c > a
        if not np.any(active):
            continue
        v_lo = np.where(active, x - c, 0.0)
        v_hi = np.where(active, x - a, 0.0)
        if ps == pt:
            seg = _power_product_integral(x, d, v_lo, v_hi, ps, pt)
        else:
            seg = np.where(
                s_is_min,
                _power_product_integral(x, d, v_lo, v_hi, ps, pt),
                _power_product_integral(x, d, v_lo, v_hi, pt, ps),
            )
        out = out + np.where(active, seg, 0.0) / rho_j
    return out


def k_rho(s, t, penalty: PiecewisePenalty, m: int):
    """Closed-form K_rho(s, t); vectorised over broadcastable s, t."""
    _check_order(m)
    f = factorial(m - 1)
    return _kernel_integral(s, t, penalty, m - 1, m - 1) / (f * f)


def _at_kink(s, t, penalty):
    return bool(np.any(s == t) or np.any(np.isin(t, penalty.tau)))


def k_rho_deriv(s, t, penalty: PiecewisePenalty, m: int, order_t: int):
    """Exact d^order_t/dt^order_t K_rho(s, t).

    Orders below m differentiate G_m(t, u) under the integral. From order
    m on, d^m/dt^m K(s, t) = rho(t)^{-1} G_m(s, t), which is differentiated
    piecewise. At t == s the one-sided convention (s - t)_+^0 = 0 is used,
    and rho(t) follows the segment convention of ``PiecewisePenalty``.
    """
    _check_order(m)
    if order_t < 0:
        raise ValueError("derivative order must be nonnegative")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if order_t >= 2 * m:
        if _at_kink(s, t, penalty):
            raise ValueError(
                f"derivative of order {order_t} >= 2m is undefined at a kink"
            )
        return np.zeros(np.broadcast(s, t).shape)
    if order_t < m:
        q = m - 1 - order_t
        return _kernel_integral(s, t, penalty, m - 1, q) / (
            factorial(m - 1) * factorial(q)
        )
    k = order_t - m
    p = m - 1 - k
    diff = s - t
    if p == 0:
        base = (diff > 0).astype(float)
    else:
        base = np.where(diff > 0, diff, 0.0) ** p / factorial(p)
    return (-1) ** k * base / penalty(t)


@dataclass(frozen=True)
class GramContext:
    t: np.ndarray
    penalty: PiecewisePenalty
    m: int
    gram: np.ndarray
    null_basis_matrix: np.ndarray


def gram_matrix(t, penalty: PiecewisePenalty, m: int) -> GramContext:
    """Gram matrix K_rho(t_i, t_j) and null-space design T_ij = phi_j(t_i)."""
    _check_order(m)
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("abscissae must be a nonempty 1-d array")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("abscissae must lie in [0, 1]")
    if np.any(np.diff(t) < 0):
        raise ValueError("abscissae must be sorted")
    dup = np.flatnonzero(np.diff(t) == 0)
    if dup.size:
        raise ValueError(
            f"duplicate abscissae at positions {dup.tolist()}; pre-bin the data"
        )
    n = t.size
    iu, ju = np.triu_indices(n)
    upper = k_rho(t[iu], t[ju], penalty, m)
    gram = np.empty((n, n))
    gram[iu, ju] = upper
    gram[ju, iu] = upper
    T = null_basis_matrix(m, t)
    t = t.copy()
    for a in (t, gram, T):
        a.setflags(write=False)
    return GramContext(t, penalty, m, gram, T)


def cross_gram(tnew, t, penalty: PiecewisePenalty, m: int, order: int = 0):
    """Matrix of d^order/dx^order K_rho(t_j, x) at x = tnew[i]."""
    tnew = np.asarray(tnew, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    if order == 0:
        return k_rho(t, tnew, penalty, m)
    return k_rho_deriv(t, tnew, penalty, m, order)


def _check_order(m):
    if int(m) != m or m < 1:
        raise ValueError(f"penalty order must be a positive integer, got {m}")
