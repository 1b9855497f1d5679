import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from adaspline.kernels import (
    adequate_half_width,
    eval_J,
    eval_L,
    kernel_L0,
    kernel_moment,
    kernel_spec,
    TruncationWarning,
    tail_bound,
    warp,
)
from adaspline.rkhs import PiecewisePenalty


def one(s):
    return np.ones_like(np.asarray(s, dtype=float))


# Fourier transform of L is 1/(1 + w^(2m)); by Parseval
# int L^2 = (1/pi) int_0^inf (1 + w^(2m))^(-2) dw. Independent of the
# time-domain formulas.
def l0_fourier(m):
    val, _ = integrate.quad(lambda w: (1 + w ** (2 * m)) ** -2, 0, np.inf, epsabs=1e-14)
    return val / math.pi


def test_values_at_origin():
    assert eval_L(1, 0.0) == 0.5
    assert eval_L(2, 0.0) == pytest.approx(2**-1.5, abs=1e-15)
    assert eval_L(1, math.log(2)) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_L_at_zero_matches_fourier_inverse(m):
    # L(0) = (1/pi) int_0^inf dw / (1 + w^(2m))
    val, _ = integrate.quad(lambda w: 1 / (1 + w ** (2 * m)), 0, np.inf)
    assert eval_L(m, 0.0) == pytest.approx(val / math.pi, rel=1e-9)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_L_matches_inverse_fourier_transform(m):
    # L(t) = (1/pi) int_0^inf cos(w t) / (1 + w^(2m)) dw
    for t in (0.3, 1.7, 4.0):
        val, _ = integrate.quad(lambda w: 1 / (1 + w ** (2 * m)), 0, np.inf, weight="cos", wvar=t)
        assert eval_L(m, t) == pytest.approx(val / math.pi, abs=1e-9)


@pytest.mark.parametrize("m", [0, 5, 2.5])
def test_out_of_range_order(m):
    with pytest.raises(ValueError):
        eval_L(m, 0.1)
    with pytest.raises(ValueError):
        kernel_L0(m)


@given(st.integers(1, 4), st.floats(-50, 50, allow_nan=False))
def test_even(m, t):
    assert eval_L(m, t) == eval_L(m, -t)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_L0_two_schemes(m):
    assert kernel_L0(m) == pytest.approx(l0_fourier(m), abs=1e-8)
    assert kernel_spec(m).L0 == kernel_L0(m)


def test_L0_m1_exact():
    assert abs(kernel_L0(1) - 0.25) <= 1e-12


def test_moments_low_order():
    assert kernel_moment(1, 0) == pytest.approx(1.0, abs=1e-12)
    assert kernel_moment(2, 1) == 0.0
    assert abs(kernel_moment(2, 2, half_width=60)) <= 1e-12


def test_moment_against_adaptive_quadrature():
    for m, k, H in [(2, 2, 30.0), (3, 4, 40.0), (4, 2, 25.0)]:
        ref = 2 * integrate.quad(lambda x: x**k * eval_L(m, x), 0, H, limit=500, epsabs=1e-13)[0]
        with pytest.warns(TruncationWarning):
            got = kernel_moment(m, k, half_width=H)
        assert got == pytest.approx(ref, abs=1e-11)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_first_nonzero_moment(m):
    # mu_2m = (-1)^(m+1) (2m)! from the Taylor expansion of 1/(1 + w^(2m))
    H = adequate_half_width(m, 2 * m)
    want = (-1) ** (m + 1) * math.factorial(2 * m)
    assert kernel_moment(m, 2 * m, half_width=H) == pytest.approx(want, rel=1e-8)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_vanishing_moments_at_adequate_width(m):
    for k in range(1, 2 * m):
        H = adequate_half_width(m, k)
        assert abs(kernel_moment(m, k, half_width=H)) <= 1e-6


def test_moment_guard_on_short_window():
    with pytest.warns(TruncationWarning, match="half_width"):
        kernel_moment(4, 4, half_width=40)
    with pytest.raises(ValueError, match="half_width"):
        kernel_moment(4, 4, half_width=40, strict=True)


def test_tail_bound_dominates_actual_tail():
    for m, k, H in [(2, 2, 10.0), (3, 2, 15.0), (4, 3, 20.0)]:
        tail, _ = integrate.quad(lambda x: abs(x**k * eval_L(m, x)), H, np.inf, limit=500)
        assert 2 * tail <= tail_bound(m, k, H)


def test_warp_identity_and_power():
    w = warp(PiecewisePenalty.uniform(), one, 2)
    np.testing.assert_allclose(w(w.grid), w.grid, atol=1e-14)
    for m in (1, 2, 3):
        w = warp(PiecewisePenalty.uniform(2.0 ** (2 * m)), one, m)
        np.testing.assert_allclose(w(w.grid), w.grid / 2, atol=1e-14)


def test_warp_piecewise_slopes():
    pen = PiecewisePenalty(np.array([0.3, 0.7]), np.array([1.0, 16.0, 81.0]))
    w = warp(pen, one, 2)
    slopes = np.array([1.0, 0.5, 1 / 3])
    breaks = pen.breaks
    q_knots = np.concatenate(([0.0], np.cumsum(slopes * np.diff(breaks))))
    x = np.linspace(0, 1, 57)
    j = pen.segment_index(x)
    expect = q_knots[j] + slopes[j] * (x - breaks[j])
    np.testing.assert_allclose(w(x), expect, atol=1e-13)
    assert np.all(np.diff(w.values) > 0)
    assert w.values[0] == 0.0


def test_warp_rejects_nonpositive_r():
    with pytest.raises(ValueError):
        warp(PiecewisePenalty.uniform(), lambda s: np.asarray(s) - 0.5, 1)


@given(
    st.integers(1, 4),
    st.floats(0.5, 100),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_J_reduces_to_stationary_kernel(m, beta, t, s):
    w = warp(PiecewisePenalty.uniform(), one, m)
    got = eval_J(t, s, beta, w)
    assert got == pytest.approx(beta * eval_L(m, beta * (t - s)), rel=1e-12, abs=1e-300)


def test_J_examples():
    w = warp(PiecewisePenalty.uniform(), one, 1)
    assert eval_J(0.5, 0.6, 10.0, w) == pytest.approx(10 * 0.5 * math.exp(-1), rel=1e-12)
    pen = PiecewisePenalty(np.array([0.5]), np.array([1.0, 4.0]))
    w = warp(pen, one, 1)
    assert eval_J(0.8, 0.8, 7.0, w) == pytest.approx(7.0 * 0.5 * 0.5)
    with pytest.raises(ValueError):
        eval_J(0.5, 0.5, 0.0, w)
    with pytest.raises(ValueError):
        eval_J(1.5, 0.5, 1.0, w)
