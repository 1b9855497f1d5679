import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from adaspline.asymptotics import (
    TruthSpec,
    asymptotic_bias,
    asymptotic_report,
    asymptotic_variance,
    effective_bandwidth,
    empirical_bias_variance,
    hat_row,
    imse,
    pi_functional,
    verify_equivalent_kernel,
)
from adaspline.kernels import eval_L, kernel_L0
from adaspline.rkhs import PiecewisePenalty
from adaspline.solver import Design, PenalizedSystem, hat_matrix

ONE = PiecewisePenalty.uniform()


def sine_truth(**kw):
    return TruthSpec(lambda t: np.sin(2 * np.pi * t), **kw)


def smooth_penalty():
    return PiecewisePenalty(np.array([0.4]), np.array([1.0, 3.0]))


# ------------------------------------------------------------------ truth


def test_truth_validation():
    with pytest.raises(ValueError, match="integrates"):
        TruthSpec(np.sin, q=lambda t: 2.0 * np.ones_like(t))
    with pytest.raises(ValueError, match="positive"):
        TruthSpec(np.sin, q=lambda t: 2 * t)
    with pytest.raises(ValueError, match="sigma"):
        TruthSpec(np.sin, sigma=0.0)
    tr = TruthSpec(np.sin, sigma=lambda t: 0.5 + t, q=lambda t: 0.5 + t)
    assert tr.r(0.5) == pytest.approx(1.0)


# ------------------------------------------------------------------- bias


def test_bias_vanishes_for_low_degree_polynomial():
    for m in (1, 2, 3):
        tr = TruthSpec(lambda t: 1 + 2 * t ** (m - 1))
        # a sixth finite difference leaves round-off near 1e-3 of |f0|
        assert abs(asymptotic_bias(0.3, 1e-3, smooth_penalty(), tr, m)) <= 1e-2 * 1e-3


def test_bias_sine_m1_analytic():
    lam = 1e-3
    want = -4 * math.pi**2 * lam  # lam * f0''(1/4) with f0 = sin(2 pi t)
    assert asymptotic_bias(0.25, lam, ONE, sine_truth(), 1) == pytest.approx(want, rel=1e-6)
    exact = sine_truth(d2m=lambda t: -4 * math.pi**2 * np.sin(2 * np.pi * t))
    assert asymptotic_bias(0.25, lam, ONE, exact, 1) == pytest.approx(want, rel=1e-14)


def test_bias_m2_finite_differences_match_analytic():
    f4 = lambda t: 16 * math.pi**4 * np.sin(2 * np.pi * t)  # noqa: E731
    fd = asymptotic_bias(0.3, 1e-6, smooth_penalty(), sine_truth(sigma=0.5), 2)
    exact = asymptotic_bias(0.3, 1e-6, smooth_penalty(), sine_truth(sigma=0.5, d2m=f4), 2)
    assert fd == pytest.approx(exact, rel=1e-3)
    # m=2 carries the sign (-1)^(m-1) = -1 and the factor r rho
    assert exact == pytest.approx(-1e-6 * 0.25 * 16 * math.pi**4 * math.sin(0.6 * math.pi))


@given(st.floats(1e-8, 1e-1), st.floats(0.1, 10))
def test_bias_linear_in_lambda(lam, c):
    a = asymptotic_bias(0.3, lam, ONE, sine_truth(), 1)
    b = asymptotic_bias(0.3, c * lam, ONE, sine_truth(), 1)
    assert b == pytest.approx(c * a, rel=1e-12)


def test_bias_rejects_boundary_and_knots():
    with pytest.raises(ValueError, match="boundary"):
        asymptotic_bias(0.01, 1e-3, ONE, sine_truth(), 1)
    with pytest.raises(ValueError, match="knot"):
        asymptotic_bias(0.4, 1e-3, smooth_penalty(), sine_truth(), 1)


# --------------------------------------------------------------- variance


def test_variance_example():
    assert kernel_L0(1) == pytest.approx(0.25, abs=1e-12)
    v = asymptotic_variance(0.5, 100, 1e-4, ONE, sine_truth(), 1)
    assert v == pytest.approx(0.25, rel=1e-12)


def test_variance_scalings():
    for m in (1, 2, 3):
        v = asymptotic_variance(0.5, 100, 1e-6, ONE, sine_truth(), m)
        assert asymptotic_variance(0.5, 400, 1e-6, ONE, sine_truth(), m) == pytest.approx(v / 4)
        v2 = asymptotic_variance(0.5, 100, 1e-6, PiecewisePenalty.uniform(2.0), sine_truth(), m)
        assert v2 == pytest.approx(v * 2 ** (-1 / (2 * m)), rel=1e-12)


def test_report_mse_identity():
    rep = asymptotic_report(0.7, 200, 1e-4, smooth_penalty(), sine_truth(sigma=0.3), 2)
    assert rep.mse == rep.bias**2 + rep.variance
    assert rep.variance > 0
    assert rep.beta == pytest.approx(1e-4 ** (-1 / 4))


# -------------------------------------------------------------------- imse


@pytest.mark.parametrize("m", [1, 2])
def test_imse_lambda_rho_invariance(m):
    tr = sine_truth(sigma=lambda t: 0.4 + 0.2 * t)
    pen = smooth_penalty()
    for c in (0.3, 7.3):
        a = imse(1e-4, pen, tr, 300, m)
        b = imse(1e-4 / c, pen.scaled(c), tr, 300, m)
        assert b == pytest.approx(a, rel=1e-8)


def test_imse_variance_only_for_polynomial():
    tr = TruthSpec(lambda t: 1 + t, d2m=lambda t: np.zeros_like(t), sigma=0.5)
    m, n, lam = 2, 100, 1e-5
    var, _ = integrate.quad(lambda t: asymptotic_variance(t, n, lam, ONE, tr, m), 0.05, 0.95)
    # imse spans all of [0, 1]; the integrand is constant here
    assert imse(lam, ONE, tr, n, m) == pytest.approx(var / 0.9, rel=1e-10)


@pytest.mark.parametrize("m", [1, 2])
def test_imse_optimal_lambda_rate(m):
    # f0^(2m) = c with c^2 = L0 / (4m) * 4 puts the minimiser at
    # 4^(-2m/(4m+1)) n^(-2m/(4m+1)).
    c = math.sqrt(kernel_L0(m) / (4 * m) * 4)
    tr = TruthSpec(
        lambda t: c * t ** (2 * m) / math.factorial(2 * m), d2m=lambda t: c * np.ones_like(t)
    )
    n = 500
    grid = np.logspace(-10, 0, 401)
    vals = [imse(lam, ONE, tr, n, m) for lam in grid]
    lam_star = grid[int(np.argmin(vals))]
    rate = n ** (-2 * m / (4 * m + 1))
    assert rate / 3 <= lam_star <= 3 * rate


# ------------------------------------------------------------------ Pi


def test_pi_constant_f2m():
    c, m, rho = 2.0, 2, 3.0
    tr = TruthSpec(lambda t: c * t**4 / 24, d2m=lambda t: c * np.ones_like(t), sigma=0.5)
    r = 0.25
    want = rho**2 * c**2 * r**2 + rho ** (-1 / 4) * kernel_L0(m) * r ** (1 - 1 / 4)
    assert pi_functional(PiecewisePenalty.uniform(rho), tr, m) == pytest.approx(want, rel=1e-12)


def closed_form_rho(tr, knots, m):
    """Segment values from quad integrals, independent of the adapt module."""
    L0 = kernel_L0(m)
    breaks = np.concatenate(([0.0], knots, [1.0]))
    out = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        A = integrate.quad(lambda t: tr.r(t) ** 2 * tr.d2m(t) ** 2, a, b)[0]
        C = integrate.quad(lambda t: tr.r(t) ** (1 - 1 / (2 * m)), a, b)[0]
        out.append((L0 * C / (4 * m * A)) ** (2 * m / (4 * m + 1)))
    return np.array(out)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_pi_argmin_property(seed, m):
    rng = np.random.default_rng(seed)
    a, b, s0 = rng.uniform(0.5, 2), rng.uniform(0.5, 3), rng.uniform(0.2, 0.6)
    tr = TruthSpec(
        np.sin,
        sigma=lambda t: s0 + 0.3 * t,
        d2m=lambda t: a + b * np.cos(3 * t),
    )
    knots = np.sort(rng.uniform(0.15, 0.85, 2))
    if np.diff(knots)[0] < 0.05:
        knots = np.array([0.3, 0.7])
    rho = closed_form_rho(tr, knots, m)
    base = pi_functional(PiecewisePenalty(knots, rho), tr, m)
    for j in range(rho.size):
        for f in (0.8, 1.25):
            v = rho.copy()
            v[j] *= f
            assert pi_functional(PiecewisePenalty(knots, v), tr, m) > base


def test_pi_decreases_where_f2m_vanishes():
    tr = TruthSpec(
        np.sin, d2m=lambda t: np.where(np.asarray(t) <= 0.5, 0.0, 1.0), sigma=0.5
    )
    vals = [
        pi_functional(PiecewisePenalty(np.array([0.5]), np.array([rho, 1.0])), tr, 2)
        for rho in (1.0, 10.0, 100.0, 1e4)
    ]
    assert np.all(np.diff(vals) < 0)


# --------------------------------------------------------- kernel checks


def test_hat_row_matches_hat_matrix(rng):
    t = np.sort(rng.uniform(0, 1, 40))
    d = Design(t, rng.standard_normal(40), 1 / (0.3 + t) ** 2)
    pen = smooth_penalty()
    A = hat_matrix(d, pen, 2, 1e-4)
    sys = PenalizedSystem(d, pen, 2)
    for i in (0, 17, 39):
        np.testing.assert_allclose(hat_row(sys, 1e-4, i), A[i], atol=1e-10)


def equispaced(n):
    t = np.arange(1, n + 1) / n
    return Design(t, np.zeros(n))


def test_kernel_matches_classical_kernel():
    n, lam = 500, 1e-5
    chk = verify_equivalent_kernel(equispaced(n), lam, ONE, 2, 0.5)
    beta = lam ** (-1 / 4)
    oracle = beta * eval_L(2, beta * (equispaced(n).t - chk.t_star)) / n
    np.testing.assert_allclose(chk.kernel_weights, oracle, rtol=1e-10, atol=1e-14)
    # regression value: 0.00356 at the first build
    assert chk.discrepancy <= 0.005
    assert not chk.regime_warning


def test_kernel_discrepancy_decreases_with_n():
    disc = [verify_equivalent_kernel(equispaced(n), 1e-5, ONE, 2, 0.5).discrepancy for n in (200, 500, 1000)]
    assert disc[0] > disc[1] > disc[2]


def test_kernel_regime_warning():
    with pytest.warns(UserWarning, match="asymptotic regime"):
        chk = verify_equivalent_kernel(equispaced(100), 0.1, ONE, 2, 0.5)
    assert chk.regime_warning


def test_kernel_bandwidth_ratio_two_segments():
    pen = PiecewisePenalty(np.array([0.5]), np.array([1.0, 16.0]))
    d = equispaced(500)
    left = verify_equivalent_kernel(d, 1e-4, pen, 1, 0.25)
    right = verify_equivalent_kernel(d, 1e-4, pen, 1, 0.75)
    hl = effective_bandwidth(left.hat_weights, d.t, left.t_star)
    hr = effective_bandwidth(right.hat_weights, d.t, right.t_star)
    assert hr / hl == pytest.approx(4.0, rel=0.3)


def test_effective_bandwidth_gaussian():
    t = np.linspace(-1, 1, 4001)
    w = np.exp(-0.5 * (t / 0.1) ** 2)
    assert effective_bandwidth(w, t, 0.0) == pytest.approx(0.1, rel=1e-6)


# ------------------------------------------------------------ Monte Carlo


def test_empirical_linear_truth_unbiased():
    tr = TruthSpec(lambda t: 1 + 2 * t, sigma=0.5)
    rep = empirical_bias_variance(tr, ONE, 2, 1e-4, 200, 400, seed=7, t0=0.4)
    assert abs(rep.bias) <= 2 * rep.bias_se


def test_empirical_variance_matches_formula():
    tr = sine_truth(sigma=0.5)
    rep = empirical_bias_variance(tr, ONE, 1, 1e-3, 500, 500, seed=3, t0=0.25)
    v = asymptotic_variance(0.25, 500, 1e-3, ONE, tr, 1)
    assert 0.5 <= rep.variance / v <= 2.0


def test_empirical_bias_sign():
    tr = sine_truth(sigma=0.5)
    rep = empirical_bias_variance(tr, ONE, 1, 1e-3, 500, 500, seed=3, t0=0.25)
    assert np.sign(rep.bias) == np.sign(asymptotic_bias(0.25, 1e-3, ONE, tr, 1)) == -1


def test_empirical_reproducible_and_guarded():
    tr = sine_truth(sigma=0.5)
    a = empirical_bias_variance(tr, ONE, 1, 1e-3, 100, 100, seed=1, t0=0.5)
    b = empirical_bias_variance(tr, ONE, 1, 1e-3, 100, 100, seed=1, t0=0.5)
    assert a == b
    with pytest.raises(ValueError):
        empirical_bias_variance(tr, ONE, 1, 1e-3, 100, 50, seed=1, t0=0.5)
