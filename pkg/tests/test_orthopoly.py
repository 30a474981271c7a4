"""Legendre/Jacobi kernels, weighted integrals and fractional seminorms."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly
from scipy.special import eval_jacobi

from crinfsup import orthopoly as op
from crinfsup.errors import ValidationError, VertexMismatch, WeightedSeminormUndefined


def _monomial(p: op.Poly1D) -> np.ndarray:
    return npleg.leg2poly(p.coef)


def _h12_oracle(p: op.Poly1D, npts: int = 40) -> float:
    """Tensor Gauss rule with the diagonal of the quotient replaced by p'."""
    x, w = npleg.leggauss(npts)
    mono = _monomial(p)
    fx = nppoly.polyval(x, mono)
    dfx = nppoly.polyval(x, nppoly.polyder(mono))
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    quot = (fx[:, None] - fx[None, :]) / diff
    np.fill_diagonal(quot, dfx)
    return float(w @ quot**2 @ w)


def _left_oracle(p: op.Poly1D) -> float:
    """Integral of p^2/(1+s) via monomial long division."""
    mono = _monomial(p)
    q, r = nppoly.polydiv(nppoly.polymul(mono, mono), [1.0, 1.0])
    assert abs(r[0]) < 1e-8 * max(1.0, np.abs(mono).max() ** 2)
    integ = nppoly.polyint(q)
    return float(nppoly.polyval(1.0, integ) - nppoly.polyval(-1.0, integ))


# ---------------------------------------------------------------------------
# Recurrences
# ---------------------------------------------------------------------------


def test_legendre_examples():
    assert op.legendre_eval(2, 0.0)[0] == pytest.approx(-0.5)
    assert op.legendre_eval(0, 0.73) == (1.0, 0.0)
    assert op.legendre_eval(2, 1.0)[1] == pytest.approx(3.0)


@pytest.mark.parametrize("k", range(41))
def test_legendre_endpoint_identities(k):
    for s in (-1.0, 1.0):
        val, der = op.legendre_eval(k, s)
        assert abs(val - s**k) <= 1e-12
        exact = s ** (k + 1) * math.comb(k + 1, 2)
        assert abs(der - exact) <= 1e-9 * max(math.comb(k + 1, 2), 1)


@given(k=st.integers(0, 40), x=st.floats(-1, 1))
def test_legendre_matches_numpy(k, x):
    c = np.zeros(k + 1)
    c[k] = 1
    val, der = op.legendre_eval(k, x)
    assert val == pytest.approx(npleg.legval(x, c), abs=1e-11)
    assert der == pytest.approx(npleg.legval(x, npleg.legder(c)), abs=1e-9 * (1 + k * k))


def test_legendre_orthogonality():
    x, w = npleg.leggauss(32)
    vals, _ = op.legendre_table(30, x)
    gram = (vals * w) @ vals.T
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() <= 1e-12
    assert np.allclose(np.diag(gram), 2.0 / (2 * np.arange(31) + 1), rtol=1e-13)


@pytest.mark.parametrize("k", [1, 4, 11, 25])
def test_times_one_plus_identity(k):
    t = np.linspace(-1, 1, 100)
    val = lambda n: op.legendre_eval(n, t)[0]
    lhs = (t + 1) * val(k)
    rhs = (k + 1) / (2 * k + 1) * val(k + 1) + val(k) + k / (2 * k + 1) * val(k - 1)
    assert np.abs(lhs - rhs).max() <= 1e-12
    assert np.abs(op.times_one_plus(op.Poly1D.legendre(k))(t) - lhs).max() <= 1e-12


def test_jacobi_examples():
    assert op.jacobi33_eval(0, 0.4) == 1.0
    assert op.jacobi33_eval(1, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert op.jacobi33_eval(2, 1.0) == pytest.approx(10.0)


@given(n=st.integers(0, 25), x=st.floats(-1, 1))
def test_jacobi_matches_scipy(n, x):
    assert op.jacobi33_eval(n, x) == pytest.approx(eval_jacobi(n, 3, 3, x), rel=1e-10, abs=1e-10)


def test_negative_degree_rejected():
    with pytest.raises(ValidationError):
        op.legendre_eval(-1, 0.0)
    with pytest.raises(ValidationError):
        op.weighted_l2_integral(-2)


# ---------------------------------------------------------------------------
# Endpoint bubbles and the slope-corrected Legendre polynomial
# ---------------------------------------------------------------------------


def _fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("k", [5, 7, 9, 15])
def test_psi_bubble_endpoint_conditions(k):
    minus = op.psi_bubble_poly(k, "-")
    plus = op.psi_bubble_poly(k, "+")
    for p in (minus, plus):
        assert abs(p(1.0)) < 1e-12 and abs(p(-1.0)) < 1e-12
    assert minus.deriv()(-1.0) == pytest.approx(1.0, abs=1e-10)
    assert minus.deriv()(1.0) == pytest.approx(0.0, abs=1e-10)
    assert plus.deriv()(1.0) == pytest.approx(1.0, abs=1e-10)
    assert plus.deriv()(-1.0) == pytest.approx(0.0, abs=1e-10)
    # finite-difference cross-check of the unit slope
    assert _fd(lambda s: op.psi_bubble(k, "-", s), -1.0) == pytest.approx(1.0, abs=1e-6)


def test_psi_bubble_reflection():
    xs = np.linspace(-1, 1, 23)
    assert np.allclose(op.psi_bubble(5, "+", xs), -op.psi_bubble(5, "-", -xs), atol=1e-14)


@pytest.mark.parametrize("k", [5, 7, 13])
def test_phi_tilde_endpoints(k):
    assert op.phi_tilde(k, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert op.phi_tilde(k, -1.0) == pytest.approx(1.0, abs=1e-12)
    for s in (-1.0, 1.0):
        assert abs(_fd(lambda x: op.phi_tilde(k, x), s)) < 1e-6


@pytest.mark.parametrize("k", [3, 4, 6])
def test_bubbles_reject_bad_degree(k):
    with pytest.raises(ValidationError):
        op.psi_bubble(k, "-", 0.0)
    with pytest.raises(ValidationError):
        op.phi_tilde(k, 0.0)


# ---------------------------------------------------------------------------
# Weighted integrals and seminorms
# ---------------------------------------------------------------------------


def test_weighted_integral_examples():
    assert op.weighted_l2_integral(0) == pytest.approx(2.0)
    assert op.weighted_l2_integral(1) == pytest.approx(2 / 3)
    assert op.weighted_l2_integral(7) == pytest.approx(2 / 15)
    assert op.weighted_h1_integral(0) == 0.0
    assert op.weighted_h1_integral(1) == pytest.approx(2.0)
    assert op.weighted_h1_integral(6) == pytest.approx(42.0)


def test_h12_examples():
    assert op.legendre_h12_seminorm_sq(0) == 0.0
    assert op.legendre_h12_seminorm_sq(1) == pytest.approx(4.0)
    assert op.legendre_h12_seminorm_sq(2) == pytest.approx(6.0)


@pytest.mark.parametrize("k", [1, 3, 8, 17])
def test_h12_against_quadrature_oracle(k):
    assert op.legendre_h12_seminorm_sq(k) == pytest.approx(_h12_oracle(op.Poly1D.legendre(k)), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=1, max_size=9))
def test_h12_random_polynomials(coef):
    p = op.Poly1D(coef)
    assert op.h12_seminorm_sq(p) == pytest.approx(_h12_oracle(p), rel=1e-9, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=1, max_size=9))
def test_left_seminorm_random(coef):
    # multiply rather than subtract p(-1): cancellation could leave a tiny
    # polynomial that does not vanish at -1 relative to its own size
    p = op.times_one_plus(op.Poly1D(coef))
    assert op.weighted_seminorm_left_sq(p) == pytest.approx(_left_oracle(p), rel=1e-8, abs=1e-9)


def test_difference_quotient_is_polynomial_quotient():
    p = op.Poly1D([0.3, -1.0, 2.0, 0.5, -0.25])
    C = op.difference_quotient(p)
    x, y = 0.37, -0.81
    vx = op.legendre_table(C.shape[0] - 1, x)[0]
    vy = op.legendre_table(C.shape[0] - 1, y)[0]
    assert vx @ C @ vy == pytest.approx((p(x) - p(y)) / (x - y), rel=1e-13)


def test_interval_half_norms_examples():
    one_plus = op.Poly1D([1.0, 1.0])
    assert op.interval_half_norms(one_plus).seminorm_left ** 2 == pytest.approx(2.0)
    zero = op.interval_half_norms(op.Poly1D([0.0]))
    assert (zero.seminorm_h12, zero.seminorm_left, zero.seminorm_right, zero.seminorm_00) == (0.0, 0.0, 0.0, 0.0)
    for k in (1, 2, 5, 12):
        p = op.Poly1D.legendre(k) + op.Poly1D.legendre(k - 1)
        assert op.interval_half_norms(p).seminorm_left ** 2 == pytest.approx(2.0 / k, rel=1e-10)


def test_seminorm_00_is_pythagorean():
    p = op.Poly1D.from_monomial([1.0, 0.0, -1.0]) * op.Poly1D([0.2, 1.0, 0.3])
    h = op.interval_half_norms(p)
    assert h.seminorm_00**2 == pytest.approx(h.seminorm_left**2 + h.seminorm_right**2, rel=1e-13)


def test_weighted_seminorm_undefined():
    p = op.Poly1D([1.0, 0.5])
    assert op.interval_half_norms(p).seminorm_left is None
    with pytest.raises(WeightedSeminormUndefined):
        op.interval_half_norms(p, strict=True)


@pytest.mark.parametrize("k", [1, 5, 30])
def test_recursions(k):
    assert op.h12_recursion_sequence(30)[k] == pytest.approx(op.harmonic_closed_form(k), rel=1e-12)
    assert op.weighted_sum_recursion_sequence(30)[k] == pytest.approx(2.0 / k, rel=1e-12)


# ---------------------------------------------------------------------------
# Boundary norm of a triangle trace
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [2, 4, 8])
def test_triple_norm_even_legendre(k):
    L = op.Poly1D.legendre(k)
    assert all(d.is_zero() for d in op.trace_differences([L, L, L]))
    expected = math.sqrt(3 * op.h12_norm_sq(L))
    assert op.boundary_triple_norm([L, L, L]) == pytest.approx(expected, rel=1e-13)


def test_triple_norm_zero_and_mismatch():
    z = op.Poly1D([0.0])
    assert op.boundary_triple_norm([z, z, z]) == 0.0
    with pytest.raises(VertexMismatch):
        op.boundary_triple_norm([op.Poly1D([1.0]), z, z])
    with pytest.raises(ValidationError):
        op.trace_differences([z, z])


def test_triple_norm_of_modified_edge_bubble_traces():
    # slope-corrected trace on edge 0, Legendre traces running from +1 at the
    # edge-0 endpoints to -1 at the opposite vertex on the two other edges
    k = 5
    phi = op.phi_tilde_poly(k)
    L = op.Poly1D.legendre(k)
    traces = [phi, L.reflect(), L]
    value = op.boundary_triple_norm(traces)
    assert value <= 10 * math.sqrt(math.log(k + 1))
