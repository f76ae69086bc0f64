import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from gfflab.continuum import RdQuadrature, continuum_rd_covariance, continuum_torus_covariance
from gfflab.gaussian import Stiffness
from gfflab.testfunctions import (
    available_test_functions,
    bump,
    from_sympy,
    gradient_bump,
    make_test_function,
    single_mode,
    smooth_torus_field,
)

# sum over k of |k . f^(k)|^2 / |k|^2 with the exact coefficients
# f^_0(k) = (-i)^k0 I_k0(1) / 2 at k1 = +-1 and f^_1 = +-1/(2i) at +-(1, -1); 81x81 modes
SMOOTH_TORUS_D2 = 0.142314215935467
# 2 pi int_0^{1/2} |b'(r)|^2 r dr, 30-digit adaptive quadrature
GRAD_BUMP_D2 = 0.850336663175272657
# J = b e_0 at 0 and at (3, 0): real-space midpoint rule (128^2 nodes per window) against -log|x| / 2 pi
SEPARATED_BUMPS_D2 = -0.00024053817435295988

X0, X1 = sp.symbols("x0 x1", real=True)


def test_registry():
    names = available_test_functions()
    assert {"smooth-torus", "single-mode", "zero", "bump", "bump-e0", "grad-bump"} <= set(names)
    with pytest.raises(ValueError, match="available"):
        make_test_function("nope", 2)


def test_derivatives_match_finite_differences():
    f = smooth_torus_field(2)
    x = np.array([[0.13, -0.31], [0.27, 0.44]])
    h = 1e-6
    d0 = f.derivative((1, 0))(x)
    fd = (f(x + [[h], [0]]) - f(x - [[h], [0]])) / (2 * h)
    np.testing.assert_allclose(d0, fd, rtol=1e-6, atol=1e-8)
    d11 = f.derivative((1, 1))(x)
    e0, e1 = np.array([[h], [0]]), np.array([[0], [h]])
    fd11 = (f(x + e0 + e1) - f(x + e0 - e1) - f(x - e0 + e1) + f(x - e0 - e1)) / (4 * h * h)
    np.testing.assert_allclose(d11, fd11, rtol=1e-3, atol=1e-4)


def test_bump_support_and_scaling():
    b = bump(2, radius=0.4)
    pts = np.array([[0.0, 0.39, 0.41, 0.3], [0.0, 0.0, 0.0, 0.3]])
    v = b(pts)
    assert v[0] == pytest.approx(math.exp(-1))
    assert v[1] > 0 and v[2] == 0.0 and v[3] == 0.0
    assert b.scaled(3.0)(pts)[0] == pytest.approx(3 * math.exp(-1))
    assert b.scaled(3.0).derivative((2, 0))(pts)[0] == pytest.approx(3 * b.derivative((2, 0))(pts)[0])
    g = gradient_bump(2, center=[1.0, 0.0])
    assert g.center == (1.0, 0.0) and g.is_vector and not b.is_vector
    assert b.ck_norm(0, pts) == pytest.approx(math.exp(-1))


def test_torus_single_mode():
    assert continuum_torus_covariance(single_mode(2)) == pytest.approx(0.5, rel=1e-12)
    assert continuum_torus_covariance(single_mode(1), truncation=8) == pytest.approx(0.5, rel=1e-12)


def test_torus_divergence_free_and_zero():
    f = from_sympy([sp.sin(2 * sp.pi * X1) * sp.exp(sp.cos(2 * sp.pi * X1)), sp.cos(2 * sp.pi * X0)], 2)
    assert abs(continuum_torus_covariance(f)) < 1e-25
    assert continuum_torus_covariance(make_test_function("zero", 2)) == 0.0


def test_torus_closed_form_bessel():
    res = continuum_torus_covariance(smooth_torus_field(2), None, 64, full_output=True)
    assert res.value == pytest.approx(SMOOTH_TORUS_D2, rel=1e-12)
    assert res.tail < 1e-20


@given(st.floats(-3, 3))
def test_torus_quadratic_in_f(c):
    f = smooth_torus_field(2)
    base = continuum_torus_covariance(f, None, 16)
    assert continuum_torus_covariance(f.scaled(c), None, 16) == pytest.approx(c * c * base, rel=1e-10, abs=1e-15)


def test_torus_invariant_under_divergence_free_addition():
    f = smooth_torus_field(2)
    df = from_sympy([
        sp.exp(sp.sin(2 * sp.pi * X0)) * sp.cos(2 * sp.pi * X1) + sp.cos(2 * sp.pi * X1) ** 3,
        sp.sin(2 * sp.pi * (X0 - X1)) + sp.sin(4 * sp.pi * X0),
    ], 2)
    q = Stiffness(np.array([[0.2, 0.1], [0.1, -0.3]]))
    assert continuum_torus_covariance(df, q) == pytest.approx(continuum_torus_covariance(f, q), rel=1e-12)


def test_torus_input_checks():
    with pytest.raises(ValueError):
        continuum_torus_covariance(single_mode(2), truncation=0)
    with pytest.raises(ValueError):
        continuum_torus_covariance(single_mode(2), truncation=8, n_quad=10)
    with pytest.raises(ValueError):
        continuum_torus_covariance(bump(2))


def test_rd_gradient_bump_equals_dirichlet_energy():
    res = continuum_rd_covariance(gradient_bump(2), gradient_bump(2), full_output=True)
    assert res.value == pytest.approx(GRAD_BUMP_D2, rel=1e-6)
    assert res.abs_error < 1e-6 * res.value


def test_rd_divergence_free_window():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = sp.exp(-1 / (1 - (X0**2 + X1**2) / sp.Float(0.25)))
        J = from_sympy([sp.diff(b, X1), -sp.diff(b, X0)], 2, support=(X0**2 + X1**2) / sp.Float(0.25))
        assert abs(continuum_rd_covariance(J, J)) < 1e-10


def test_rd_positive_and_symmetric():
    Ja = bump(2, direction=[1.0, 0.5])
    Jb = bump(2, center=[0.2, 0.0], direction=[0.0, 1.0], radius=0.3)
    q = Stiffness(np.array([[0.3, 0.1], [0.1, -0.2]]))
    assert continuum_rd_covariance(Ja, Ja, q) > 0
    assert continuum_rd_covariance(Ja, Jb, q) == pytest.approx(continuum_rd_covariance(Jb, Ja, q), rel=1e-6)


def test_rd_separated_bumps_fixed_grid_oracle():
    Ja = bump(2, direction=[1.0, 0.0])
    Jb = bump(2, center=[3.0, 0.0], direction=[1.0, 0.0])
    assert continuum_rd_covariance(Ja, Jb) == pytest.approx(SEPARATED_BUMPS_D2, rel=1e-4)


def test_rd_isotropic_rescale():
    # a = c I divides the form by c
    J = bump(2, direction=[1.0, 0.0])
    base = continuum_rd_covariance(J, J)
    q = Stiffness(np.eye(2) * 0.25)
    assert continuum_rd_covariance(J, J, q) == pytest.approx(base / 1.25, rel=1e-6)


def test_rd_nonconvergence_warns():
    J = bump(2, direction=[1.0, 0.0])
    with pytest.warns(RuntimeWarning, match="angular quadrature"):
        continuum_rd_covariance(J, J, Stiffness(np.array([[0.45, 0.0], [0.0, -0.45]])),
                                RdQuadrature(rtol=1e-8, n_angles=2, max_angles=4))
