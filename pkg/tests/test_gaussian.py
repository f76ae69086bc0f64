import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfflab.errors import EllipticityError, GeometryError, NonZeroMeanError
from gfflab.gaussian import (
    Stiffness,
    apply_operator,
    as_stiffness,
    assemble_symbol,
    convolve_kernel,
    gaussian_laplace_functional,
    greens_kernel,
    log_partition,
    sample_gff,
    shifted_expectation_check,
    solve,
)
from gfflab.lattice import TorusGeometry, inner_product, project_mean_zero
from gfflab.oracles import dense_kernel, dense_operator, dense_pinv, dense_solve, stencil_apply

# closed forms
KERNEL_D1_M3 = [2 / 9, -1 / 9, -1 / 9]
LOGZ_D1_M9 = sum(0.5 * math.log(2 * math.pi / (4 * math.sin(math.pi * p / 9) ** 2)) for p in range(1, 9))

CASES = [(1, 3), (1, 9), (2, 3), (2, 9)]


def _stiffnesses(d, rng):
    return [Stiffness.zero(d), Stiffness.random(d, rng, 0.45)]


def test_stiffness_validation():
    with pytest.raises(ValueError):
        Stiffness(np.array([[0.0, 0.1], [0.2, 0.0]]))
    with pytest.raises(EllipticityError):
        Stiffness(np.diag([-1.0, 0.0]))
    with pytest.warns(RuntimeWarning):
        Stiffness(np.diag([0.7, 0.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Stiffness(np.diag([0.5, -0.5]))
    with pytest.raises(GeometryError):
        as_stiffness(np.zeros((2, 2)), 1)
    assert as_stiffness(None, 3) == Stiffness.zero(3)


def test_symbol_d1_closed_form():
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    np.testing.assert_allclose(np.sort(op.symbol), [0.0, 3.0, 3.0], atol=1e-14)


def test_symbol_d2_matches_dense_eigenvalues(rng):
    geom = TorusGeometry(2, 3, 1)
    op = assemble_symbol(None, geom)
    p = np.arange(3)
    closed = 4 * np.sin(np.pi * p[:, None] / 3) ** 2 + 4 * np.sin(np.pi * p[None, :] / 3) ** 2
    np.testing.assert_allclose(op.symbol, closed, atol=1e-13)
    for q in _stiffnesses(2, rng):
        ev = np.linalg.eigvalsh(dense_operator(q.a, geom.shape))
        np.testing.assert_allclose(np.sort(assemble_symbol(q, geom).symbol.ravel()), ev, atol=1e-12)


@pytest.mark.parametrize("d,M", CASES)
def test_symbol_invariants(rng, d, M):
    geom = TorusGeometry(d, 3, round(math.log(M, 3)))
    lam0 = assemble_symbol(None, geom).symbol
    for q in _stiffnesses(d, rng):
        lam = assemble_symbol(q, geom).symbol
        assert lam.flat[0] == 0.0
        assert np.all(lam.ravel()[1:] > 0)
        assert np.all(lam.ravel()[1:] >= (1 - q.norm) * lam0.ravel()[1:] - 1e-12)
        with pytest.raises(ValueError):
            lam[(0,) * d] = 1.0  # immutable table


@pytest.mark.parametrize("d,M", CASES)
def test_apply_matches_stencil(rng, d, M):
    geom = TorusGeometry(d, 3, round(math.log(M, 3)))
    for q in _stiffnesses(d, rng):
        phi = rng.standard_normal(geom.shape)
        ref = stencil_apply(q.a, phi)
        out = apply_operator(assemble_symbol(q, geom), phi)
        assert np.max(np.abs(out - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_apply_examples():
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    assert np.max(np.abs(apply_operator(op, np.full(3, 7.0)))) < 1e-14
    np.testing.assert_allclose(apply_operator(op, KERNEL_D1_M3), [2 / 3, -1 / 3, -1 / 3], atol=1e-15)
    with pytest.raises(GeometryError):
        apply_operator(op, np.zeros(9))


@pytest.mark.parametrize("d,M", CASES)
def test_solve_matches_dense(rng, d, M):
    geom = TorusGeometry(d, 3, round(math.log(M, 3)))
    for q in _stiffnesses(d, rng):
        op = assemble_symbol(q, geom)
        r = project_mean_zero(rng.standard_normal(geom.shape))
        u = solve(op, r)
        ref = dense_solve(q.a, r)
        assert np.max(np.abs(u - ref)) <= 1e-10 * np.max(np.abs(ref))
        assert np.linalg.norm(apply_operator(op, u) - r) <= 1e-10 * np.linalg.norm(r)
        assert abs(u.sum()) < 1e-12 * geom.n_sites
        np.testing.assert_allclose(solve(op, apply_operator(op, r)), r, atol=1e-10 * np.max(np.abs(r)))


def test_solve_examples():
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    assert np.all(solve(op, np.zeros(3)) == 0)
    delta = np.array([1.0, 0.0, 0.0]) - 1 / 3
    np.testing.assert_allclose(solve(op, delta), KERNEL_D1_M3, atol=1e-15)
    with pytest.raises(NonZeroMeanError):
        solve(op, np.array([1.0, 0.0, 0.0]))


def test_greens_kernel_closed_case():
    k = greens_kernel(assemble_symbol(None, TorusGeometry(1, 3, 1)))
    np.testing.assert_allclose(k, KERNEL_D1_M3, atol=1e-12)
    np.testing.assert_allclose(k, dense_kernel(np.eye(1), (3,)), atol=1e-14)


@pytest.mark.parametrize("d,M", CASES)
def test_greens_kernel_properties(rng, d, M):
    geom = TorusGeometry(d, 3, round(math.log(M, 3)))
    for q in _stiffnesses(d, rng):
        op = assemble_symbol(q, geom)
        k = greens_kernel(op)
        assert abs(k.sum()) < 1e-12
        flipped = k[tuple(np.mod(-np.arange(M), M) for _ in range(d))] if d == 1 else np.roll(np.flip(k), 1, axis=(0, 1))
        np.testing.assert_allclose(k, flipped, atol=1e-14)
        delta = np.zeros(geom.shape)
        delta[(0,) * d] = 1.0
        np.testing.assert_allclose(k, solve(op, project_mean_zero(delta)), atol=1e-14)
        f = project_mean_zero(rng.standard_normal(geom.shape))
        np.testing.assert_allclose(convolve_kernel(k, f), solve(op, f), atol=1e-12)
        np.testing.assert_allclose(dense_pinv(q.a, geom.shape)[:, 0].reshape(geom.shape), k, atol=1e-12)


def test_sampler_deterministic():
    op = assemble_symbol(None, TorusGeometry(2, 3, 2))
    a = sample_gff(op, np.random.default_rng(5), 3)
    b = sample_gff(op, np.random.default_rng(5), 3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 9, 9) and a.dtype == np.float64
    assert np.max(np.abs(a.sum(axis=(1, 2)))) < 1e-12


def test_sampler_variance_d1_m3():
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    x = sample_gff(op, np.random.default_rng(11), 100_000)[:, 0]
    var = x.var()
    se = np.sqrt(np.var((x - x.mean()) ** 2) / x.size)
    assert abs(var - 2 / 9) < 5 * se


def test_sampler_covariance_d2_m3(rng):
    geom = TorusGeometry(2, 3, 1)
    for q in _stiffnesses(2, rng):
        op = assemble_symbol(q, geom)
        x = sample_gff(op, np.random.default_rng(3), 100_000).reshape(100_000, -1)
        prod = x[:, :, None] * x[:, None, :]
        emp = prod.mean(axis=0)
        se = prod.std(axis=0) / np.sqrt(x.shape[0])
        ref = dense_pinv(q.a, geom.shape)
        assert np.max(np.abs(emp - ref) / se) < 5


def test_log_partition_values():
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    assert log_partition(op) == pytest.approx(math.log(2 * math.pi / 3), rel=1e-14)
    op9 = assemble_symbol(None, TorusGeometry(1, 3, 2))
    assert log_partition(op9) == pytest.approx(LOGZ_D1_M9, rel=1e-13)


@given(st.floats(0.55, 1.45))
def test_log_partition_rescale(c):
    geom = TorusGeometry(2, 3, 1)
    base = log_partition(assemble_symbol(None, geom))
    # a = c' I rescales every multiplier by c'
    q = Stiffness(np.eye(2) * (c - 1) * 0.999999)
    scale = 1 + (c - 1) * 0.999999
    got = log_partition(assemble_symbol(q, geom))
    assert got == pytest.approx(base - (geom.n_sites - 1) * 0.5 * math.log(scale), rel=1e-12, abs=1e-12)


def test_laplace_functional(rng):
    geom = TorusGeometry(1, 3, 2)
    op = assemble_symbol(None, geom)
    assert gaussian_laplace_functional(op, np.zeros(9)) == 1.0
    f = project_mean_zero(0.2 * rng.standard_normal(9))
    lg = gaussian_laplace_functional(op, f, log=True)
    assert gaussian_laplace_functional(op, 2 * f, log=True) == pytest.approx(4 * lg, rel=1e-13)
    x = np.exp(-inner_product(sample_gff(op, np.random.default_rng(1), 100_000), f, 1))
    assert abs(x.mean() - math.exp(lg)) < 5 * x.std() / math.sqrt(x.size)
    with pytest.raises(NonZeroMeanError):
        gaussian_laplace_functional(op, np.ones(9))


def test_shift_identity_examples(rng):
    geom = TorusGeometry(1, 3, 2)
    op = assemble_symbol(None, geom)
    f = project_mean_zero(0.3 * rng.standard_normal(9))
    g = rng.standard_normal(9)
    w = gaussian_laplace_functional(op, f)
    one = shifted_expectation_check(op, lambda phi: np.ones(phi.shape[0]), f, 50_000, np.random.default_rng(2))
    assert one.rhs == pytest.approx(w, rel=1e-14) and one.rhs_stderr == 0.0
    assert abs(one.lhs - one.rhs) < 5 * one.lhs_stderr
    lin = shifted_expectation_check(op, lambda phi: inner_product(phi, g, 1), f, 100_000, np.random.default_rng(3))
    exact = -w * inner_product(solve(op, f), g)
    assert abs(lin.lhs - exact) < 5 * lin.lhs_stderr
    assert abs(lin.rhs - exact) < 5 * lin.rhs_stderr
    zero = shifted_expectation_check(op, lambda phi: phi[:, 0] ** 2, np.zeros(9), 50_000, np.random.default_rng(4))
    assert abs(zero.lhs - zero.rhs) < 5 * math.hypot(zero.lhs_stderr, zero.rhs_stderr)
