import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.special import iv

from gfflab.errors import FitError, GeometryError, SupportOverflowError
from gfflab.gaussian import Stiffness, assemble_symbol, gaussian_laplace_functional
from gfflab.gibbs import make_potential
from gfflab.lattice import TorusGeometry, adjoint_difference, adjoint_divergence, inner_product
from gfflab.mcmc import MCMCConfig, exact_ensemble, mcmc_sample
from gfflab.oracles import dense_pinv
from gfflab.scaling import (
    ConvergenceRow,
    ConvergenceTable,
    StudyConfig,
    _seed_for,
    covariance_estimate,
    covariance_from_values,
    covariance_study,
    discrete_quadratic_form,
    estimate_effective_stiffness,
    laplace_from_values,
    laplace_transform_estimate,
    low_mode_indices,
    scale_test_function,
    scale_window_function,
    scaling_limit_study,
    smoothed_gradient_observable,
)
from gfflab.testfunctions import bump, from_sympy, gradient_bump, make_test_function, smooth_torus_field

X0, X1 = sp.symbols("x0 x1", real=True)


def _const(d, c=1.0, support=None):
    return from_sympy([sp.Float(c) + 0 * X0] * d, d, support=support)


# ---------------------------------------------------------------- scaled functions

def test_scale_test_function_constant():
    for d, N in ((1, 2), (2, 1), (2, 3)):
        geom = TorusGeometry(d, 3, N)
        fN = scale_test_function(_const(d, 2.0), geom)
        np.testing.assert_allclose(fN, 2.0 * geom.side ** (-d / 2), rtol=1e-15)


def test_scale_test_function_sampling_points():
    f = from_sympy([sp.sin(2 * sp.pi * X0) + X0**2], 1)
    fN = scale_test_function(f, TorusGeometry(1, 3, 1))
    x = np.array([0.0, 1 / 3, -1 / 3])
    np.testing.assert_allclose(fN[0], 3**-0.5 * (np.sin(2 * np.pi * x) + x**2), atol=1e-15)
    f0 = scale_test_function(f, TorusGeometry(1, 3, 0))
    assert f0.shape == (1, 1) and f0[0, 0] == 0.0


def test_scale_test_function_requires_alpha_one():
    with pytest.raises(GeometryError):
        scale_test_function(_const(1), TorusGeometry(1, 3, 1, 0.5))


def test_riemann_sum_convergence():
    # int_0^1 exp(2 sin 2 pi x) dx = I_0(2)
    f = from_sympy([sp.exp(sp.sin(2 * sp.pi * X0))], 1)
    exact = iv(0, 2.0)
    errs = [abs(np.sum(scale_test_function(f, TorusGeometry(1, 3, N)) ** 2) - exact) for N in (1, 2, 3)]
    assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-13
    assert errs[-1] < 1e-12


def test_window_constant_one():
    J = _const(1, 1.0)
    out = scale_window_function(J, [0.0], 1.0, TorusGeometry(1, 3, 1))
    np.testing.assert_allclose(out, 3**-0.5, rtol=1e-15)


def test_window_alpha_one_matches_test_function():
    J = gradient_bump(2, radius=0.45)
    geom = TorusGeometry(2, 3, 3)
    np.testing.assert_array_equal(scale_window_function(J, None, 1.0, geom), scale_test_function(J, geom))


def test_window_translation():
    geom = TorusGeometry(2, 3, 2, 0.5)
    J0 = bump(2, direction=[1.0, 0.0], radius=0.4)
    J1 = bump(2, center=[1.0, 0.0], direction=[1.0, 0.0], radius=0.4)
    a = scale_window_function(J0, None, 0.5, geom)
    b = scale_window_function(J1, None, 0.5, geom)
    np.testing.assert_allclose(np.roll(a, 3, axis=1), b, atol=1e-15)
    assert np.unravel_index(np.argmax(b[0]), b[0].shape) == (3, 0)


def test_window_overflow():
    J = bump(2, center=[1.0, 0.0], direction=[1.0, 0.0])
    with pytest.raises(SupportOverflowError):
        scale_window_function(J, None, 1.0, TorusGeometry(2, 3, 2))
    with pytest.raises(ValueError):
        scale_window_function(J, None, 0.0, TorusGeometry(2, 3, 2))


# ---------------------------------------------------------------- observables and estimators

def test_smoothed_observable(rng):
    g = rng.standard_normal((2, 9, 9))
    assert abs(smoothed_gradient_observable(np.full((9, 9), 3.0), g)) < 1e-12
    phi = rng.standard_normal((9, 9))
    a = smoothed_gradient_observable(phi, g)
    b = inner_product(phi, adjoint_divergence(g))
    assert a == pytest.approx(b, rel=1e-12)
    psi = rng.standard_normal((9, 9))
    curl = np.stack([adjoint_difference(psi, 1), -adjoint_difference(psi, 0)])
    assert abs(smoothed_gradient_observable(phi, curl)) < 1e-12
    with pytest.raises(GeometryError):
        smoothed_gradient_observable(np.zeros((3, 3)), g)


def test_laplace_from_values_zero():
    assert laplace_from_values(np.zeros(100)) == (1.0, 0.0)
    with pytest.raises(ValueError):
        laplace_from_values(np.array([]))


def test_laplace_estimate_gaussian():
    geom = TorusGeometry(2, 3, 2)
    op = assemble_symbol(None, geom)
    g = 0.1 * gradient_bump(2, radius=0.45)(geom.coordinates() / 9)
    ens = exact_ensemble(op, 40000, 8)
    est, se = laplace_transform_estimate(ens, g)
    exact = gaussian_laplace_functional(op, adjoint_divergence(g))
    assert abs(est - exact) < 5 * se
    assert laplace_transform_estimate(ens, np.zeros_like(g)) == (1.0, 0.0)


def test_laplace_estimate_symmetric_model():
    geom = TorusGeometry(2, 3, 1)
    pot = make_potential("quartic:0.05")
    g = np.random.default_rng(0).standard_normal((2, 3, 3)) * 0.3
    cfg = MCMCConfig(n_steps=400, burn_in=200, n_chains=32)
    e1 = mcmc_sample(pot, geom, MCMCConfig(**{**cfg.__dict__, "seed": 1}))
    e2 = mcmc_sample(pot, geom, MCMCConfig(**{**cfg.__dict__, "seed": 2}))
    a, sa = laplace_transform_estimate(e1, g)
    b, sb = laplace_transform_estimate(e2, -g)
    assert abs(a - b) < 5 * math.hypot(sa, sb)


def test_covariance_estimates_gaussian(rng):
    for d, N in ((1, 1), (1, 2), (2, 1), (2, 2)):
        geom = TorusGeometry(d, 3, N)
        op = assemble_symbol(None, geom)
        ga = rng.standard_normal((d,) + geom.shape)
        gb = rng.standard_normal((d,) + geom.shape)
        ens = exact_ensemble(op, 20000, 5)
        v, se = covariance_estimate(ens, ga, ga)
        assert v >= -5 * se
        assert abs(v - discrete_quadratic_form(op, ga)) < 5 * se
        c, sec = covariance_estimate(ens, ga, gb)
        assert abs(c - discrete_quadratic_form(op, ga, gb)) < 5 * sec


def test_covariance_far_windows():
    alpha = 0.5
    geom = TorusGeometry(2, 3, 3, alpha)
    op = assemble_symbol(None, geom)
    Ja = bump(2, direction=[1.0, 0.0], radius=0.45)
    Jb = bump(2, center=[2.0, 0.0], direction=[1.0, 0.0], radius=0.45)
    ga = scale_window_function(Ja, None, alpha, geom)
    gb = scale_window_function(Jb, None, alpha, geom)
    form = discrete_quadratic_form(op, ga, gb)
    assert 0 < abs(form) < 0.05 * discrete_quadratic_form(op, ga)
    ens = exact_ensemble(op, 40000, 12, store=False, observables={
        "a": lambda p: inner_product(p, adjoint_divergence(ga, 2), 2),
        "b": lambda p: inner_product(p, adjoint_divergence(gb, 2), 2)})
    v, se = covariance_from_values(ens.observables["a"], ens.observables["b"])
    assert abs(v - form) < 5 * se


def test_discrete_quadratic_form_examples(rng):
    op = assemble_symbol(None, TorusGeometry(1, 3, 1))
    assert discrete_quadratic_form(op, np.zeros((1, 3))) == 0.0
    g = np.array([[1.0, 0.0, 0.0]])
    ghat = adjoint_divergence(g, 1)
    np.testing.assert_array_equal(ghat, [-1.0, 1.0, 0.0])
    assert discrete_quadratic_form(op, g) == pytest.approx(ghat @ dense_pinv(np.eye(1), (3,)) @ ghat, rel=1e-14)
    assert discrete_quadratic_form(op, g) == pytest.approx(2 / 3, rel=1e-14)
    op2 = assemble_symbol(Stiffness.random(2, rng, 0.4), TorusGeometry(2, 3, 2))
    assert discrete_quadratic_form(op2, rng.standard_normal((2, 9, 9))) > 0


# ---------------------------------------------------------------- effective stiffness

def test_low_mode_indices():
    geom = TorusGeometry(2, 3, 2)
    idx = low_mode_indices(geom, 1)
    assert len(idx[0]) == 4  # half of the 8 nonzero momenta with |p|_inf <= 1
    with pytest.raises(FitError):
        low_mode_indices(geom, 5)
    with pytest.raises(FitError):
        low_mode_indices(geom, 0)


@pytest.mark.parametrize("q", [np.zeros((2, 2)), np.array([[0.3, -0.1], [-0.1, -0.2]])])
def test_effective_stiffness_recovers_q(q):
    geom = TorusGeometry(2, 3, 3)
    ens = exact_ensemble(assemble_symbol(q, geom), 5000, 17)
    fit = estimate_effective_stiffness(ens, 3)
    np.testing.assert_array_equal(fit.q.q, fit.q.q.T)
    assert np.all(np.abs(fit.q.q - q) < 5 * fit.stderr)
    assert fit.n_modes == 24


def test_effective_stiffness_needs_data():
    geom = TorusGeometry(1, 3, 2)
    ens = exact_ensemble(assemble_symbol(None, geom), 10, 1, store=False)
    with pytest.raises(ValueError):
        estimate_effective_stiffness(ens, 1)


# ---------------------------------------------------------------- tables and studies

@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-1e6, 1e6, allow_subnormal=False)))
def test_table_csv_roundtrip(data):
    rows = [ConvergenceRow(N, *map(float, data[k])) for k, N in enumerate((1, 2, 5))]
    t = ConvergenceTable(rows)
    back = ConvergenceTable.from_csv(t.to_csv())
    assert back.rows == rows
    stripped = ConvergenceTable.from_csv(t.to_csv(record_runtime=False))
    assert all(r.runtime_s == 0.0 for r in stripped.rows)


def test_table_file_roundtrip(tmp_path):
    t = ConvergenceTable([ConvergenceRow(1, 0.5, 0.25, 0.25, 0.01, 1.5)])
    path = tmp_path / "t.csv"
    t.to_csv(path)
    assert path.read_text().splitlines()[0] == "N,estimate,reference,abs_error,stderr,runtime_s"
    assert ConvergenceTable.from_csv(path).rows == t.rows


def test_table_requires_increasing_N():
    with pytest.raises(ValueError):
        ConvergenceTable([ConvergenceRow(2, 0, 0, 0, 0, 0), ConvergenceRow(2, 0, 0, 0, 0, 0)])
    t = ConvergenceTable([ConvergenceRow(2, 0, 0, 0, 0, 0)])
    with pytest.raises(ValueError):
        t.append(ConvergenceRow(1, 0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        ConvergenceTable.from_csv("a,b\n1,2\n")


def test_scaling_study_zero_f():
    t = scaling_limit_study(make_potential("zero"), "zero", make_test_function("zero", 2), [1, 2, 3], 100, 0)
    for r in t.rows:
        assert (r.estimate, r.reference, r.abs_error) == (1.0, 1.0, 0.0)


def test_scaling_study_gaussian_monotone_and_deterministic():
    f = smooth_torus_field(2)
    args = (make_potential("zero"), "zero", f, [1, 2, 3], 50000, 11)
    t = scaling_limit_study(*args)
    errs = t.column("abs_error")
    assert errs[0] > errs[1] > errs[2]
    with ThreadPoolExecutor(3) as ex:
        t2 = scaling_limit_study(*args, map_fn=ex.map)
    assert t.to_csv(record_runtime=False) == t2.to_csv(record_runtime=False)
    assert t.metadata["truncation_tail"] < 1e-15


def test_covariance_study_divergence_free_window():
    b = sp.exp(-1 / (1 - (X0**2 + X1**2) / sp.Float(0.2)))
    J = from_sympy([sp.diff(b, X1), -sp.diff(b, X0)], 2, support=(X0**2 + X1**2) / sp.Float(0.2))
    t = covariance_study(make_potential("zero"), J, J, 1.0, [1, 2, 3], 2000, 3)
    assert np.all(np.abs(t.column("reference")) < 1e-10)
    # a sampled curl is divergence free only up to lattice corrections
    est = np.abs(t.column("estimate"))
    assert est[0] > est[1] > est[2]
    assert est[2] < 0.01


@pytest.mark.parametrize("alpha", [0.9, 1.0])
def test_covariance_study_direct_reevaluation(alpha):
    J = gradient_bump(2)
    N, seed, n = 2, 5, 3000
    t = covariance_study(make_potential("zero"), J, J, alpha, [N], n, seed)
    geom = TorusGeometry(2, 3, N, alpha)
    g = adjoint_divergence(scale_window_function(J, None, alpha, geom), 2)
    ens = exact_ensemble(assemble_symbol(None, geom), n, _seed_for(seed, N),
                         {"x": lambda p: inner_product(p, g, 2)}, store=False)
    est, se = covariance_from_values(ens.observables["x"], ens.observables["x"], 50)
    assert t.rows[0].estimate == est and t.rows[0].stderr == se
