import math

import numpy as np
import pytest

from gfflab.errors import SamplerDivergence
from gfflab.fieldio import load_ensemble, read_field, read_vector_field, save_ensemble, write_field, write_vector_field
from gfflab.gaussian import assemble_symbol, sample_gff
from gfflab.gibbs import Potential, gibbs_expectation_quadrature, make_potential
from gfflab.lattice import ScalarField, TorusGeometry, VectorField, gradient, inner_product, project_mean_zero
from gfflab.mcmc import MCMCConfig, exact_ensemble, mcmc_sample
from gfflab.stats import batch_means, integrated_autocorr_time, jackknife


def _ar1(rho, n, rng, chains=8):
    x = np.zeros((chains, n))
    e = rng.standard_normal((chains, n)) * math.sqrt(1 - rho**2)
    x[:, 0] = rng.standard_normal(chains)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    return x


def test_autocorr_time_ar1(rng):
    rho = 0.6
    tau = integrated_autocorr_time(_ar1(rho, 20000, rng))
    assert tau == pytest.approx((1 + rho) / (1 - rho), rel=0.1)
    assert integrated_autocorr_time(rng.standard_normal((4, 5000))) == pytest.approx(1.0, abs=0.1)


def test_batch_means_and_jackknife(rng):
    x = rng.standard_normal(10000)
    m, se = batch_means(x, 50)
    assert m == x.mean()
    assert se == pytest.approx(1 / math.sqrt(10000), rel=0.3)
    val, jse = jackknife(x, np.mean, 50)
    assert val == pytest.approx(x.mean(), rel=1e-12)
    assert jse == pytest.approx(se, rel=1e-6)  # identical for the plain mean
    with pytest.raises(ValueError):
        batch_means(np.ones(1))


def test_mcmc_deterministic():
    geom = TorusGeometry(2, 3, 1)
    cfg = MCMCConfig(n_steps=50, burn_in=20, seed=9, n_chains=4)
    pot = make_potential("quartic:0.05")
    a = mcmc_sample(pot, geom, cfg)
    b = mcmc_sample(pot, geom, cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.samples.shape == (200, 3, 3)
    assert np.max(np.abs(a.samples.sum(axis=(1, 2)))) < 1e-12


@pytest.mark.parametrize("algorithm", ["mala", "hmc"])
def test_mcmc_gaussian_matches_exact(algorithm):
    geom = TorusGeometry(2, 3, 2)
    cfg = MCMCConfig(n_steps=400, burn_in=300, seed=1, algorithm=algorithm, n_chains=32)
    obs = {"c0": lambda phi: phi[:, 0, 0] ** 2, "c1": lambda phi: phi[:, 0, 0] * phi[:, 1, 0]}
    ens = mcmc_sample(make_potential("zero"), geom, cfg, obs, store=False)
    assert 0.4 <= ens.diagnostics["acceptance_rate"] <= 0.95
    ref = exact_ensemble(assemble_symbol(None, geom), 12800, 2, obs, store=False)
    for k in obs:
        m1, s1 = batch_means(ens.observables[k], 64)
        m2, s2 = batch_means(ref.observables[k], 64)
        assert abs(m1 - m2) < 5 * math.hypot(s1, s2)
    # E[energy] = (M^d - 1) / 2 for the standard Gaussian field
    e, se = batch_means(ens.observables["energy"], 64)
    assert abs(e - (geom.n_sites - 1) / 2) < 5 * se


def test_mcmc_nonconvex_matches_quadrature():
    geom = TorusGeometry(1, 3, 1)
    pot = make_potential("double-well:0.3,1.2", u=0.2)
    g = np.array([[0.5, -0.2, 0.4]])
    obs_fn = lambda phi: inner_product(gradient(phi, 1), g, 2) ** 2
    exact = gibbs_expectation_quadrature(pot, geom, obs_fn)
    cfg = MCMCConfig(n_steps=2000, burn_in=500, seed=4, n_chains=16)
    ens = mcmc_sample(pot, geom, cfg, {"o": obs_fn}, store=False)
    m, se = batch_means(ens.observables["o"], 32)
    assert abs(m - exact) < 5 * se


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mcmc_divergence_reported():
    bad = Potential(lambda x: -np.exp(x**2), (lambda x: -2 * x * np.exp(x**2), lambda x: 0 * x), name="bad")
    cfg = MCMCConfig(n_steps=50, burn_in=0, seed=0, n_chains=2, step_size=50.0, adapt=False)
    with pytest.raises(SamplerDivergence):
        mcmc_sample(bad, TorusGeometry(1, 3, 2), cfg, init=np.linspace(-30, 30, 9))


def test_mcmc_config_validation():
    with pytest.raises(ValueError):
        MCMCConfig(algorithm="gibbs")
    with pytest.raises(ValueError):
        MCMCConfig(n_chains=0)


def test_exact_ensemble_layout():
    op = assemble_symbol(None, TorusGeometry(1, 3, 2))
    ens = exact_ensemble(op, 7, 3, {"x0": lambda phi: phi[:, 0]}, chunk=3)
    assert len(ens) == 7
    np.testing.assert_array_equal(ens.observables["x0"], ens.samples[:, 0])
    r = np.random.default_rng(3)
    direct = np.concatenate([sample_gff(op, r, m) for m in (3, 3, 1)])
    np.testing.assert_array_equal(ens.samples, direct)


def test_field_roundtrip(tmp_path, rng):
    geom = TorusGeometry(2, 3, 2, 0.8)
    f = ScalarField(geom, project_mean_zero(rng.standard_normal(geom.shape)), True)
    path = write_field(tmp_path / "phi", f)
    assert path.suffix == ".gfld"
    back = read_field(path)
    assert back.geometry == geom and back.mean_zero
    np.testing.assert_array_equal(back.values, f.values)
    header, _, payload = path.read_bytes().partition(b"\n")
    assert b'"alpha": 0.8' in header and len(payload) == 8 * geom.n_sites
    np.testing.assert_array_equal(np.frombuffer(payload, "<f8").reshape(geom.shape), f.values)


def test_vector_field_roundtrip(tmp_path, rng):
    geom = TorusGeometry(2, 3, 1)
    v = VectorField(geom, rng.standard_normal((2, 3, 3)))
    files = write_vector_field(tmp_path / "g", v)
    assert [p.name for p in files] == ["g_0.gfld", "g_1.gfld"]
    np.testing.assert_array_equal(read_vector_field(tmp_path / "g").values, v.values)


def test_ensemble_roundtrip(tmp_path):
    geom = TorusGeometry(1, 3, 2)
    ens = mcmc_sample(make_potential("quartic:0.1"), geom, MCMCConfig(n_steps=5, burn_in=5, seed=2, n_chains=2))
    save_ensemble(tmp_path / "ens", ens)
    back = load_ensemble(tmp_path / "ens")
    np.testing.assert_array_equal(back.samples, ens.samples)
    assert back.seed == 2 and back.sampler == "mala" and back.n_chains == 2
    assert back.diagnostics["acceptance_rate"] == pytest.approx(ens.diagnostics["acceptance_rate"])
