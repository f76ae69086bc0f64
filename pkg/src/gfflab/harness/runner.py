"""Experiment drivers, checks and run manifests.

Each experiment turns a :class:`RunConfig` into one or more
:class:`ConvergenceTable` CSVs plus a list of named checks. ``run`` writes
``<name>.csv`` for every table, ``checks.csv`` and ``manifest.json`` into the
output directory. Files are written by the calling thread only; worker
threads (``threads > 1``) only compute per-level work items.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..continuum import RdQuadrature
from ..gaussian import Stiffness, as_stiffness, assemble_symbol, greens_kernel, log_partition, shifted_expectation_check, solve
from ..gibbs import gibbs_expectation_quadrature, make_potential, reweighted_gaussian_quadrature
from ..lattice import TorusGeometry, adjoint_divergence, gradient, inner_product
from ..mcmc import MCMCConfig, exact_ensemble
from ..norms import RegulatorConfig, regulator_bound_check, tau_bound_check
from ..oracles import dense_operator, dense_solve
from ..scaledpde import ScaledTorus, kernel_scaling_check, poincare_constant, sup_bound_check
from ..scaling import (
    ConvergenceRow,
    ConvergenceTable,
    StudyConfig,
    covariance_from_values,
    covariance_study,
    discrete_quadratic_form,
    scaling_limit_study,
)
from ..testfunctions import make_test_function
from .config import RunConfig, config_hash, emit_config

log = logging.getLogger(__name__)

KERNEL_TOL = 1e-10
TREND_GROWTH = 1.1       # largest tolerated growth factor per level for "no increasing trend"
REGULATOR_SPREAD = 2.0
POINCARE_REL = 0.2


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    seed: int
    wall_clock_s: float
    stage_timings: dict
    diagnostics: dict
    files: list
    passed: bool
    versions: dict = field(default_factory=dict)


class StageError(RuntimeError):
    """Failure inside a named stage of a run."""

    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# trend helpers shared with the acceptance suite


def log_slope(values, xs=None) -> float:
    """Least-squares slope of ``log(values)`` against ``xs`` (default 0, 1, ...)."""
    v = np.asarray(values, dtype=np.float64)
    x = np.arange(len(v), dtype=np.float64) if xs is None else np.asarray(xs, dtype=np.float64)
    return float(np.polyfit(x, np.log(v), 1)[0])


def no_increasing_trend(values, growth: float = TREND_GROWTH) -> bool:
    """Fitted per-level growth factor of ``values`` is at most ``growth``."""
    return math.exp(log_slope(values)) <= growth


def strictly_decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def decrease_resolved(err_first, unc_first, err_last, unc_last, k: float = 2.0) -> bool:
    """``err_last < err_first`` by more than ``k`` combined standard uncertainties."""
    return err_first - err_last > k * math.hypot(unc_first, unc_last)


# ---------------------------------------------------------------------------
# experiments


def _study_config(cfg: RunConfig) -> StudyConfig:
    s = cfg.sampler
    mc = MCMCConfig(
        n_steps=1,
        burn_in=s.burn_in,
        thinning=s.thinning,
        seed=cfg.seed,
        algorithm=s.algorithm,
        n_chains=s.n_chains,
        step_size=s.step_size or None,
        n_leapfrog=s.n_leapfrog,
    )
    return StudyConfig(
        d=cfg.geometry.d,
        L=cfg.geometry.L,
        sampler=mc,
        momentum_cutoff=cfg.estimator.momentum_cutoff,
        n_blocks=cfg.estimator.n_blocks,
        truncation=cfg.estimator.truncation,
        quadrature=RdQuadrature(rtol=cfg.estimator.rtol),
    )


def _potential(cfg: RunConfig):
    return make_potential(cfg.potential.spec, u=cfg.tilt())


def _qbar_source(cfg: RunConfig, pot):
    if cfg.stiffness.q:
        return Stiffness(cfg.stiffness_matrix())
    return "zero" if pot.is_zero else "fit"


def _is_gaussian(pot, d) -> bool:
    return pot.is_zero and not np.any(pot.tilt(d))


def _convergence_checks(table: ConvergenceTable, gaussian: bool, label: str) -> list:
    errs = table.column("abs_error")
    se = table.column("stderr")
    ref_se = table.metadata.get("reference_stderr", 0.0)
    tail = table.metadata.get("truncation_tail", 0.0)
    unc = np.sqrt(se**2 + ref_se**2 + tail**2)
    checks = []
    if len(errs) < 2:
        return checks
    if gaussian:
        checks.append(Check(f"{label}: error strictly decreasing", float(errs[-1]), float(errs[0]),
                            strictly_decreasing(errs), f"errors {errs.tolist()}"))
    checks.append(Check(f"{label}: final error below first, resolved at 2 sigma", float(errs[-1]), float(errs[0]),
                        decrease_resolved(errs[0], unc[0], errs[-1], unc[-1]),
                        f"errors {errs.tolist()} uncertainties {unc.tolist()}"))
    return checks


def exp_scaling_limit(cfg: RunConfig, map_fn):
    pot = _potential(cfg)
    f = _test_function(cfg)
    table = scaling_limit_study(pot, _qbar_source(cfg, pot), f, cfg.geometry.N_range, cfg.sampler.samples,
                                cfg.seed, _study_config(cfg), map_fn=map_fn)
    return {"scaling_limit": table}, _convergence_checks(table, _is_gaussian(pot, cfg.geometry.d), "scaling-limit")


def exp_covariance(cfg: RunConfig, map_fn):
    pot = _potential(cfg)
    d = cfg.geometry.d
    Ja = make_test_function(cfg.estimator.window_a, d)
    Jb = Ja if cfg.estimator.window_b == cfg.estimator.window_a else make_test_function(cfg.estimator.window_b, d)
    table = covariance_study(pot, Ja, Jb, cfg.geometry.alpha, cfg.geometry.N_range, cfg.sampler.samples,
                             cfg.seed, _study_config(cfg), qbar_source=_qbar_source(cfg, pot), map_fn=map_fn)
    return {"covariance": table}, _convergence_checks(table, _is_gaussian(pot, cfg.geometry.d), "covariance")


def exp_kernel_scaling(cfg: RunConfig, map_fn):
    g = cfg.geometry
    q = as_stiffness(cfg.stiffness_matrix(), g.d)

    def work(N):
        t0 = time.perf_counter()
        r = kernel_scaling_check(q, TorusGeometry(g.d, g.L, N), g.alpha, seed=cfg.seed)
        return ConvergenceRow(N, r.max_abs_discrepancy, 0.0, r.max_abs_discrepancy, 0.0, time.perf_counter() - t0)

    table = ConvergenceTable(list(map_fn(work, g.N_range)), {"kind": "kernel-scaling"})
    worst = float(table.column("estimate").max())
    return {"kernel_scaling": table}, [Check("kernel-scaling: max discrepancy", worst, KERNEL_TOL, worst <= KERNEL_TOL)]


def _test_function(cfg: RunConfig):
    f = make_test_function(cfg.estimator.test_function, cfg.geometry.d)
    return f if cfg.estimator.amplitude == 1.0 else f.scaled(cfg.estimator.amplitude)


def _regulator_cfg(cfg):
    r = cfg.regulator
    return RegulatorConfig(r.h, r.omega, r.r0)


def exp_tau_bound(cfg: RunConfig, map_fn):
    g = cfg.geometry
    w = make_test_function(cfg.estimator.scalar_window, g.d)
    table = tau_bound_check(cfg.stiffness_matrix(), w, g.alpha, g.N_range, _regulator_cfg(cfg), g.L,
                            cfg.estimator.direction)
    ratio = table.metadata["ratio"]
    growth = math.exp(log_slope(ratio)) if len(ratio) > 1 else 1.0
    return {"tau_bound": table}, [Check("tau-bound: ratio has no increasing trend", growth, TREND_GROWTH,
                                        growth <= TREND_GROWTH, f"ratios {ratio}")]


def exp_regulator_bound(cfg: RunConfig, map_fn):
    g = cfg.geometry
    f = _test_function(cfg)
    table = regulator_bound_check(cfg.stiffness_matrix(), f, g.N_range, _regulator_cfg(cfg), g.L)
    ratio = table.metadata["max_min_ratio"]
    return {"regulator_bound": table}, [Check("regulator-bound: max/min ratio", ratio, REGULATOR_SPREAD,
                                              ratio <= REGULATOR_SPREAD, f"log values {table.metadata['log_values']}")]


def exp_sup_bound(cfg: RunConfig, map_fn):
    g = cfg.geometry
    w = make_test_function(cfg.estimator.scalar_window, g.d)
    a = cfg.stiffness_matrix()

    def work(N):
        t0 = time.perf_counter()
        r = sup_bound_check(a, w, ScaledTorus(g.d, g.L, N, g.alpha), cfg.estimator.direction)
        bound = r.growth * r.ck_norm
        return ConvergenceRow(N, r.sup, bound, abs(r.sup - bound), 0.0, time.perf_counter() - t0), r.bound_ratio

    out = list(map_fn(work, g.N_range))
    table = ConvergenceTable([o[0] for o in out], {"kind": "sup-bound", "ratio": [o[1] for o in out]})
    ratios = table.metadata["ratio"]
    growth = math.exp(log_slope(ratios)) if len(ratios) > 1 else 1.0
    return {"sup_bound": table}, [Check("sup-bound: ratio has no increasing trend", growth, TREND_GROWTH,
                                        growth <= TREND_GROWTH, f"ratios {ratios}")]


def exp_poincare(cfg: RunConfig, map_fn):
    g = cfg.geometry
    rows = []
    for N in g.N_range:
        t0 = time.perf_counter()
        c = poincare_constant(ScaledTorus(g.d, g.L, N, g.alpha))
        theory = float(g.L) ** (2 * N * (1 - g.alpha)) / (4 * math.pi**2)
        rows.append(ConvergenceRow(N, c, theory, abs(c - theory), 0.0, time.perf_counter() - t0))
    table = ConvergenceTable(rows, {"kind": "poincare"})
    checks = []
    if len(rows) > 1:
        slope = log_slope(table.column("estimate"), g.N_range)
        expect = 2 * (1 - g.alpha) * math.log(g.L)
        if expect > 0:
            rel = abs(slope - expect) / expect
            checks.append(Check("poincare: log-log slope relative deviation", rel, POINCARE_REL, rel <= POINCARE_REL,
                                f"slope {slope:.4f} vs {expect:.4f}"))
        else:
            vals = table.column("estimate")
            spread = float(vals.max() / vals.min())
            checks.append(Check("poincare: bounded for alpha = 1", spread, 2.0, spread <= 2.0))
    return {"poincare": table}, checks


def gaussian_selfcheck(seed: int = 0, n_samples: int = 20000) -> list:
    """Compose the Gaussian oracles into a list of checks."""
    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    for d, M_levels in ((1, (1, 2)), (2, (1, 2))):
        for N in M_levels:
            geom = TorusGeometry(d, 3, N)
            for q in (Stiffness.zero(d), Stiffness.random(d, rng, 0.4)):
                op = assemble_symbol(q, geom)
                rhs = rng.standard_normal(geom.shape)
                rhs -= rhs.mean()
                u = solve(op, rhs)
                ref = dense_solve(q.a, rhs)
                worst = max(worst, float(np.max(np.abs(u - ref)) / np.max(np.abs(ref))))
    checks.append(Check("solver matches dense pseudo-inverse (relative)", worst, 1e-10, worst <= 1e-10))

    k = greens_kernel(assemble_symbol(None, TorusGeometry(1, 3, 1)))
    err = float(np.max(np.abs(k - np.array([2 / 9, -1 / 9, -1 / 9]))))
    checks.append(Check("kernel d=1 M=3 closed form", err, 1e-12, err <= 1e-12))

    geom = TorusGeometry(2, 3, 1)
    q = Stiffness.random(2, rng, 0.3)
    op = assemble_symbol(q, geom)
    ev = np.linalg.eigvalsh(dense_operator(q.a, geom.shape))[1:]
    dense_logz = float(0.5 * np.sum(np.log(2 * np.pi / ev)))
    err = abs(log_partition(op) - dense_logz)
    checks.append(Check("log partition matches dense spectrum", err, 1e-10, err <= 1e-10))

    geom = TorusGeometry(1, 3, 2)
    op = assemble_symbol(None, geom)
    f = rng.standard_normal(geom.shape) * 0.3
    f -= f.mean()
    sc = shifted_expectation_check(op, lambda phi: phi[:, 0] ** 2, f, n_samples, rng)
    z = abs(sc.lhs - sc.rhs) / math.hypot(sc.lhs_stderr, sc.rhs_stderr)
    checks.append(Check("Gaussian shift identity (standard errors)", z, 5.0, z <= 5.0))

    g2 = rng.standard_normal((2,) + (9, 9)) * 0.2
    geom = TorusGeometry(2, 3, 2)
    op = assemble_symbol(None, geom)
    ens = exact_ensemble(op, n_samples, seed + 1, store=False,
                         observables={"X": lambda phi: inner_product(phi, adjoint_divergence(g2, 2), 2)})
    var, se = covariance_from_values(ens.observables["X"], ens.observables["X"])
    form = discrete_quadratic_form(op, g2)
    z = abs(var - form) / se
    checks.append(Check("quadratic form equals variance (standard errors)", z, 5.0, z <= 5.0))

    worst = 0.0
    for d in (1, 2):
        for alpha in (0.5, 1.0):
            for N in (1, 2):
                for q in (None, Stiffness.random(d, rng, 0.4)):
                    worst = max(worst, kernel_scaling_check(q, TorusGeometry(d, 3, N), alpha).max_abs_discrepancy)
    checks.append(Check("kernel scaling identity", worst, KERNEL_TOL, worst <= KERNEL_TOL))

    geom = TorusGeometry(1, 3, 1)
    g = np.array([[0.3, -0.1, 0.2]])
    obs = lambda phi: inner_product(gradient(phi, 1), g, 2) ** 2
    worst = 0.0
    for u in (0.0, 0.1):
        pot = make_potential("quartic:0.01", u=u)
        a = gibbs_expectation_quadrature(pot, geom, obs)
        b = reweighted_gaussian_quadrature(pot, None, 0.0, geom, obs)
        worst = max(worst, abs(a - b) / abs(a))
    checks.append(Check("reweighting identity by quadrature (relative)", worst, 1e-6, worst <= 1e-6))
    return checks


def exp_gaussian_selfcheck(cfg: RunConfig, map_fn):
    return {}, gaussian_selfcheck(cfg.seed, cfg.sampler.samples)


EXPERIMENTS = {
    "scaling-limit": exp_scaling_limit,
    "covariance": exp_covariance,
    "kernel-scaling": exp_kernel_scaling,
    "tau-bound": exp_tau_bound,
    "regulator-bound": exp_regulator_bound,
    "sup-bound": exp_sup_bound,
    "poincare": exp_poincare,
    "gaussian-selfcheck": exp_gaussian_selfcheck,
}


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def checks_csv(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("check", "value", "threshold", "passed", "detail"))
    for c in checks:
        w.writerow((c.name, repr(float(c.value)), repr(float(c.threshold)), int(bool(c.passed)), c.detail))
    return buf.getvalue()


def _versions() -> dict:
    return {
        "gfflab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": sys.platform,
    }


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def run(cfg: RunConfig, out_dir=None, threads: int = 1) -> RunManifest:
    """Run the configured experiment and write its artifacts."""
    t_start = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    chash = config_hash(cfg)
    files = []
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        with _stage(cfg.experiment, timings):
            tables, checks = EXPERIMENTS[cfg.experiment](cfg, executor.map if executor else map)
    finally:
        if executor is not None:
            executor.shutdown()
    with _stage("write", timings):
        for name, table in tables.items():
            path = out / f"{name}.csv"
            _atomic_write(path, table.to_csv(record_runtime=cfg.output.record_runtime))
            files.append(path.name)
        _atomic_write(out / "checks.csv", checks_csv(checks))
        files.append("checks.csv")
        _atomic_write(out / "config.toml", emit_config(cfg))
        files.append("config.toml")
    diagnostics = {name: t.metadata for name, t in tables.items()}
    diagnostics["checks"] = [asdict(c) for c in checks]
    g = cfg.geometry
    diagnostics["log_partition"] = {
        str(N): log_partition(assemble_symbol(cfg.stiffness_matrix(), TorusGeometry(g.d, g.L, N))) for N in g.N_range
    }
    manifest = RunManifest(
        config_hash=chash,
        experiment=cfg.experiment,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - t_start,
        stage_timings=timings,
        diagnostics=diagnostics,
        files=files + ["manifest.json"],
        passed=all(c.passed for c in checks),
        versions=_versions(),
    )
    _atomic_write(out / "manifest.json", json.dumps(asdict(manifest), indent=2, sort_keys=True, default=_json_default))
    for c in checks:
        log.info("%s %s: %.4g (threshold %.4g)", "PASS" if c.passed else "FAIL", c.name, c.value, c.threshold)
    return manifest
