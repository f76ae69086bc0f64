"""Scaled observables, estimators and convergence studies.

A smooth test function ``f`` on the unit torus is sampled on the lattice as
``f^N(x) = M^{-d/2} f(x / M)``. A window ``J`` supported in the unit cube
``Q(z)`` is sampled as ``J^N(x) = s^{-d/2} J(x / s)`` with ``s = L^{alpha N}``.
The smoothed observable of a field is ``(grad phi, g) = (phi, div* g)``; the
studies compare its Laplace transform or covariance under the lattice measure
with continuum Gaussian reference values.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .continuum import RdQuadrature, continuum_rd_covariance, continuum_torus_covariance
from .errors import FitError, GeometryError, SupportOverflowError
from .gaussian import Stiffness, as_stiffness, assemble_symbol, difference_symbols, solve
from .gibbs import Potential
from .lattice import TorusGeometry, adjoint_divergence, gradient, inner_product
from .mcmc import Ensemble, MCMCConfig, exact_ensemble, mcmc_sample
from .stats import batch_means, jackknife
from .testfunctions import TestFunction

__all__ = [
    "scale_test_function",
    "scale_window_function",
    "smoothed_gradient_observable",
    "laplace_transform_estimate",
    "covariance_estimate",
    "discrete_quadratic_form",
    "low_mode_indices",
    "low_mode_power",
    "StiffnessFit",
    "estimate_effective_stiffness",
    "ConvergenceRow",
    "ConvergenceTable",
    "StudyConfig",
    "scaling_limit_study",
    "covariance_study",
]


# ---------------------------------------------------------------------------
# scaled functions


def scale_test_function(f: TestFunction, geom: TorusGeometry) -> np.ndarray:
    if geom.alpha != 1.0:
        raise GeometryError(f"test functions are scaled with alpha = 1, torus has alpha = {geom.alpha}")
    M = geom.side
    return M ** (-geom.d / 2) * np.asarray(f(geom.coordinates() / M), dtype=np.float64)


def scale_window_function(J: TestFunction, z=None, alpha: float | None = None, geom: TorusGeometry = None) -> np.ndarray:
    """Sample ``J`` (supported in ``Q(z)``) on the lattice at scale ``L^{alpha N}``.

    Raises :class:`SupportOverflowError` when the scaled cube does not fit in
    the fundamental domain ``[-M/2, M/2]^d``.
    """
    if geom is None:
        raise TypeError("geom is required")
    alpha = geom.alpha if alpha is None else float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    d = geom.d
    if z is None:
        z = np.zeros(d) if J.center is None else J.center
    z = np.asarray(z, dtype=np.float64).reshape(d)
    s = float(geom.L) ** (alpha * geom.N)
    half = geom.side / 2
    reach = s * (np.abs(z) + 0.5)
    if np.any(reach > half * (1 + 1e-12)):
        raise SupportOverflowError(
            f"window of width {s:.4g} around {s * z} does not fit in a torus of side {geom.side}"
        )
    y = geom.coordinates() / s
    inside = np.all(np.abs(y - z.reshape((d,) + (1,) * d)) < 0.5, axis=0)
    vals = np.asarray(J(y), dtype=np.float64)
    return s ** (-d / 2) * np.where(inside, vals, 0.0)


# ---------------------------------------------------------------------------
# observables and estimators


def smoothed_gradient_observable(phi, g, d: int | None = None):
    """``sum_x sum_i grad_i phi(x) g_i(x)``; batched over leading axes of ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = g.ndim - 1 if d is None else d
    if g.shape[-d:] != phi.shape[phi.ndim - d:]:
        raise GeometryError(f"geometry mismatch: field {phi.shape} vs test function {g.shape}")
    return inner_product(gradient(phi, d), g, d + 1)


def _pairing(phi, ghat, d):
    return inner_product(phi, ghat, d)


def _observable_values(ens: Ensemble, g, key: str | None = None):
    if key is not None and key in ens.observables:
        return np.asarray(ens.observables[key], dtype=np.float64)
    if ens.samples is None:
        raise ValueError("ensemble has neither stored samples nor the requested observable")
    if len(ens) == 0:
        raise ValueError("empty ensemble")
    d = ens.geometry.d
    return _pairing(ens.samples, adjoint_divergence(g, d), d)


def laplace_from_values(x, n_blocks: int = 50):
    """Mean of ``exp(-x)`` with a blocked jackknife error."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty ensemble")
    if not np.any(x):
        return 1.0, 0.0
    val, se = jackknife(np.exp(-x), np.mean, n_blocks)
    return float(val), float(se)


def covariance_from_values(xa, xb, n_blocks: int = 50):
    """Unbiased sample covariance with a batch-means error.

    The error uses the centred products ``(xa - mean)(xb - mean)`` as the
    per-sample series, which is consistent to leading order.
    """
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    n = xa.shape[0]
    if n < 2:
        raise ValueError("covariance needs at least two samples")
    prod = (xa - xa.mean()) * (xb - xb.mean())
    value = float(prod.sum() / (n - 1))
    _, se = batch_means(prod, n_blocks)
    return value, float(se)


def laplace_transform_estimate(ens: Ensemble, g, n_blocks: int = 50, key: str | None = None):
    return laplace_from_values(_observable_values(ens, g, key), n_blocks)


def covariance_estimate(ens: Ensemble, ga, gb, n_blocks: int = 50, keys=(None, None)):
    xa = _observable_values(ens, ga, keys[0])
    xb = xa if gb is ga and keys[1] == keys[0] else _observable_values(ens, gb, keys[1])
    return covariance_from_values(xa, xb, n_blocks)


def discrete_quadratic_form(op, g, g2=None) -> float:
    """``(div* g, C div* g2)`` with ``g2 = g`` by default."""
    d = op.geometry.d
    ga = adjoint_divergence(g, d)
    gb = ga if g2 is None else adjoint_divergence(g2, d)
    return float(inner_product(ga, solve(op, gb), d))


# ---------------------------------------------------------------------------
# effective stiffness


def low_mode_indices(geom: TorusGeometry, cutoff: int) -> tuple:
    """Index arrays of the momenta with ``0 < |p|_inf <= cutoff`` in a half space.

    ``p`` and ``-p`` carry the same power for real fields, so only the
    representative whose first nonzero coordinate is positive is kept.
    """
    if cutoff < 1 or cutoff > geom.half_width:
        raise FitError(f"momentum cutoff must lie in [1, {geom.half_width}], got {cutoff}")
    keep = []
    for p in np.ndindex(*([2 * cutoff + 1] * geom.d)):
        p = tuple(c - cutoff for c in p)
        nz = [c for c in p if c != 0]
        if nz and nz[0] > 0:
            keep.append(p)
    idx = np.mod(np.array(keep), geom.side)
    return tuple(idx.T)


def low_mode_power(geom: TorusGeometry, cutoff: int):
    """Observable ``phi -> |phi^(p)|^2 / M^d`` for the low momenta, one row per field."""
    idx = low_mode_indices(geom, cutoff)
    d = geom.d

    def power(phi):
        spec = np.fft.fftn(phi, axes=tuple(range(phi.ndim - d, phi.ndim)))
        return np.abs(spec[(Ellipsis,) + idx]) ** 2 / geom.n_sites

    return power


@dataclass(frozen=True)
class StiffnessFit:
    q: Stiffness
    stderr: np.ndarray
    covariance: np.ndarray      # of the packed parameters (a_11, .., a_dd, a_12, ..)
    n_modes: int
    chi2: float


def _design(geom: TorusGeometry, cutoff: int) -> np.ndarray:
    e = difference_symbols(geom)
    idx = low_mode_indices(geom, cutoff)
    e = e[(slice(None),) + idx]  # (d, n_modes)
    d = geom.d
    cols = [np.abs(e[i]) ** 2 for i in range(d)]
    cols += [2.0 * np.real(np.conj(e[j]) * e[i]) for i in range(d) for j in range(i + 1, d)]
    return np.stack(cols, axis=1)


def _unpack(theta, d):
    a = np.diag(theta[:d]).astype(np.float64)
    k = d
    for i in range(d):
        for j in range(i + 1, d):
            a[i, j] = a[j, i] = theta[k]
            k += 1
    return a


def estimate_effective_stiffness(ens: Ensemble, momentum_cutoff: int = 2, n_blocks: int = 50,
                                 key: str = "low_mode_power") -> StiffnessFit:
    """Weighted least-squares fit of ``1 / S(p) = sum a_ij conj(e_j) e_i`` at low momenta.

    ``S(p)`` is the ensemble mean of ``|phi^(p)|^2 / M^d``; its batch-means
    error sets the weights, and the parameter errors are the usual
    ``(X^T W X)^{-1}`` ones.
    """
    geom = ens.geometry
    d = geom.d
    if key in ens.observables:
        power = np.asarray(ens.observables[key], dtype=np.float64)
    else:
        if ens.samples is None or len(ens) == 0:
            raise ValueError("empty ensemble")
        power = low_mode_power(geom, momentum_cutoff)(ens.samples)
    X = _design(geom, momentum_cutoff)
    if power.shape[1] != X.shape[0]:
        raise FitError("stored low-mode power does not match the requested cutoff")
    n_par = X.shape[1]
    if X.shape[0] < n_par + 1:
        raise FitError(f"{X.shape[0]} momenta cannot determine {n_par} stiffness parameters")
    S, S_se = batch_means(power, n_blocks)
    if np.any(S <= 0) or np.any(S_se <= 0):
        raise FitError("degenerate power spectrum estimate")
    y = 1.0 / S
    sigma = S_se / S**2
    Xw = X / sigma[:, None]
    yw = y / sigma
    if np.linalg.cond(Xw) > 1e12:
        raise FitError("stiffness fit is ill-conditioned")
    theta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    resid = yw - Xw @ theta
    a = _unpack(theta, d)
    se = _unpack(np.sqrt(np.diag(cov)), d)
    q = a - np.eye(d)
    return StiffnessFit(Stiffness(q), se, cov, X.shape[0], float(resid @ resid))


# ---------------------------------------------------------------------------
# convergence tables

COLUMNS = ("N", "estimate", "reference", "abs_error", "stderr", "runtime_s")


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    estimate: float
    reference: float
    abs_error: float
    stderr: float
    runtime_s: float


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        Ns = [r.N for r in self.rows]
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValueError(f"N must be strictly increasing, got {Ns}")

    def append(self, row: ConvergenceRow):
        if self.rows and row.N <= self.rows[-1].N:
            raise ValueError("N must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path=None, record_runtime: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            vals = [r.N] + [repr(float(getattr(r, c))) for c in COLUMNS[1:-1]]
            vals.append(repr(float(r.runtime_s)) if record_runtime else "0.0")
            w.writerow(vals)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "ConvergenceTable":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [ConvergenceRow(int(r[0]), *map(float, r[1:])) for r in reader if r]
        return cls(rows)


# ---------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class StudyConfig:
    """Sampling and reference settings shared by the two studies.

    ``sampler`` is used whenever the potential is not identically zero; for
    ``V = 0`` the exact Gaussian sampler is used. Its ``n_steps`` is derived
    from ``samples`` and ``n_chains``.
    """

    d: int = 2
    L: int = 3
    sampler: MCMCConfig | None = None
    momentum_cutoff: int = 1
    n_blocks: int = 50
    truncation: int = 64
    quadrature: RdQuadrature = field(default_factory=RdQuadrature)


def _seed_for(seed: int, N: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(N)]).generate_state(1)[0])


def _run_ensemble(pot: Potential, geom: TorusGeometry, samples: int, seed: int, cfg: StudyConfig,
                  observables: dict, q_gauss) -> Ensemble:
    if pot.is_zero and not np.any(pot.tilt(geom.d)):
        return exact_ensemble(assemble_symbol(q_gauss, geom), samples, seed, observables, store=False)
    base = cfg.sampler or MCMCConfig()
    per_chain = max(2, math.ceil(samples / base.n_chains))
    mc = replace(base, n_steps=per_chain * base.thinning, seed=seed)
    return mcmc_sample(pot, geom, mc, observables, store=False)


def _reference_with_error(fn, fit: StiffnessFit | None, q_ref: Stiffness):
    """Reference value and its error propagated from the fitted stiffness."""
    val = fn(q_ref)
    if fit is None:
        return val, 0.0
    d = q_ref.d
    n_par = fit.covariance.shape[0]
    grad = np.zeros(n_par)
    for k in range(n_par):
        h = max(1e-4, 1e-3 * math.sqrt(fit.covariance[k, k]))
        theta = np.zeros(n_par)
        theta[k] = h
        da = _unpack(theta, d)
        grad[k] = (fn(Stiffness(q_ref.q + da)) - fn(Stiffness(q_ref.q - da))) / (2 * h)
    return val, float(math.sqrt(max(grad @ fit.covariance @ grad, 0.0)))


def _prepare_reference_stiffness(pot, qbar_source, ensembles, cfg, d):
    """``(q_ref, fit)`` from a fixed stiffness or from the last ensemble."""
    if isinstance(qbar_source, str) and qbar_source == "auto":
        qbar_source = "zero" if pot.is_zero else "fit"
    if isinstance(qbar_source, str) and qbar_source == "fit":
        fit = estimate_effective_stiffness(ensembles[-1], cfg.momentum_cutoff, cfg.n_blocks)
        return fit.q, fit
    if isinstance(qbar_source, str) and qbar_source == "zero":
        return Stiffness.zero(d), None
    return as_stiffness(qbar_source, d), None


def scaling_limit_study(pot: Potential, qbar_source, f: TestFunction, N_range, samples: int, seed: int,
                        cfg: StudyConfig | None = None, map_fn=map) -> ConvergenceTable:
    """Laplace transform of ``(grad phi, f^N)`` against ``exp(C(f, qbar) / 2)``.

    ``qbar_source`` is ``"auto"`` (zero stiffness for ``V = 0``, else a fit on
    the largest-``N`` ensemble), ``"fit"``, ``"zero"`` or an explicit
    stiffness. For ``V = 0`` the field is sampled exactly from the Gaussian
    measure with stiffness zero. ``map_fn`` runs the per-level work items
    (for instance an executor's ``map``); seeds depend only on ``(seed, N)``.
    """
    cfg = cfg or StudyConfig(d=f.d)
    Ns = list(N_range)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("N_range must be increasing")
    d = cfg.d

    def work(N):
        t0 = time.perf_counter()
        geom = TorusGeometry(d, cfg.L, N)
        ghat = adjoint_divergence(scale_test_function(f, geom), d)
        obs = {"X": lambda phi, g=ghat: _pairing(phi, g, d)}
        if N == Ns[-1]:
            obs["low_mode_power"] = low_mode_power(geom, min(cfg.momentum_cutoff, geom.half_width))
        if not np.any(ghat):
            return N, None, time.perf_counter() - t0, ghat
        ens = _run_ensemble(pot, geom, samples, _seed_for(seed, N), cfg, obs, None)
        return N, ens, time.perf_counter() - t0, ghat

    runs = list(map_fn(work, Ns))

    ensembles = [r[1] for r in runs if r[1] is not None]
    zero_f = not ensembles
    if zero_f:
        q_ref, fit = Stiffness.zero(d), None
    else:
        q_ref, fit = _prepare_reference_stiffness(pot, qbar_source, ensembles, cfg, d)

    def ref_fn(q):
        return math.exp(0.5 * continuum_torus_covariance(f, q, cfg.truncation))

    if zero_f:
        ref, ref_se, tail = 1.0, 0.0, 0.0
    else:
        ref, ref_se = _reference_with_error(ref_fn, fit, q_ref)
        tail = ref * 0.5 * continuum_torus_covariance(f, q_ref, cfg.truncation, full_output=True).tail

    table = ConvergenceTable(metadata={
        "kind": "laplace",
        "q_ref": q_ref.q.tolist(),
        "q_ref_stderr": None if fit is None else fit.stderr.tolist(),
        "reference_stderr": ref_se,
        "truncation_tail": tail,
        "diagnostics": {},
    })
    for N, ens, runtime, _ in runs:
        if ens is None:
            table.append(ConvergenceRow(N, 1.0, ref, abs(1.0 - ref), 0.0, runtime))
            continue
        t0 = time.perf_counter()
        est, se = laplace_from_values(ens.observables["X"], cfg.n_blocks)
        table.append(ConvergenceRow(N, est, ref, abs(est - ref), se, runtime + time.perf_counter() - t0))
        table.metadata["diagnostics"][str(N)] = {k: v for k, v in ens.diagnostics.items() if k != "wall_time_s"}
    return table


def covariance_study(pot: Potential, Ja: TestFunction, Jb: TestFunction, alpha: float, N_range, samples: int,
                     seed: int, cfg: StudyConfig | None = None, qbar_source="auto",
                     map_fn=map) -> ConvergenceTable:
    """Covariance of ``(grad phi, J_a^N)`` and ``(grad phi, J_b^N)`` against the R^d form."""
    cfg = cfg or StudyConfig(d=Ja.d)
    Ns = list(N_range)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("N_range must be increasing")
    d = cfg.d

    def work(N):
        t0 = time.perf_counter()
        geom = TorusGeometry(d, cfg.L, N, alpha)
        ga = adjoint_divergence(scale_window_function(Ja, None, alpha, geom), d)
        gb = adjoint_divergence(scale_window_function(Jb, None, alpha, geom), d)
        obs = {"Xa": lambda phi, g=ga: _pairing(phi, g, d), "Xb": lambda phi, g=gb: _pairing(phi, g, d)}
        if N == Ns[-1]:
            obs["low_mode_power"] = low_mode_power(geom, min(cfg.momentum_cutoff, geom.half_width))
        ens = _run_ensemble(pot, geom, samples, _seed_for(seed, N), cfg, obs, None)
        return N, ens, time.perf_counter() - t0

    runs = list(map_fn(work, Ns))

    q_ref, fit = _prepare_reference_stiffness(pot, qbar_source, [r[1] for r in runs], cfg, d)
    ref, ref_se = _reference_with_error(
        lambda q: continuum_rd_covariance(Ja, Jb, q, cfg.quadrature), fit, q_ref)
    table = ConvergenceTable(metadata={
        "kind": "covariance",
        "alpha": alpha,
        "q_ref": q_ref.q.tolist(),
        "q_ref_stderr": None if fit is None else fit.stderr.tolist(),
        "reference_stderr": ref_se,
        "diagnostics": {},
    })
    for N, ens, runtime in runs:
        t0 = time.perf_counter()
        est, se = covariance_from_values(ens.observables["Xa"], ens.observables["Xb"], cfg.n_blocks)
        table.append(ConvergenceRow(N, est, ref, abs(est - ref), se, runtime + time.perf_counter() - t0))
        table.metadata["diagnostics"][str(N)] = {k: v for k, v in ens.diagnostics.items() if k != "wall_time_s"}
    return table
