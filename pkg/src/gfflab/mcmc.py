"""Sampling the Gibbs measure on mean-zero fields.

Both samplers are Fourier accelerated: the Langevin drift and noise (MALA) or
the kinetic energy (HMC) are preconditioned by the covariance of a Gaussian
reference ``mu^{q_pre}``. Proposals therefore never leave the mean-zero space,
and for ``V = 0`` the target and the preconditioner coincide, which makes the
chains decorrelate in a handful of steps. Step sizes are tuned during burn-in
only and frozen afterwards, so the post burn-in chain is exactly stationary.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import SamplerDivergence
from .gaussian import SpectralOperator, assemble_symbol, sample_gff
from .gibbs import Potential, hamiltonian
from .lattice import TorusGeometry, adjoint_difference, gradient, project_mean_zero
from .stats import integrated_autocorr_time

log = logging.getLogger(__name__)

__all__ = ["MCMCConfig", "Ensemble", "mcmc_sample", "exact_ensemble", "gibbs_force"]


@dataclass
class MCMCConfig:
    n_steps: int = 2000
    burn_in: int = 500
    thinning: int = 1
    seed: int = 0
    algorithm: str = "mala"
    n_chains: int = 32
    step_size: float | None = None
    target_accept: float | None = None
    n_leapfrog: int = 8
    adapt: bool = True
    preconditioner_q: object = None

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("mala", "hmc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}; use 'mala' or 'hmc'")
        if min(self.n_steps, self.thinning, self.n_chains, self.n_leapfrog) < 1 or self.burn_in < 0:
            raise ValueError("n_steps, thinning, n_chains, n_leapfrog must be positive")
        if self.target_accept is None:
            self.target_accept = 0.6 if self.algorithm == "mala" else 0.75
        if self.step_size is None:
            self.step_size = 1.0 if self.algorithm == "mala" else 0.3


@dataclass
class Ensemble:
    """Field samples plus provenance.

    ``samples`` (if stored) has shape ``(n, ...)`` with ``n = n_chains * per_chain``
    in chain-major order, so contiguous blocks are contiguous stretches of a
    single chain. ``observables`` holds per-sample traces recorded on the fly.
    """

    geometry: TorusGeometry
    sampler: str
    seed: int
    samples: np.ndarray | None = None
    observables: dict = field(default_factory=dict)
    n_chains: int = 1
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __len__(self):
        if self.samples is not None:
            return self.samples.shape[0]
        for v in self.observables.values():
            return len(v)
        return 0

    def energies(self) -> np.ndarray:
        if "energy" in self.observables:
            return self.observables["energy"]
        from .gibbs import quadratic_energy

        return quadratic_energy(self.samples, self.geometry.d)


def _op_multiply(op: SpectralOperator, phi, table):
    d = op.geometry.d
    axes = tuple(range(phi.ndim - d, phi.ndim))
    half = table[..., : op.geometry.side // 2 + 1]
    return np.fft.irfftn(np.fft.rfftn(phi, axes=axes) * half, s=op.geometry.shape, axes=axes)


def gibbs_force(pot: Potential, phi: np.ndarray, d: int) -> np.ndarray:
    """Gradient of ``H`` with respect to ``phi``; mean-zero by construction."""
    g = gradient(phi, d)
    comp = phi.ndim - d
    if not pot.is_zero:
        u = pot.tilt(d).reshape((d,) + (1,) * d)
        g = g + pot.dV(g + u)
    comps = np.moveaxis(g, comp, 0)
    return sum(adjoint_difference(comps[i], i, d) for i in range(d))


def _jsonable(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if hasattr(v, "q"):
            v = v.q
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _lattice_sum(x, d):
    return x.sum(axis=tuple(range(x.ndim - d, x.ndim)))


def exact_ensemble(op: SpectralOperator, n: int, seed: int, observables=None, store=True, chunk=5000) -> Ensemble:
    """Independent exact samples of ``mu^q`` packaged as an :class:`Ensemble`."""
    rng = np.random.default_rng(seed)
    observables = observables or {}
    traces = {k: [] for k in observables}
    kept = []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        phi = sample_gff(op, rng, m)
        for k, fn in observables.items():
            traces[k].append(np.asarray(fn(phi)))
        if store:
            kept.append(phi)
        done += m
    return Ensemble(
        geometry=op.geometry,
        sampler="exact",
        seed=seed,
        samples=np.concatenate(kept) if store else None,
        observables={k: np.concatenate(v) for k, v in traces.items()},
        n_chains=1,
        diagnostics={"acceptance_rate": 1.0, "tau_int_energy": 1.0},
    )


def mcmc_sample(
    pot: Potential,
    geom: TorusGeometry,
    config: MCMCConfig,
    observables: dict | None = None,
    store: bool = True,
    init: np.ndarray | None = None,
) -> Ensemble:
    """Run ``config.n_chains`` parallel chains targeting ``exp(-H)`` on mean-zero fields.

    ``observables`` maps names to functions of a batch of fields returning one
    value (or row) per field; they are evaluated on every kept sample. Set
    ``store=False`` to keep only the observable traces.
    """
    d = geom.d
    rng = np.random.default_rng(config.seed)
    pre = assemble_symbol(config.preconditioner_q, geom)
    K = pre.inverse_symbol
    sqrtK = np.sqrt(K)
    A = pre.symbol
    sqrtA = np.sqrt(A)
    observables = dict(observables or {})
    nc = config.n_chains
    shape = (nc,) + geom.shape

    if init is None:
        phi = sample_gff(pre, rng, nc)
    else:
        phi = project_mean_zero(np.broadcast_to(init, shape).copy(), d)

    def energy(x):
        return hamiltonian(pot, x, d)

    H = energy(phi)
    force = gibbs_force(pot, phi, d)
    log_h = np.log(config.step_size)
    n_total = config.burn_in + config.n_steps
    n_kept = config.n_steps // config.thinning
    traces = {k: [] for k in observables}
    traces_energy = np.empty((n_kept, nc))
    kept = np.empty((n_kept,) + shape) if store else None
    accepted = 0.0
    k_out = 0
    t0 = time.perf_counter()

    for t in range(n_total):
        h = float(np.exp(log_h))
        if config.algorithm == "mala":
            noise = _op_multiply(pre, rng.standard_normal(shape), sqrtK)
            mean_fwd = phi - 0.5 * h * h * _op_multiply(pre, force, K)
            prop = project_mean_zero(mean_fwd + h * noise, d)
            H_new = energy(prop)
            force_new = gibbs_force(pot, prop, d)
            mean_bwd = prop - 0.5 * h * h * _op_multiply(pre, force_new, K)
            r_fwd = prop - mean_fwd
            r_bwd = phi - mean_bwd
            log_q_fwd = -_lattice_sum(r_fwd * _op_multiply(pre, r_fwd, A), d) / (2 * h * h)
            log_q_bwd = -_lattice_sum(r_bwd * _op_multiply(pre, r_bwd, A), d) / (2 * h * h)
            log_acc = -(H_new - H) + log_q_bwd - log_q_fwd
        else:
            p = _op_multiply(pre, rng.standard_normal(shape), sqrtA)
            kin0 = 0.5 * _lattice_sum(p * _op_multiply(pre, p, K), d)
            prop = phi.copy()
            f = force
            p = p - 0.5 * h * f
            for k in range(config.n_leapfrog):
                prop = prop + h * _op_multiply(pre, p, K)
                f = gibbs_force(pot, prop, d)
                if k < config.n_leapfrog - 1:
                    p = p - h * f
            p = p - 0.5 * h * f
            prop = project_mean_zero(prop, d)
            H_new = energy(prop)
            force_new = f
            kin1 = 0.5 * _lattice_sum(p * _op_multiply(pre, p, K), d)
            log_acc = -(H_new + kin1 - H - kin0)

        if not np.all(np.isfinite(H_new)):
            raise SamplerDivergence(
                f"non-finite energy at step {t}",
                {"step": t, "step_size": h, "energy": H_new.tolist()},
            )
        acc = np.log(rng.random(nc)) < log_acc
        phi = np.where(acc.reshape((nc,) + (1,) * d), prop, phi)
        H = np.where(acc, H_new, H)
        force = np.where(acc.reshape((nc,) + (1,) * d), force_new, force)
        rate = float(np.mean(np.minimum(1.0, np.exp(np.minimum(log_acc, 0.0)))))

        if t < config.burn_in:
            if config.adapt:
                log_h += (rate - config.target_accept) / (t + 1) ** 0.6
            continue
        accepted += acc.mean()
        s = t - config.burn_in
        if (s + 1) % config.thinning == 0 and k_out < n_kept:
            traces_energy[k_out] = 0.5 * _lattice_sum(np.sum(gradient(phi, d) ** 2, axis=1), d)
            for name, fn in observables.items():
                traces[name].append(np.asarray(fn(phi)))
            if store:
                kept[k_out] = phi
            k_out += 1

    elapsed = time.perf_counter() - t0
    acc_rate = accepted / max(config.n_steps, 1)
    tau = integrated_autocorr_time(traces_energy.T)
    diagnostics = {
        "acceptance_rate": float(acc_rate),
        "step_size": float(np.exp(log_h)),
        "tau_int_energy": tau,
        "n_chains": nc,
        "n_per_chain": n_kept,
        "wall_time_s": elapsed,
    }
    log.info("%s: acceptance %.3f, tau_int(E) %.2f, step %.3g", config.algorithm, acc_rate, tau, np.exp(log_h))

    def chain_major(x):
        x = np.asarray(x)
        return np.swapaxes(x, 0, 1).reshape((-1,) + x.shape[2:])

    obs_out = {k: chain_major(np.stack(v)) for k, v in traces.items()}
    obs_out["energy"] = chain_major(traces_energy)
    return Ensemble(
        geometry=geom,
        sampler=config.algorithm,
        seed=config.seed,
        samples=chain_major(kept) if store else None,
        observables=obs_out,
        n_chains=nc,
        diagnostics=diagnostics,
        config=_jsonable(asdict(config)),
    )
