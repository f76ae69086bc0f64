"""Massless lattice Gaussian free field with stiffness ``a = I + q``.

The operator ``A^q = sum_ij a_ij adj_j fwd_i`` is diagonal in the discrete
Fourier basis. Its inverse is taken on the mean-zero space by dropping the
zero mode, which is the unique inverse there.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import EllipticityError, GeometryError
from .lattice import TorusGeometry, check_mean_zero, inner_product

__all__ = [
    "Stiffness",
    "SpectralOperator",
    "assemble_symbol",
    "apply_operator",
    "solve",
    "greens_kernel",
    "convolve_kernel",
    "sample_gff",
    "log_partition",
    "gaussian_laplace_functional",
    "shifted_expectation_check",
    "ShiftCheck",
]

# Operator-norm bound on q under which the Gaussian reference measure is
# known to admit the finite range decomposition used by the theory.
RHO_1 = 0.5
ELLIPTICITY_MARGIN = 1e-6


@dataclass(frozen=True)
class Stiffness:
    """Symmetric perturbation ``q`` of the identity stiffness; ``a = I + q``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, ndmin=2)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"q must be a square matrix, got shape {q.shape}")
        if not np.allclose(q, q.T, rtol=0.0, atol=1e-14):
            raise ValueError("q must be symmetric")
        q = 0.5 * (q + q.T)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        norm = self.norm
        if norm > 1.0 - ELLIPTICITY_MARGIN or np.linalg.eigvalsh(self.a).min() < ELLIPTICITY_MARGIN:
            raise EllipticityError(f"||q|| = {norm:.6g}: stiffness I + q is not uniformly elliptic")
        if norm > RHO_1:
            warnings.warn(f"||q|| = {norm:.3g} exceeds {RHO_1}", RuntimeWarning, stacklevel=3)

    @classmethod
    def zero(cls, d: int) -> "Stiffness":
        return cls(np.zeros((d, d)))

    @classmethod
    def random(cls, d: int, rng, norm: float = 0.4) -> "Stiffness":
        """Random symmetric ``q`` with the given operator norm."""
        m = rng.standard_normal((d, d))
        m = m + m.T
        return cls(norm * m / np.linalg.norm(m, 2))

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def a(self) -> np.ndarray:
        return np.eye(self.d) + self.q

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.q, 2))

    def __eq__(self, other):
        return isinstance(other, Stiffness) and np.array_equal(self.q, other.q)

    def __hash__(self):
        return hash(self.q.tobytes())


def as_stiffness(q, d: int) -> Stiffness:
    if q is None:
        return Stiffness.zero(d)
    if isinstance(q, Stiffness):
        s = q
    else:
        s = Stiffness(np.asarray(q, dtype=np.float64).reshape(d, d) if np.size(q) == d * d else q)
    if s.d != d:
        raise GeometryError(f"stiffness is {s.d}x{s.d} but the torus has d={d}")
    return s


def difference_symbols(geom: TorusGeometry) -> np.ndarray:
    """``e_i(p) = exp(2 pi i p_i / M) - 1`` for every momentum, shape ``(d,) + shape``."""
    M = geom.side
    p = np.arange(M)
    e1 = np.exp(2j * np.pi * p / M) - 1.0
    grids = np.meshgrid(*([e1] * geom.d), indexing="ij")
    return np.stack(grids)


def stiffness_symbol(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    """``sum_ij a_ij conj(e_j) e_i``, real for symmetric ``a``."""
    lam = np.einsum("ij,j...,i...->...", a, np.conj(e), e).real
    return lam


@dataclass(frozen=True)
class SpectralOperator:
    """Fourier multiplier table of ``A^q`` on one torus."""

    geometry: TorusGeometry
    stiffness: Stiffness
    symbol: np.ndarray

    @property
    def inverse_symbol(self) -> np.ndarray:
        lam = self.symbol
        out = np.zeros_like(lam)
        nz = lam > 0
        out[nz] = 1.0 / lam[nz]
        return out

    def _half(self, table: np.ndarray) -> np.ndarray:
        return table[..., : self.geometry.side // 2 + 1]


def assemble_symbol(stiffness, geom: TorusGeometry) -> SpectralOperator:
    stiffness = as_stiffness(stiffness, geom.d)
    lam = stiffness_symbol(stiffness.a, difference_symbols(geom))
    lam[(0,) * geom.d] = 0.0
    if np.any(lam.reshape(-1)[1:] <= 0):
        raise EllipticityError("operator symbol vanishes at a nonzero momentum")
    lam.setflags(write=False)
    return SpectralOperator(geom, stiffness, lam)


def _check_shape(op: SpectralOperator, phi: np.ndarray):
    d = op.geometry.d
    if phi.shape[phi.ndim - d:] != op.geometry.shape:
        raise GeometryError(f"field shape {phi.shape} does not match torus {op.geometry.shape}")


def _multiply(op: SpectralOperator, phi: np.ndarray, table: np.ndarray) -> np.ndarray:
    d = op.geometry.d
    axes = tuple(range(phi.ndim - d, phi.ndim))
    spec = np.fft.rfftn(phi, axes=axes)
    return np.fft.irfftn(spec * op._half(table), s=op.geometry.shape, axes=axes)


def apply_operator(op: SpectralOperator, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    _check_shape(op, phi)
    return _multiply(op, phi, op.symbol)


def solve(op: SpectralOperator, rhs) -> np.ndarray:
    """Mean-zero solution ``u`` of ``A^q u = rhs``; batched over leading axes."""
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_shape(op, rhs)
    check_mean_zero(rhs, d=op.geometry.d)
    return _multiply(op, rhs, op.inverse_symbol)


def greens_kernel(op: SpectralOperator) -> np.ndarray:
    """Translation-invariant kernel ``C(x)`` with ``(C f)(x) = sum_y C(x-y) f(y)`` on mean-zero f."""
    return np.fft.ifftn(op.inverse_symbol).real


def convolve_kernel(kernel: np.ndarray, f) -> np.ndarray:
    """Periodic convolution ``sum_y kernel(x - y) f(y)``."""
    f = np.asarray(f, dtype=np.float64)
    d = kernel.ndim
    axes = tuple(range(f.ndim - d, f.ndim))
    return np.fft.irfftn(np.fft.rfftn(f, axes=axes) * np.fft.rfftn(kernel), s=kernel.shape, axes=axes)


def sample_gff(op: SpectralOperator, rng, size: int | None = None) -> np.ndarray:
    """Exact samples of the mean-zero Gaussian field with covariance ``C^q``.

    White noise is filtered by the real symmetric circulant with multiplier
    ``lambda(p)^{-1/2}`` (zero on the constant mode), so the covariance is
    exactly ``C^q`` and every sample is real and mean-zero.
    """
    shape = op.geometry.shape if size is None else (size,) + op.geometry.shape
    white = rng.standard_normal(shape)
    return _multiply(op, white, np.sqrt(op.inverse_symbol))


def log_partition(op: SpectralOperator) -> float:
    """``sum_{p != 0} 1/2 log(2 pi / lambda(p))`` in the zero-mode-removed chart."""
    lam = op.symbol.reshape(-1)[1:]
    return float(0.5 * np.sum(np.log(2.0 * np.pi / lam)))


def gaussian_laplace_functional(op: SpectralOperator, f, log: bool = False) -> float:
    """``E[exp(-(phi, f))] = exp((f, C f) / 2)`` for mean-zero ``f``."""
    f = np.asarray(f, dtype=np.float64)
    val = 0.5 * float(inner_product(f, solve(op, f)))
    return val if log else float(np.exp(val))


class ShiftCheck(NamedTuple):
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float


def _mc_mean(op, rng, n, chunk, fn):
    vals = []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        vals.append(np.asarray(fn(sample_gff(op, rng, m)), dtype=np.float64))
        done += m
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def shifted_expectation_check(
    op: SpectralOperator,
    F: Callable[[np.ndarray], np.ndarray],
    f,
    n_samples: int,
    rng,
    chunk: int = 10_000,
) -> ShiftCheck:
    """Monte Carlo estimates of both sides of the Gaussian shift identity

        E[exp(-(phi, f)) F(phi)] = exp((f, C f) / 2) E[F(phi - C f)].

    ``F`` maps a batch of fields ``(n,) + shape`` to ``n`` values. The two
    sides use independent samples so their standard errors combine in
    quadrature.
    """
    f = np.asarray(f, dtype=np.float64)
    d = op.geometry.d
    Cf = solve(op, f)
    weight = gaussian_laplace_functional(op, f)
    lhs, lhs_se = _mc_mean(op, rng, n_samples, chunk, lambda phi: np.exp(-inner_product(phi, f, d)) * F(phi))
    m, m_se = _mc_mean(op, rng, n_samples, chunk, lambda phi: F(phi - Cf))
    return ShiftCheck(lhs, lhs_se, weight * m, weight * m_se)
