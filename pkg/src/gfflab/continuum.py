"""Continuum reference values for the Gaussian free field.

``continuum_torus_covariance`` sums the Fourier series of
``(div f, C div f)`` on the unit torus, where ``C`` inverts
``-sum a_ij d_j d_i`` on mean-zero functions. ``continuum_rd_covariance``
evaluates ``(div* Ja, C div* Jb)`` on R^d in polar coordinates. After the
substitution ``k = r w`` the integrand is
``conj(w . Ja^(r w)) (w . Jb^(r w)) r^(d-1) / (w . a w)``, which is bounded at
the origin, so plain adaptive quadrature in ``r`` is enough.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .gaussian import as_stiffness
from .testfunctions import TestFunction


@dataclass(frozen=True)
class TorusSeries:
    value: float
    tail: float
    truncation: int
    n_quad: int


def _centered_grid(n: int, d: int) -> np.ndarray:
    ax = np.fft.fftfreq(n)  # j/n folded into [-1/2, 1/2)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"))


def continuum_torus_covariance(f: TestFunction, qbar=None, truncation: int = 64, n_quad: int | None = None,
                               full_output: bool = False):
    """``sum_{0<|k|_inf<=T} |sum_j k_j f^_j(k)|^2 / (k . a k)``.

    Fourier coefficients come from the trapezoid rule on an ``n_quad``-point
    grid per axis, which is spectrally accurate for smooth periodic ``f``.
    The reported tail is the contribution of the outermost shell
    ``|k|_inf = T``, a proxy for the truncation error.
    """
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    d = f.d
    a = as_stiffness(qbar, d).a
    if n_quad is None:
        n_quad = 4 * truncation if d <= 2 else 2 * truncation + 2
    if n_quad < 2 * truncation + 1:
        raise ValueError("n_quad must resolve the truncated modes (n_quad >= 2T+1)")
    vals = np.asarray(f(_centered_grid(n_quad, d)), dtype=np.float64)
    if vals.shape[0] != d:
        raise ValueError("continuum_torus_covariance needs a vector field with d components")
    fhat = np.fft.fftn(vals, axes=tuple(range(1, d + 1))) / n_quad**d
    k1 = np.rint(np.fft.fftfreq(n_quad) * n_quad)
    ks = np.stack(np.meshgrid(*([k1] * d), indexing="ij"))
    kinf = np.max(np.abs(ks), axis=0)
    keep = (kinf >= 1) & (kinf <= truncation)
    num = np.abs(np.einsum("i...,i...->...", ks, fhat)) ** 2
    den = np.einsum("i...,ij,j...->...", ks, a, ks)
    terms = np.where(keep, num / np.where(keep, den, 1.0), 0.0)
    value = float(terms.sum())
    tail = float(terms[kinf == truncation].sum())
    if full_output:
        return TorusSeries(value, tail, truncation, n_quad)
    return value


@dataclass(frozen=True)
class RdQuadrature:
    rtol: float = 1e-6
    n_nodes: int = 128         # midpoint nodes per axis for the window transforms
    n_angles: int = 32         # initial angular resolution, doubled until converged
    max_angles: int = 1024
    r_max: float | None = None


@dataclass(frozen=True)
class RdResult:
    value: float
    abs_error: float
    r_max: float
    n_angles: int


class _WindowTransform:
    """``J^(k) = int J(x) exp(-2 pi i k.x) dx`` by the midpoint rule on ``Q(z)``."""

    def __init__(self, J: TestFunction, n: int):
        d = J.d
        z = np.zeros(d) if J.center is None else np.asarray(J.center, dtype=np.float64)
        self.d = d
        self.nodes = (np.arange(n) + 0.5) / n - 0.5
        grid = np.stack(np.meshgrid(*([self.nodes] * d), indexing="ij")) + z.reshape((d,) + (1,) * d)
        vals = np.asarray(J(grid), dtype=np.float64)
        if vals.shape[0] != d:
            raise ValueError("windows must be vector fields with d components")
        self.values = vals / n**d
        self.z = z

    def __call__(self, k: np.ndarray) -> np.ndarray:
        """``k`` has shape (m, d); returns (m, d) complex."""
        n = self.nodes.size
        m = k.shape[0]
        phases = [np.exp(-2j * np.pi * np.outer(k[:, i], self.nodes)) for i in range(self.d)]
        out = np.empty((m, self.d), dtype=np.complex128)
        for c in range(self.d):
            t = phases[0] @ self.values[c].reshape(n, -1)  # (m, n^(d-1))
            for i in range(1, self.d):
                t = np.einsum("mj,mj...->m...", phases[i], t.reshape((m, n, -1)))
            out[:, c] = t.reshape(m)
        return out * np.exp(-2j * np.pi * (k @ self.z))[:, None]


def _directions(d: int, n: int):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=1), np.full(n, 2 * np.pi / n)
    if d == 3:
        x, wx = np.polynomial.legendre.leggauss(n // 2)
        ph = 2 * np.pi * np.arange(n) / n
        ct, p = np.meshgrid(x, ph, indexing="ij")
        st = np.sqrt(1 - ct**2)
        w = np.stack([st * np.cos(p), st * np.sin(p), ct], axis=-1).reshape(-1, 3)
        return w, np.outer(wx, np.full(n, 2 * np.pi / n)).ravel()
    raise ValueError("continuum_rd_covariance supports d in {1, 2, 3}")


def _radial_cutoff(Ta, Tb, w, d, rtol):
    """Smallest power-of-two radius beyond which the integrand is negligible."""
    peak = 0.0
    r = 0.5
    history = []
    while r < 4096:
        k = r * w
        val = np.abs(np.sum(w * Ta(k), axis=1)) * np.abs(np.sum(w * Tb(k), axis=1))
        m = float(val.max()) * r ** (d - 1)
        peak = max(peak, m)
        history.append(m)
        if len(history) >= 3 and max(history[-2:]) < 1e-3 * rtol * peak:
            return r
        r *= 2
    return r


def continuum_rd_covariance(Ja: TestFunction, Jb: TestFunction, qbar=None, quad: RdQuadrature | None = None,
                            full_output: bool = False):
    """``(div* Ja, C div* Jb)`` on R^d with ``C = (-sum a_ij d_j d_i)^(-1)``."""
    quad = quad or RdQuadrature()
    d = Ja.d
    a = as_stiffness(qbar, d).a
    Ta = _WindowTransform(Ja, quad.n_nodes)
    Tb = Ta if Jb is Ja else _WindowTransform(Jb, quad.n_nodes)
    nyquist = quad.n_nodes / 2

    def integrate_angles(n_ang):
        w, wts = _directions(d, n_ang)
        denom = np.einsum("mi,ij,mj->m", w, a, w)
        r_max = quad.r_max or min(_radial_cutoff(Ta, Tb, w, d, quad.rtol), nyquist)

        def radial(r):
            k = r * w
            na = np.sum(w * Ta(k), axis=1)
            nb = na if Tb is Ta else np.sum(w * Tb(k), axis=1)
            return float(np.sum(wts * np.real(np.conj(na) * nb) / denom)) * r ** (d - 1)

        val, err = integrate.quad(radial, 0.0, r_max, epsrel=quad.rtol * 0.1, epsabs=0.0, limit=200)
        return val, err, r_max

    # absolute floor for forms that vanish (e.g. divergence-free windows)
    floor = 1e-12 * np.sqrt(np.sum(Ta.values**2) * np.sum(Tb.values**2)) * quad.n_nodes**d
    n = quad.n_angles
    prev, err, r_max = integrate_angles(n)
    converged = d == 1
    while not converged and 2 * n <= quad.max_angles:
        n *= 2
        val, err, r_max = integrate_angles(n)
        diff = abs(val - prev)
        prev = val
        converged = diff <= max(quad.rtol * abs(val), floor)
        err = max(err, diff)
    if not converged:
        warnings.warn(f"angular quadrature did not reach rtol={quad.rtol}; achieved abs error {err:.3g}",
                      RuntimeWarning, stacklevel=2)
    if full_output:
        return RdResult(prev, err, r_max, n)
    return prev
