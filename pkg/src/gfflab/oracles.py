"""Dense reference computations for small tori.

Everything here builds explicit ``(M^d, M^d)`` matrices from the real-space
difference stencils and never touches the Fourier path, so it can be used to
check the spectral code. Practical up to roughly a thousand sites.
"""
from __future__ import annotations

import numpy as np

from .lattice import adjoint_difference, forward_difference

MAX_DENSE_SITES = 1000


def stencil_apply(a: np.ndarray, phi: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """``sum_ij a_ij D*_j D_i phi`` with difference quotients of the given spacing."""
    d = phi.ndim
    out = np.zeros_like(phi, dtype=np.float64)
    for i in range(d):
        di = forward_difference(phi, i) / spacing
        for j in range(d):
            if a[i, j] != 0.0:
                out += a[i, j] * adjoint_difference(di, j) / spacing
    return out


def dense_operator(a: np.ndarray, shape: tuple, spacing: float = 1.0) -> np.ndarray:
    a = np.atleast_2d(a)
    n = int(np.prod(shape))
    if n > MAX_DENSE_SITES:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_SITES} sites, got {n}")
    A = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        A[:, k] = stencil_apply(a, e.reshape(shape), spacing).reshape(-1)
    return A


def dense_pinv(a: np.ndarray, shape: tuple, spacing: float = 1.0) -> np.ndarray:
    return np.linalg.pinv(dense_operator(a, shape, spacing), rcond=1e-12, hermitian=True)


def dense_solve(a: np.ndarray, rhs: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    return (dense_pinv(a, rhs.shape, spacing) @ rhs.reshape(-1)).reshape(rhs.shape)


def dense_kernel(a: np.ndarray, shape: tuple, spacing: float = 1.0) -> np.ndarray:
    """Column of the pseudo-inverse belonging to the origin, reshaped as a field."""
    return dense_pinv(a, shape, spacing)[:, 0].reshape(shape)
