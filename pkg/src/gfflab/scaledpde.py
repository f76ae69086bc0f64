"""The rescaled lattice ``Lambda'_N = Lambda_N / L^{alpha N}``.

Sites are spaced ``eps = L^{-alpha N}`` apart and fill a continuum torus of
side ``R_N = L^{(1 - alpha) N}``. Difference quotients divide by ``eps``; the
``l2`` product carries the weight ``eps^d``. Arrays use the same index
convention as :mod:`gfflab.lattice`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import GeometryError
from .gaussian import Stiffness, as_stiffness, assemble_symbol, greens_kernel, solve
from .lattice import TorusGeometry, adjoint_difference, forward_difference, inner_product, multi_indices
from .oracles import dense_pinv
from .testfunctions import TestFunction

__all__ = [
    "ScaledTorus",
    "scaled_difference",
    "scaled_divergence_adjoint",
    "scaled_inner_products",
    "ScaledSolution",
    "scaled_solve",
    "sup_bound_check",
    "KernelScalingResult",
    "kernel_scaling_check",
    "poincare_constant",
]


@dataclass(frozen=True)
class ScaledTorus:
    """``alpha`` may be 0 here (no rescaling), unlike on :class:`TorusGeometry`."""

    d: int
    L: int
    N: int
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise GeometryError(f"alpha must lie in [0, 1], got {self.alpha}")
        TorusGeometry(self.d, self.L, self.N)  # validates d, L, N

    @classmethod
    def from_geometry(cls, geom: TorusGeometry, alpha: float | None = None) -> "ScaledTorus":
        return cls(geom.d, geom.L, geom.N, geom.alpha if alpha is None else alpha)

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.d, self.L, self.N)

    @property
    def side(self) -> int:
        return self.L**self.N

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    @property
    def spacing(self) -> float:
        return float(self.L) ** (-self.alpha * self.N)

    @property
    def side_length(self) -> float:
        return float(self.L) ** ((1.0 - self.alpha) * self.N)

    @property
    def side_exponent(self) -> Fraction:
        """``log_L R_N`` as an exact rational, equal to ``N - alpha N``."""
        a = Fraction(self.alpha).limit_denominator(10**6)
        return self.N - a * self.N

    def coordinates(self) -> np.ndarray:
        """Continuum positions of the sites, inside ``[-R_N/2, R_N/2]^d``."""
        return self.geometry.coordinates() * self.spacing


def _check(phi, st: ScaledTorus):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[phi.ndim - st.d:] != st.shape:
        raise GeometryError(f"field shape {phi.shape} does not match scaled torus {st.shape}")
    return phi


def scaled_difference(phi, j: int, st: ScaledTorus, adjoint: bool = False) -> np.ndarray:
    phi = _check(phi, st)
    op = adjoint_difference if adjoint else forward_difference
    return op(phi, j, st.d) / st.spacing


def scaled_divergence_adjoint(h, st: ScaledTorus) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    comps = np.moveaxis(h, h.ndim - st.d - 1, 0)
    return sum(scaled_difference(comps[l], l, st, adjoint=True) for l in range(st.d))


def scaled_inner_products(phi, psi, st: ScaledTorus):
    """``(<phi, psi>_l2, <phi, psi>_w12)``."""
    phi = _check(phi, st)
    psi = _check(psi, st)
    w = st.spacing**st.d
    l2 = w * inner_product(phi, psi, st.d)
    grad = sum(
        inner_product(scaled_difference(phi, k, st), scaled_difference(psi, k, st), st.d) for k in range(st.d)
    )
    return l2, l2 + w * grad


def _l2_norm(phi, st):
    return float(np.sqrt(scaled_inner_products(phi, phi, st)[0]))


@dataclass(frozen=True)
class ScaledSolution:
    u: np.ndarray
    w12_norm: float
    grad_norm: float
    g_norm: float
    residual: float


def _scaled_apply(a, u, st):
    out = np.zeros_like(u)
    for i in range(st.d):
        di = scaled_difference(u, i, st)
        for j in range(st.d):
            if a[i, j] != 0.0:
                out += a[i, j] * scaled_difference(di, j, st, adjoint=True)
    return out


def scaled_solve(a, g, l: int, st: ScaledTorus) -> ScaledSolution:
    """Mean-zero ``u`` with ``A_N u = D*_{N,l} g`` and its a-priori norms.

    Spectral division by the scaled symbol ``lambda(p) / eps^2``.
    """
    stiff = as_stiffness(a, st.d)
    g = _check(g, st)
    if not 0 <= l < st.d:
        raise GeometryError(f"direction {l} out of range for d={st.d}")
    op = assemble_symbol(stiff, st.geometry)
    rhs = scaled_difference(g, l, st, adjoint=True)
    u = st.spacing**2 * solve(op, rhs)
    _, w12 = scaled_inner_products(u, u, st)
    grad = np.sqrt(sum(_l2_norm(scaled_difference(u, k, st), st) ** 2 for k in range(st.d)))
    g_norm = _l2_norm(g, st)
    res = _l2_norm(_scaled_apply(stiff.a, u, st) - rhs, st)
    return ScaledSolution(u, float(np.sqrt(w12)), float(grad), g_norm, res)


@dataclass(frozen=True)
class SupBound:
    sup: float
    bound_ratio: float
    ck_norm: float
    growth: float        # L^{2 (1 - alpha) N}
    n_points: int        # sampling resolution used for the C^d norm


def sup_bound_check(a, g: TestFunction, st: ScaledTorus, l: int = 0, oversample: int = 1) -> SupBound:
    """``sup |u_N|`` and its ratio to ``L^{2(1-alpha)N} ||g||_{C^d}``.

    ``g`` is a scalar function of the continuum position; its ``C^d`` norm
    is the largest derivative of order ``<= d`` over the sites, optionally
    refined by ``oversample`` points per lattice spacing.
    """
    x = st.coordinates()
    gvals = np.asarray(g(x), dtype=np.float64)
    sol = scaled_solve(a, gvals, l, st)
    sup = float(np.max(np.abs(sol.u)))
    if oversample > 1:
        n = st.side * oversample
        ax = (np.arange(n) - n // 2) * st.spacing / oversample
        pts = np.stack(np.meshgrid(*([ax] * st.d), indexing="ij"))
    else:
        pts = x
    cd = g.ck_norm(st.d, pts) if np.any(gvals) else 0.0
    growth = float(st.L) ** (2 * (1 - st.alpha) * st.N)
    ratio = sup / (growth * cd) if cd > 0 else 0.0
    return SupBound(sup, ratio, cd, growth, int(np.prod(pts.shape[1:])))


@dataclass(frozen=True)
class KernelScalingResult:
    kernel: float           # max |C_N - eps^{2-d} C^q| over sites
    solution: float         # max |grad_k C^q grad*_l g^N - eps^{d/2} (D_k C_N D*_l g)| over k, l, sites
    quadratic_form: float   # |(grad*_l f^N, C^q grad*_l g^N) - <D*_l f, C_N D*_l g>_l2| over l
    max_abs_discrepancy: float


def kernel_scaling_check(q, geom: TorusGeometry, alpha: float | None = None, seed: int = 0) -> KernelScalingResult:
    """Compare the scaled and unscaled inverse kernels, assembled independently.

    The scaled side is a dense pseudo-inverse of the real-space stencil with
    spacing ``eps``; the unscaled side is the spectral Green's kernel. With
    the ``eps^d`` weight of the ``l2`` product the scaled kernel is
    ``C_N = eps^{-d} P`` where ``P`` is the pseudo-inverse matrix.

    The solution identity carries a factor ``eps^{d/2}`` on the scaled side:
    with ``g^N(x) = eps^{d/2} g(eps x)`` the two sides differ by exactly that
    power, so it is included here.
    """
    alpha = geom.alpha if alpha is None else alpha
    st = ScaledTorus(geom.d, geom.L, geom.N, alpha)
    d, eps, shape = st.d, st.spacing, st.shape
    stiff = as_stiffness(q, d)
    P = dense_pinv(stiff.a, shape, eps)
    C_scaled = P[:, 0].reshape(shape) / eps**d
    op = assemble_symbol(stiff, st.geometry)
    C_unscaled = greens_kernel(op)
    kernel_err = float(np.max(np.abs(C_scaled - eps ** (2 - d) * C_unscaled)))

    rng = np.random.default_rng(seed)
    f = rng.standard_normal(shape)
    g = rng.standard_normal(shape)
    fN = eps ** (d / 2) * f
    gN = eps ** (d / 2) * g
    sol_err = 0.0
    form_err = 0.0
    for l in range(d):
        lhs_field = solve(op, adjoint_difference(gN, l, d))
        Dg = scaled_difference(g, l, st, adjoint=True)
        CN_Dg = (P @ Dg.reshape(-1)).reshape(shape)
        for k in range(d):
            lhs = forward_difference(lhs_field, k, d)
            rhs = eps ** (d / 2) * scaled_difference(CN_Dg, k, st)
            sol_err = max(sol_err, float(np.max(np.abs(lhs - rhs))))
        form_lhs = float(inner_product(adjoint_difference(fN, l, d), lhs_field, d))
        form_rhs = float(scaled_inner_products(scaled_difference(f, l, st, adjoint=True), CN_Dg, st)[0])
        form_err = max(form_err, abs(form_lhs - form_rhs))
    return KernelScalingResult(kernel_err, sol_err, form_err, max(kernel_err, sol_err, form_err))


def poincare_constant(st: ScaledTorus) -> float:
    """``1 / lambda_min`` of ``sum_k D*_k D_k`` on mean-zero fields.

    The smallest nonzero multiplier is ``4 sin^2(pi / M) / eps^2`` in every
    dimension (one momentum component equal to 1, the rest 0).
    """
    lam = 4.0 * np.sin(np.pi / st.side) ** 2 / st.spacing**2
    return float(1.0 / lam)
