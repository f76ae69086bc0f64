"""The non-convex gradient model on the torus.

The nearest-neighbour potential is ``W(eta) = eta^2 / 2 + V(eta)`` with a
tilt ``u`` applied as ``W(grad_i phi + u_i)``; the inverse temperature is 1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .gaussian import as_stiffness
from .lattice import (
    TorusGeometry,
    adjoint_difference,
    check_mean_zero,
    forward_difference,
    gradient,
    inner_product,
    multi_indices,
)

__all__ = [
    "Potential",
    "register_potential",
    "make_potential",
    "available_potentials",
    "taylor_remainder",
    "k_perturbation",
    "KNormConfig",
    "KNormResult",
    "k_norm",
    "hamiltonian",
    "quadratic_energy",
    "reweighting_factor",
    "log_reweighting_factor",
    "mean_zero_basis",
    "gibbs_expectation_quadrature",
    "reweighted_gaussian_quadrature",
]


@dataclass(frozen=True)
class Potential:
    """Perturbation ``V`` with derivatives and tilt ``u``.

    ``derivatives[k]`` is the ``(k+1)``-th derivative of ``V``. All callables
    act elementwise on arrays.
    """

    V: Callable
    derivatives: tuple
    u: tuple = (0.0,)
    name: str = "custom"
    is_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(x) for x in np.atleast_1d(self.u)))
        object.__setattr__(self, "derivatives", tuple(self.derivatives))
        if len(self.derivatives) < 2:
            raise ValueError("supply at least V' and V''")

    @property
    def dV(self):
        return self.derivatives[0]

    def tilt(self, d: int) -> np.ndarray:
        u = np.asarray(self.u, dtype=np.float64)
        if u.size == 1 and d > 1:
            u = np.full(d, u[0])
        if u.size != d:
            raise ValueError(f"tilt has {u.size} components, torus has d={d}")
        return u

    def with_tilt(self, u) -> "Potential":
        return Potential(self.V, self.derivatives, tuple(np.atleast_1d(u)), self.name, self.is_zero)

    def check_derivatives(self, probe=None, h: float = 1e-4, rtol: float = 1e-6) -> None:
        """Compare each supplied derivative with a central difference of the previous one."""
        probe = np.linspace(-2.0, 2.0, 41) if probe is None else np.asarray(probe, dtype=np.float64)
        chain = (self.V,) + self.derivatives
        for k in range(1, len(chain)):
            fd = (chain[k - 1](probe + h) - chain[k - 1](probe - h)) / (2 * h)
            exact = chain[k](probe)
            scale = np.maximum(np.abs(exact), np.max(np.abs(exact)) + 1.0)
            if np.max(np.abs(fd - exact) / scale) > rtol:
                raise ValueError(f"{self.name}: derivative {k} inconsistent with V")


_REGISTRY: dict = {}


def register_potential(name: str, factory: Callable[..., Potential]) -> None:
    """Register ``factory(*params) -> Potential`` under ``name``."""
    _REGISTRY[name] = factory


def available_potentials():
    return sorted(_REGISTRY)


def make_potential(spec: str, u=0.0) -> Potential:
    """Build a potential from ``"name"`` or ``"name:p1,p2"``, e.g. ``"quartic:0.01"``."""
    name, _, params = spec.partition(":")
    if name not in _REGISTRY:
        raise KeyError(f"unknown potential {name!r}; available: {', '.join(available_potentials())}")
    args = [float(p) for p in params.split(",")] if params else []
    return _REGISTRY[name](*args).with_tilt(u)


def _zero():
    z = lambda x: np.zeros_like(np.asarray(x, dtype=np.float64))
    return Potential(z, (z, z, z, z), name="zero", is_zero=True)


def _quartic(eps):
    return Potential(
        lambda x: eps * x**4,
        (
            lambda x: 4 * eps * x**3,
            lambda x: 12 * eps * x**2,
            lambda x: 24 * eps * x,
            lambda x: np.full_like(np.asarray(x, dtype=np.float64), 24 * eps),
        ),
        name=f"quartic:{eps:g}",
        is_zero=eps == 0,
    )


def _double_well(eps, a):
    # eps (x^2 - a^2)^2 - eps a^4, shifted so that V(0) = 0
    return Potential(
        lambda x: eps * (x**4 - 2 * a**2 * x**2),
        (
            lambda x: eps * (4 * x**3 - 4 * a**2 * x),
            lambda x: eps * (12 * x**2 - 4 * a**2),
            lambda x: 24 * eps * x,
            lambda x: np.full_like(np.asarray(x, dtype=np.float64), 24 * eps),
        ),
        name=f"double-well:{eps:g},{a:g}",
        is_zero=eps == 0,
    )


def _cosine(eps, k):
    return Potential(
        lambda x: eps * (1 - np.cos(k * x)),
        (
            lambda x: eps * k * np.sin(k * x),
            lambda x: eps * k**2 * np.cos(k * x),
            lambda x: -eps * k**3 * np.sin(k * x),
            lambda x: -eps * k**4 * np.cos(k * x),
        ),
        name=f"cosine:{eps:g},{k:g}",
        is_zero=eps == 0 or k == 0,
    )


register_potential("zero", _zero)
register_potential("quartic", _quartic)
register_potential("double-well", _double_well)
register_potential("cosine", _cosine)


def taylor_remainder(pot: Potential, s, t):
    """``U(s, t) = V(s + t) - V(t) - V'(t) s``."""
    s, t = np.broadcast_arrays(np.asarray(s, dtype=np.float64), np.asarray(t, dtype=np.float64))
    # same shape on both V calls keeps U(0, t) exactly zero
    return pot.V(np.array(s + t)) - pot.V(np.array(t)) - pot.dV(t) * s


def k_perturbation(pot: Potential, z):
    """``K(z) = exp(-sum_i U(z_i, u_i)) - 1`` for ``z`` of shape ``(..., d)``."""
    z = np.asarray(z, dtype=np.float64)
    u = pot.tilt(z.shape[-1])
    return np.expm1(-np.sum(taylor_remainder(pot, z, u), axis=-1))


@dataclass(frozen=True)
class KNormConfig:
    zeta: float = 1.0
    r0: int = 3
    grid_halfwidth: float | None = None
    grid_step: float = 0.05
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.zeta <= 0 or self.grid_step <= 0 or self.fd_step <= 0 or self.r0 < 0:
            raise ValueError("zeta, grid_step, fd_step must be positive and r0 >= 0")
        if self.grid_halfwidth is None:
            object.__setattr__(self, "grid_halfwidth", 1.01 * math.sqrt(12 * math.log(10)) / self.zeta)
        if math.exp(-self.zeta**2 * self.grid_halfwidth**2) >= 1e-12:
            raise ValueError("grid_halfwidth too small: Gaussian weight at the edge must be < 1e-12")


class KNormResult(NamedTuple):
    value: float
    argmax: np.ndarray
    grid_step: float
    fd_step: float


def _fd_stencil(alpha, h):
    """Offsets and weights of nested central differences for multi-index ``alpha``."""
    per_axis = []
    for k in alpha:
        pts = [((k - 2 * j) * h, (-1) ** j * math.comb(k, j) / (2 * h) ** k) for j in range(k + 1)]
        per_axis.append(pts)
    for combo in itertools.product(*per_axis):
        yield np.array([c[0] for c in combo]), math.prod(c[1] for c in combo)


def k_norm(pot: Potential, cfg: KNormConfig, d: int | None = None) -> KNormResult:
    """Grid approximation of ``sup_z sum_{|alpha|<=r0} zeta^|alpha| |d^alpha K(z)| exp(-zeta^2 |z|^2)``.

    Derivatives use nested central differences with step ``cfg.fd_step``. The
    grid supremum approximates the true one from below.
    """
    d = len(pot.u) if d is None else d
    n = int(round(cfg.grid_halfwidth / cfg.grid_step))
    axis = np.arange(-n, n + 1) * cfg.grid_step
    z = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    total = np.zeros(z.shape[0])
    for order in range(cfg.r0 + 1):
        for alpha in multi_indices(d, order):
            deriv = np.zeros(z.shape[0])
            for offset, w in _fd_stencil(alpha, cfg.fd_step):
                deriv += w * k_perturbation(pot, z + offset)
            total += cfg.zeta**order * np.abs(deriv)
    total *= np.exp(-cfg.zeta**2 * np.sum(z**2, axis=1))
    k = int(np.argmax(total))
    return KNormResult(float(total[k]), z[k], cfg.grid_step, cfg.fd_step)


def _grads(phi, d):
    return gradient(phi, d)  # shape batch + (d,) + lattice


def _per_component(x, d, values):
    """Broadcast a length-d vector onto the direction axis of a gradient stack."""
    shape = (d,) + (1,) * d
    return np.asarray(values, dtype=np.float64).reshape(shape)


def quadratic_energy(phi, d: int | None = None, method: str = "gradient"):
    """``E(phi) = (A^0 phi, phi) / 2 = sum_x sum_i (grad_i phi(x))^2 / 2``."""
    phi = np.asarray(phi, dtype=np.float64)
    d = phi.ndim if d is None else d
    if method == "gradient":
        g = _grads(phi, d)
        return 0.5 * np.sum(g**2, axis=tuple(range(phi.ndim - d, phi.ndim + 1)))
    if method == "operator":
        A0phi = sum(adjoint_difference(forward_difference(phi, i, d), i, d) for i in range(d))
        return 0.5 * inner_product(A0phi, phi, d)
    raise ValueError(f"unknown method {method!r}")


def hamiltonian(pot: Potential, phi, d: int | None = None):
    """``H(phi) = E(phi) + M^d |u|^2 / 2 + sum_x sum_i V(grad_i phi(x) + u_i)`` on mean-zero fields."""
    phi = np.asarray(phi, dtype=np.float64)
    d = phi.ndim if d is None else d
    check_mean_zero(phi, d=d)
    n_sites = int(np.prod(phi.shape[phi.ndim - d:]))
    u = pot.tilt(d)
    g = _grads(phi, d)
    axes = tuple(range(phi.ndim - d, phi.ndim + 1))
    energy = 0.5 * np.sum(g**2, axis=axes)
    energy = energy + 0.5 * n_sites * float(u @ u)
    if not pot.is_zero:
        energy = energy + np.sum(pot.V(g + _per_component(g, d, u)), axis=axes)
    return energy


def log_reweighting_factor(pot: Potential, stiffness, lambda_q: float, phi, d: int | None = None):
    """``(q grad phi, grad phi)/2 + lambda_q M^d - sum_x sum_i U(grad_i phi(x), u_i)``."""
    phi = np.asarray(phi, dtype=np.float64)
    d = phi.ndim if d is None else d
    check_mean_zero(phi, d=d)
    q = as_stiffness(stiffness, d).q
    n_sites = int(np.prod(phi.shape[phi.ndim - d:]))
    g = _grads(phi, d)
    comp = phi.ndim - d  # direction axis of g
    lat = tuple(range(comp + 1, g.ndim))
    gm = np.moveaxis(g, comp, -1)  # batch + lattice + (d,)
    quad = np.einsum("...i,ij,...j->...", gm, q, gm)
    quad = np.sum(quad, axis=tuple(range(quad.ndim - d, quad.ndim)))
    u = pot.tilt(d)
    U = np.sum(taylor_remainder(pot, g, _per_component(g, d, u)), axis=(comp,) + lat)
    return 0.5 * quad + lambda_q * n_sites - U


def reweighting_factor(pot: Potential, stiffness, lambda_q: float, phi, d: int | None = None):
    """``F(phi)``, the density of the Gibbs measure relative to the Gaussian ``mu^q`` (up to a constant)."""
    return np.exp(log_reweighting_factor(pot, stiffness, lambda_q, phi, d))


def mean_zero_basis(n_sites: int) -> np.ndarray:
    """Orthonormal basis of the sum-zero hyperplane, shape ``(n_sites, n_sites - 1)``.

    In these coordinates the Hausdorff measure on the hyperplane is plain
    Lebesgue measure.
    """
    m = np.eye(n_sites)[:, 1:] - np.eye(n_sites)[:, :1]
    qmat, _ = np.linalg.qr(m)
    return qmat


def _tensor_grid(k: int, nodes: np.ndarray, weights: np.ndarray):
    mesh = np.meshgrid(*([nodes] * k), indexing="ij")
    wmesh = np.meshgrid(*([weights] * k), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    w = np.prod(np.stack([m.reshape(-1) for m in wmesh], axis=1), axis=1)
    return pts, w


def gibbs_expectation_quadrature(
    pot: Potential,
    geom: TorusGeometry,
    observable: Callable[[np.ndarray], np.ndarray],
    n_nodes: int = 201,
    halfwidth: float = 12.0,
) -> float:
    """``E_nu[observable]`` by a trapezoid tensor grid over the mean-zero chart.

    Only sensible for tori with at most three free coordinates.
    """
    n = geom.n_sites
    if n - 1 > 3:
        raise ValueError("tensor-grid quadrature limited to 3 free coordinates")
    B = mean_zero_basis(n)
    nodes = np.linspace(-halfwidth, halfwidth, n_nodes)
    pts, w = _tensor_grid(n - 1, nodes, np.ones(n_nodes))
    phi = (pts @ B.T).reshape((-1,) + geom.shape)
    phi -= phi.mean(axis=tuple(range(1, phi.ndim)), keepdims=True)
    H = hamiltonian(pot, phi, geom.d)
    dens = w * np.exp(-(H - H.min()))
    return float(np.sum(dens * observable(phi)) / np.sum(dens))


def reweighted_gaussian_quadrature(
    pot: Potential,
    stiffness,
    lambda_q: float,
    geom: TorusGeometry,
    observable: Callable[[np.ndarray], np.ndarray],
    n_nodes: int = 80,
) -> float:
    """``int obs F dmu^q / int F dmu^q`` with Gauss-Hermite nodes adapted to ``mu^q``."""
    from .oracles import dense_operator

    n = geom.n_sites
    if n - 1 > 3:
        raise ValueError("tensor-grid quadrature limited to 3 free coordinates")
    st = as_stiffness(stiffness, geom.d)
    B = mean_zero_basis(n)
    P = B.T @ dense_operator(st.a, geom.shape) @ B
    R = np.linalg.cholesky(P)
    y, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    pts, wt = _tensor_grid(n - 1, y, w)
    c = np.linalg.solve(R.T, pts.T).T
    phi = (c @ B.T).reshape((-1,) + geom.shape)
    phi -= phi.mean(axis=tuple(range(1, phi.ndim)), keepdims=True)
    logF = log_reweighting_factor(pot, st, lambda_q, phi, geom.d)
    dens = wt * np.exp(logF - logF.max())
    return float(np.sum(dens * observable(phi)) / np.sum(dens))
