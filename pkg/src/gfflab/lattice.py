"""Periodic lattice geometry and exact discrete calculus.

Fields are plain ``numpy`` arrays whose trailing ``d`` axes index the torus
sites. Along each axis the array index ``k`` holds the site with centered
coordinate ``k`` for ``k <= (M-1)/2`` and ``k - M`` otherwise, so the origin
sits at index 0 and negative coordinates wrap by Euclidean modulo. Any leading
axes are treated as a batch (an ensemble of fields, or the components of a
vector field).

Directions are 0-based: ``i`` in ``range(d)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import EvenBaseError, GeometryError, NonZeroMeanError

__all__ = [
    "TorusGeometry",
    "ScalarField",
    "VectorField",
    "make_torus",
    "periodic_distance",
    "forward_difference",
    "adjoint_difference",
    "gradient",
    "adjoint_divergence",
    "multi_indices",
    "multiindex_gradient",
    "gradient_magnitude",
    "project_mean_zero",
    "check_mean_zero",
    "inner_product",
]


@dataclass(frozen=True)
class TorusGeometry:
    """The torus ``(Z / L^N Z)^d`` represented by the centered cube.

    ``alpha`` is the window scaling exponent used by the scaled setting; it
    does not change the lattice itself.
    """

    d: int
    L: int
    N: int
    alpha: float = 1.0

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise GeometryError(f"dimension must be a positive integer, got {self.d!r}")
        if not isinstance(self.L, (int, np.integer)) or self.L < 3 or self.L % 2 == 0:
            raise EvenBaseError(f"base L must be an odd integer >= 3, got {self.L!r}")
        if not isinstance(self.N, (int, np.integer)) or self.N < 0:
            raise GeometryError(f"level N must be a non-negative integer, got {self.N!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise GeometryError(f"alpha must lie in (0, 1], got {self.alpha!r}")

    @property
    def side(self) -> int:
        return int(self.L) ** int(self.N)

    @property
    def n_sites(self) -> int:
        return self.side ** self.d

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    @property
    def half_width(self) -> int:
        return (self.side - 1) // 2

    def axis_coordinates(self) -> np.ndarray:
        """Centered integer coordinate held by each array index along an axis."""
        M = self.side
        k = np.arange(M)
        return np.where(k <= (M - 1) // 2, k, k - M)

    def coordinates(self) -> np.ndarray:
        """Integer site coordinates, shape ``(d,) + shape``."""
        c = self.axis_coordinates()
        return np.stack(np.meshgrid(*([c] * self.d), indexing="ij"))

    def index_of(self, x) -> tuple:
        """Array index of the site with (possibly uncentered) coordinates ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if x.shape != (self.d,):
            raise GeometryError(f"site must have {self.d} coordinates, got {x.shape}")
        return tuple(int(v) for v in np.mod(x, self.side))

    def with_level(self, N: int) -> "TorusGeometry":
        return TorusGeometry(self.d, self.L, N, self.alpha)


def make_torus(d: int, L: int, N: int, alpha: float = 1.0) -> TorusGeometry:
    return TorusGeometry(d, L, N, alpha)


@dataclass
class ScalarField:
    """A real field on a torus together with its mean-zero flag."""

    geometry: TorusGeometry
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.geometry.shape:
            raise GeometryError(
                f"values of shape {self.values.shape} do not match torus {self.geometry.shape}"
            )
        if self.mean_zero:
            check_mean_zero(self.values, tol=1e-12 * self.geometry.n_sites)


@dataclass
class VectorField:
    """One real component per direction, shape ``(d,) + geometry.shape``."""

    geometry: TorusGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.geometry.d,) + self.geometry.shape
        if self.values.shape != expected:
            raise GeometryError(f"vector field must have shape {expected}, got {self.values.shape}")


def _lattice_axes(phi: np.ndarray, d: int | None) -> tuple:
    d = phi.ndim if d is None else d
    if d < 1 or d > phi.ndim:
        raise GeometryError(f"cannot treat array of ndim {phi.ndim} as a {d}-dimensional field")
    return tuple(range(phi.ndim - d, phi.ndim)), d


def _axis(phi: np.ndarray, i: int, d: int | None) -> int:
    axes, d = _lattice_axes(phi, d)
    if not 0 <= i < d:
        raise GeometryError(f"direction {i} out of range for d={d}")
    return axes[i]


def periodic_distance(x, y, geom: TorusGeometry) -> int:
    """Sup-norm distance between two sites, minimised over lattice shifts."""
    M = geom.side
    delta = np.mod(np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64), M)
    return int(np.max(np.minimum(delta, M - delta), initial=0))


def forward_difference(phi, i: int, d: int | None = None) -> np.ndarray:
    """``phi(x + e_i) - phi(x)`` with periodic wrap."""
    phi = np.asarray(phi, dtype=np.float64)
    ax = _axis(phi, i, d)
    return np.roll(phi, -1, axis=ax) - phi


def adjoint_difference(phi, i: int, d: int | None = None) -> np.ndarray:
    """``phi(x - e_i) - phi(x)``, the adjoint of :func:`forward_difference`."""
    phi = np.asarray(phi, dtype=np.float64)
    ax = _axis(phi, i, d)
    return np.roll(phi, 1, axis=ax) - phi


def gradient(phi, d: int | None = None) -> np.ndarray:
    """Stack of forward differences; the direction axis is inserted before the lattice axes."""
    phi = np.asarray(phi, dtype=np.float64)
    axes, d = _lattice_axes(phi, d)
    return np.stack([forward_difference(phi, i, d) for i in range(d)], axis=axes[0])


def adjoint_divergence(g, d: int | None = None) -> np.ndarray:
    """``sum_l adjoint_difference(g_l, l)`` for ``g`` of shape ``batch + (d,) + lattice``.

    The result always sums to zero over the torus.
    """
    g = np.asarray(g, dtype=np.float64)
    d = g.ndim - 1 if d is None else d
    comp_axis = g.ndim - d - 1
    if g.shape[comp_axis] != d:
        raise GeometryError(f"expected {d} components on axis {comp_axis}, got {g.shape[comp_axis]}")
    comps = np.moveaxis(g, comp_axis, 0)
    return sum(adjoint_difference(comps[l], l, d) for l in range(d))


def multi_indices(d: int, s: int):
    """All ``alpha`` in ``N^d`` with ``|alpha| = s`` (compositions, not ordered words)."""
    for bars in itertools.combinations(range(s + d - 1), d - 1):
        prev, alpha = -1, []
        for b in bars:
            alpha.append(b - prev - 1)
            prev = b
        alpha.append(s + d - 2 - prev)
        yield tuple(alpha)


def multiindex_gradient(phi, alpha, d: int | None = None) -> np.ndarray:
    """``nabla^alpha phi``: forward differences applied ``alpha[i]`` times along each axis."""
    out = np.asarray(phi, dtype=np.float64)
    _, d = _lattice_axes(out, d)
    alpha = tuple(alpha)
    if len(alpha) != d or any(a < 0 for a in alpha):
        raise GeometryError(f"multi-index {alpha} invalid for d={d}")
    for i, a in enumerate(alpha):
        for _ in range(a):
            out = forward_difference(out, i, d)
    return out


def gradient_magnitude(phi, s: int, d: int | None = None) -> np.ndarray:
    """Pointwise ``|nabla^s phi(x)| = sqrt(sum_{|alpha|=s} |nabla^alpha phi(x)|^2)``."""
    if s < 1:
        raise ValueError("order s must be >= 1")
    phi = np.asarray(phi, dtype=np.float64)
    _, d = _lattice_axes(phi, d)
    out = np.zeros_like(phi)
    for a in multi_indices(d, s):
        out = np.hypot(out, multiindex_gradient(phi, a, d))  # no underflow for tiny fields
    return out


def project_mean_zero(phi, d: int | None = None) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    axes, _ = _lattice_axes(phi, d)
    return phi - phi.mean(axis=axes, keepdims=True)


def check_mean_zero(phi, tol: float | None = None, d: int | None = None) -> None:
    """Raise :class:`NonZeroMeanError` if any field in ``phi`` has ``|sum| > tol``.

    The default tolerance is ``1e-9`` times the number of sites.
    """
    phi = np.asarray(phi, dtype=np.float64)
    axes, _ = _lattice_axes(phi, d)
    n = int(np.prod([phi.shape[a] for a in axes]))
    tol = 1e-9 * n if tol is None else tol
    total = np.abs(phi.sum(axis=axes))
    if np.any(total > tol):
        raise NonZeroMeanError(f"field sum {np.max(total):.3e} exceeds tolerance {tol:.1e}")


def inner_product(phi, psi, d: int | None = None):
    """Unweighted site sum ``(phi, psi)``; batched over leading axes.

    numpy reduces with pairwise summation, which keeps the rounding error
    at ``O(log n)`` ulps for the lattice sizes used here.
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    dd = phi.ndim if d is None else d
    if phi.shape[phi.ndim - dd:] != psi.shape[psi.ndim - dd:]:
        raise GeometryError(f"geometry mismatch: {phi.shape} vs {psi.shape}")
    prod = phi * psi
    axes = tuple(range(prod.ndim - dd, prod.ndim))
    return prod.sum(axis=axes)
