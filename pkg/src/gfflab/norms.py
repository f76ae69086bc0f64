"""Field norm, large-field regulator and the measured bounds built on them.

For a field on ``Lambda_N`` with ``h > 0``::

    |phi|_N = max_{s=1..3} sup_x h^{-1} L^{N((d-2)/2 + s)} |grad^s phi(x)|

with ``|grad^s phi(x)|^2 = sum_{|alpha|=s} |grad^alpha phi(x)|^2``. The
regulator is ``w_N(phi) = exp(sum_x omega (2^d g_x + G_x))`` and is returned
in log space.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .gaussian import as_stiffness, assemble_symbol, solve
from .lattice import ScalarField, TorusGeometry, adjoint_difference, adjoint_divergence, gradient_magnitude
from .scaling import ConvergenceRow, ConvergenceTable, scale_test_function, scale_window_function
from .testfunctions import TestFunction

__all__ = [
    "RegulatorConfig",
    "field_norm",
    "pointwise_quantities",
    "regulator_densities",
    "RegulatorValue",
    "large_field_regulator",
    "regulator_bound_check",
    "tau",
    "tau_bound_check",
]


@dataclass(frozen=True)
class RegulatorConfig:
    h: float = 1.0
    omega: float = 1.0
    r0: int = 3

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if int(self.r0) != self.r0 or self.r0 < 0:
            raise ValueError(f"r0 must be a non-negative integer, got {self.r0}")


def _unpack(phi, geom):
    if isinstance(phi, ScalarField):
        return phi.values, phi.geometry if geom is None else geom
    if geom is None:
        raise GeometryError("a geometry is required for bare arrays")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[phi.ndim - geom.d:] != geom.shape:
        raise GeometryError(f"field shape {phi.shape} does not match torus {geom.shape}")
    return phi, geom


def field_norm(phi, geom: TorusGeometry | None = None, cfg: RegulatorConfig | None = None,
               level: int | None = None):
    """``|phi|_{N, Lambda_N}``; batched over leading axes.

    ``level`` overrides the ``N`` used in the scale factors (the lattice is
    still the one the array lives on).
    """
    cfg = cfg or RegulatorConfig()
    phi, geom = _unpack(phi, geom)
    d, L = geom.d, float(geom.L)
    N = geom.N if level is None else level
    axes = tuple(range(phi.ndim - d, phi.ndim))
    best = 0.0
    for s in (1, 2, 3):
        sup = np.max(gradient_magnitude(phi, s, d), axis=axes)
        best = np.maximum(best, L ** (N * ((d - 2) / 2 + s)) * sup / cfg.h)
    return best if np.ndim(best) else float(best)


def regulator_densities(phi, geom: TorusGeometry | None = None, cfg: RegulatorConfig | None = None):
    """``(G_x as a field, g)``; ``g_x`` does not depend on ``x``."""
    cfg = cfg or RegulatorConfig()
    phi, geom = _unpack(phi, geom)
    d, L, N = geom.d, float(geom.L), geom.N
    mags = {s: gradient_magnitude(phi, s, d) ** 2 for s in (1, 2, 3, 4)}
    G = (mags[1] + L ** (2 * N) * mags[2] + L ** (4 * N) * mags[3]) / cfg.h**2
    axes = tuple(range(phi.ndim - d, phi.ndim))
    g = sum(L ** ((2 * s - 2) * N) * np.max(mags[s], axis=axes) for s in (2, 3, 4)) / cfg.h**2
    return G, g


def pointwise_quantities(phi, x, geom: TorusGeometry | None = None, cfg: RegulatorConfig | None = None):
    """``(G_{N,x}, g_{N,x})`` at the site with centered coordinates ``x``."""
    phi_arr, geom = _unpack(phi, geom)
    G, g = regulator_densities(phi_arr, geom, cfg)
    return float(G[geom.index_of(x)]), float(g)


@dataclass(frozen=True)
class RegulatorValue:
    log_value: float
    value: float | None   # None when exp(log_value) overflows

    def __float__(self):
        return math.inf if self.value is None else self.value


def large_field_regulator(phi, geom: TorusGeometry | None = None, cfg: RegulatorConfig | None = None) -> RegulatorValue:
    cfg = cfg or RegulatorConfig()
    phi, geom = _unpack(phi, geom)
    G, g = regulator_densities(phi, geom, cfg)
    log_w = cfg.omega * (geom.n_sites * 2**geom.d * float(g) + float(G.sum()))
    value = math.exp(log_w) if log_w < 709.0 else None
    return RegulatorValue(float(log_w), value)


def regulator_bound_check(q, f: TestFunction, N_range, cfg: RegulatorConfig | None = None, L: int = 3) -> ConvergenceTable:
    """``w_N(xi)`` at ``xi = -C^q div* f^N`` for each ``N``.

    The ``reference`` column holds ``w_N(0) = 1``; ``abs_error`` is the
    distance from it. The max/min ratio over ``N`` is kept in the metadata.
    """
    cfg = cfg or RegulatorConfig()
    d = f.d
    table = ConvergenceTable(metadata={"kind": "regulator", "log_values": []})
    for N in N_range:
        t0 = time.perf_counter()
        geom = TorusGeometry(d, L, N)
        op = assemble_symbol(as_stiffness(q, d), geom)
        xi = -solve(op, adjoint_divergence(scale_test_function(f, geom), d))
        w = large_field_regulator(xi, geom, cfg)
        table.metadata["log_values"].append(w.log_value)
        val = float(w)
        table.append(ConvergenceRow(N, val, 1.0, abs(val - 1.0), 0.0, time.perf_counter() - t0))
    logs = table.metadata["log_values"]
    spread = max(logs) - min(logs) if logs else 0.0
    table.metadata["log_max_min_ratio"] = spread
    table.metadata["max_min_ratio"] = math.exp(spread) if spread < 709.0 else math.inf
    return table


def tau(alpha: float, d: int, L: int) -> float:
    """``L^{(1 - alpha)(d/2 + 4)}``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return float(L) ** ((1.0 - alpha) * (d / 2 + 4))


def tau_bound_check(q, g: TestFunction, alpha: float, N_range, cfg: RegulatorConfig | None = None, L: int = 3,
                    l: int = 0, z=None) -> ConvergenceTable:
    """``|C^q grad*_l g^N|_N`` against ``tau(alpha)^N``.

    ``g`` is a scalar window; ``estimate`` is the measured norm, ``reference``
    is ``tau(alpha)^N`` and the ratios go to ``metadata["ratio"]``.
    """
    cfg = cfg or RegulatorConfig()
    d = g.d
    t = tau(alpha, d, L)
    table = ConvergenceTable(metadata={"kind": "tau", "alpha": alpha, "tau": t, "ratio": []})
    for N in N_range:
        t0 = time.perf_counter()
        geom = TorusGeometry(d, L, N, alpha)
        gN = scale_window_function(g, z, alpha, geom)
        op = assemble_symbol(as_stiffness(q, d), geom)
        xi = solve(op, adjoint_difference(gN, l, d))
        norm = field_norm(xi, geom, cfg)
        bound = t**N
        table.metadata["ratio"].append(norm / bound)
        table.append(ConvergenceRow(N, norm, bound, abs(norm - bound), 0.0, time.perf_counter() - t0))
    return table
