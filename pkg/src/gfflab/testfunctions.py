"""Continuum test functions and windows.

A :class:`TestFunction` evaluates on coordinate arrays of shape ``(d, ...)``
and returns ``(n_components, ...)`` (vector valued) or ``(...)`` (scalar).
Functions built with :func:`from_sympy` also provide exact derivatives, which
the sup-bound checks need for ``C^k`` norms.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .lattice import multi_indices


@dataclass(frozen=True)
class TestFunction:
    func: Callable
    d: int
    components: int | None = None
    center: tuple | None = None
    name: str = "f"
    derivative_factory: Callable | None = field(default=None, repr=False, compare=False)

    __test__ = False  # keep pytest from collecting this class

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.func(x)

    @property
    def is_vector(self) -> bool:
        return self.components is not None

    def derivative(self, alpha) -> Callable:
        if self.derivative_factory is None:
            raise ValueError(f"{self.name}: no derivatives available")
        return self.derivative_factory(tuple(alpha))

    def ck_norm(self, k: int, x) -> float:
        """``max_{|alpha| <= k} sup |d^alpha f|`` over the sample points ``x``."""
        best = 0.0
        for order in range(k + 1):
            for alpha in multi_indices(self.d, order):
                best = max(best, float(np.max(np.abs(self.derivative(alpha)(x)))))
        return best

    def scaled(self, factor: float) -> "TestFunction":
        fac = self.derivative_factory
        return TestFunction(
            lambda x: factor * self.func(x),
            self.d,
            self.components,
            self.center,
            f"{factor:g}*{self.name}",
            None if fac is None else (lambda a: (lambda x: factor * fac(a)(x))),
        )


_SYMS = sp.symbols("x0:8", real=True)


def _lambdify(expr, syms, mask_expr=None):
    fn = sp.lambdify(syms, expr, "numpy")
    mask_fn = None if mask_expr is None else sp.lambdify(syms, mask_expr, "numpy")

    def call(x):
        x = np.asarray(x, dtype=np.float64)
        args = [x[i] for i in range(len(syms))]
        shape = x.shape[1:]
        if mask_fn is None:
            return np.broadcast_to(np.asarray(fn(*args), dtype=np.float64), shape).copy()
        inside = mask_fn(*args) < 1.0
        out = np.zeros(shape)
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(np.asarray(fn(*[a[inside] for a in args]), dtype=np.float64), (int(inside.sum()),))
        out[inside] = vals
        return out

    return call


def from_sympy(exprs, d: int, name: str = "f", center=None, support=None) -> TestFunction:
    """Build a test function from sympy expressions in ``x0 .. x{d-1}``.

    ``exprs`` is one expression (scalar function) or a sequence (vector field).
    ``support`` is an optional expression ``s`` with the function set to zero
    wherever ``s >= 1``; it is used for compactly supported bumps.
    """
    syms = _SYMS[:d]
    vector = isinstance(exprs, (list, tuple))
    parts = list(exprs) if vector else [exprs]
    parts = [sp.sympify(e) for e in parts]

    @functools.lru_cache(maxsize=None)
    def factory(alpha):
        fns = []
        for e in parts:
            de = e
            for i, a in enumerate(alpha):
                if a:
                    de = sp.diff(de, syms[i], a)
            fns.append(_lambdify(sp.simplify(de) if sum(alpha) <= 1 else de, syms, support))
        if vector:
            return lambda x: np.stack([f(x) for f in fns])
        return fns[0]

    base = factory((0,) * d)
    return TestFunction(base, d, len(parts) if vector else None, None if center is None else tuple(center), name, factory)


def bump(d: int, center=None, radius: float = 0.5, direction=None, name: str = "bump") -> TestFunction:
    """``exp(-1 / (1 - |x - z|^2 / r^2))`` on the ball of radius ``r`` around ``z``.

    With ``direction`` given the result is the vector window ``bump * direction``.
    ``radius <= 1/2`` keeps the support inside the unit cube around ``z``.
    """
    syms = _SYMS[:d]
    z = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
    t = sum((syms[i] - sp.Float(z[i])) ** 2 for i in range(d)) / sp.Float(radius) ** 2
    b = sp.exp(-1 / (1 - t))
    if direction is None:
        return from_sympy(b, d, name, center=z, support=t)
    direction = np.asarray(direction, dtype=np.float64)
    return from_sympy([b * sp.Float(c) for c in direction], d, name, center=z, support=t)


def gradient_bump(d: int, center=None, radius: float = 0.5, name: str = "grad-bump") -> TestFunction:
    """The vector window ``grad b`` for the scalar :func:`bump` ``b``.

    Its components integrate to zero, so the torus and whole-space Gaussian
    forms of ``div* J`` agree exactly when ``a`` is a multiple of the identity.
    """
    syms = _SYMS[:d]
    z = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
    t = sum((syms[i] - sp.Float(z[i])) ** 2 for i in range(d)) / sp.Float(radius) ** 2
    b = sp.exp(-1 / (1 - t))
    return from_sympy([sp.diff(b, s) for s in syms], d, name, center=z, support=t)


def smooth_torus_field(d: int, amplitude: float = 1.0, name: str = "smooth-torus") -> TestFunction:
    """A generic smooth periodic vector field, no component a single Fourier mode."""
    x = _SYMS[:d]
    tp = 2 * sp.pi
    if d == 1:
        comps = [sp.exp(sp.sin(tp * x[0]))]
    else:
        comps = [sp.exp(sp.sin(tp * x[0])) * sp.cos(tp * x[1]), sp.sin(tp * (x[0] - x[1]))]
        comps += [sp.cos(tp * (x[i] + x[0])) * sp.exp(sp.cos(tp * x[1])) for i in range(2, d)]
    return from_sympy([sp.Float(amplitude) * c for c in comps], d, name)


def single_mode(d: int, name: str = "single-mode") -> TestFunction:
    """``(cos 2 pi x_0, 0, ..., 0)``."""
    x = _SYMS[:d]
    return from_sympy([sp.cos(2 * sp.pi * x[0])] + [sp.Integer(0) * x[0]] * (d - 1), d, name)


def zero_field(d: int, name: str = "zero") -> TestFunction:
    return from_sympy([sp.Integer(0) * _SYMS[0]] * d, d, name)


_REGISTRY = {
    "smooth-torus": lambda d, **kw: smooth_torus_field(d, **kw),
    "single-mode": lambda d, **kw: single_mode(d),
    "zero": lambda d, **kw: zero_field(d),
    "bump": lambda d, **kw: bump(d, **kw),
    "bump-e0": lambda d, **kw: bump(d, direction=np.eye(d)[0], name="bump-e0", **kw),
    "grad-bump": lambda d, **kw: gradient_bump(d, **kw),
}


def available_test_functions():
    return sorted(_REGISTRY)


def make_test_function(name: str, d: int, **kwargs) -> TestFunction:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown test function {name!r}; available: {', '.join(available_test_functions())}") from None
    return factory(d, **kwargs)
