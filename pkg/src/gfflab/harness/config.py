"""Run configuration in TOML.

A minimal file needs only ``experiment`` and ``seed``; every other field has
a default. Example::

    experiment = "scaling-limit"
    seed = 7

    [geometry]
    d = 2
    L = 3
    N_range = [1, 2, 3]

    [potential]
    spec = "quartic:0.01"

Environment variables ``GFFLAB_<SECTION>__<KEY>`` override file values
(``GFFLAB_SEED`` and ``GFFLAB_EXPERIMENT`` for the top-level keys); the
values are read as TOML literals, falling back to plain strings.
"""
from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import EllipticityError
from ..gaussian import Stiffness
from ..gibbs import make_potential
from ..testfunctions import available_test_functions

ENV_PREFIX = "GFFLAB_"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry (e.g. ``geometry.L``)."""

    def __init__(self, field_name: str | None, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}" if field_name else message)


@dataclass
class GeometryConfig:
    d: int = 2
    L: int = 3
    N_range: list = field(default_factory=lambda: [1, 2, 3])
    alpha: float = 1.0


@dataclass
class PotentialConfig:
    spec: str = "zero"
    u: list = field(default_factory=lambda: [0.0])


@dataclass
class StiffnessConfig:
    q: list = field(default_factory=list)   # empty means zero
    lambda_q: float = 0.0


@dataclass
class SamplerConfig:
    algorithm: str = "mala"
    samples: int = 20000
    burn_in: int = 500
    thinning: int = 1
    n_chains: int = 32
    n_leapfrog: int = 8
    step_size: float = 0.0    # 0 selects the algorithm default


@dataclass
class EstimatorConfig:
    test_function: str = "smooth-torus"
    amplitude: float = 1.0        # multiplies test_function
    window_a: str = "grad-bump"
    window_b: str = "grad-bump"
    scalar_window: str = "bump"
    direction: int = 0
    truncation: int = 64
    rtol: float = 1e-6
    momentum_cutoff: int = 1
    n_blocks: int = 50


@dataclass
class RegulatorSection:
    h: float = 1.0
    omega: float = 1.0
    r0: int = 3


@dataclass
class OutputConfig:
    dir: str = "gfflab-out"
    record_runtime: bool = True


@dataclass
class RunConfig:
    experiment: str
    seed: int
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    stiffness: StiffnessConfig = field(default_factory=StiffnessConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    regulator: RegulatorSection = field(default_factory=RegulatorSection)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def stiffness_matrix(self) -> np.ndarray:
        d = self.geometry.d
        return np.zeros((d, d)) if not self.stiffness.q else np.asarray(self.stiffness.q, dtype=np.float64)

    def tilt(self) -> np.ndarray:
        u = np.asarray(self.potential.u, dtype=np.float64).reshape(-1)
        return np.full(self.geometry.d, u[0]) if u.size == 1 else u


SECTIONS = {
    "geometry": GeometryConfig,
    "potential": PotentialConfig,
    "stiffness": StiffnessConfig,
    "sampler": SamplerConfig,
    "estimator": EstimatorConfig,
    "regulator": RegulatorSection,
    "output": OutputConfig,
}


def _coerce(name, value, default):
    """Match the type of the default, with integer/float leniency."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [value]
        if not isinstance(value, list):
            raise ConfigError(name, f"expected a list, got {value!r}")
        return value
    return value


def _build(raw: dict) -> RunConfig:
    raw = dict(raw)
    for key in ("experiment", "seed"):
        if key not in raw:
            raise ConfigError(key, "is required")
    experiment = raw.pop("experiment")
    seed = raw.pop("seed")
    if not isinstance(experiment, str):
        raise ConfigError("experiment", f"expected a string, got {experiment!r}")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
    sections = {}
    for name, cls in SECTIONS.items():
        block = raw.pop(name, {})
        if not isinstance(block, dict):
            raise ConfigError(name, "must be a table")
        block = dict(block)
        if name == "geometry" and "N" in block:
            if "N_range" in block:
                raise ConfigError("geometry.N", "give either N or N_range, not both")
            block["N_range"] = [block.pop("N")]
        defaults = cls()
        kwargs = {}
        for f in fields(cls):
            if f.name in block:
                kwargs[f.name] = _coerce(f"{name}.{f.name}", block.pop(f.name), getattr(defaults, f.name))
        if block:
            raise ConfigError(f"{name}.{next(iter(block))}", "unknown field")
        sections[name] = cls(**kwargs)
    if raw:
        raise ConfigError(next(iter(raw)), "unknown field")
    cfg = RunConfig(experiment, seed, **sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    from .runner import EXPERIMENTS

    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}; available: {', '.join(sorted(EXPERIMENTS))}")
    g = cfg.geometry
    if g.d < 1:
        raise ConfigError("geometry.d", f"must be a positive integer, got {g.d}")
    if g.L < 3 or g.L % 2 == 0:
        raise ConfigError("geometry.L", f"must be an odd integer >= 3, got {g.L}")
    if not g.N_range or any(not isinstance(n, int) or isinstance(n, bool) or n < 0 for n in g.N_range):
        raise ConfigError("geometry.N_range", f"must be a non-empty list of non-negative integers, got {g.N_range}")
    if any(b <= a for a, b in zip(g.N_range, g.N_range[1:])):
        raise ConfigError("geometry.N_range", "must be strictly increasing")
    lo = 0.0 if cfg.experiment == "poincare" else None
    if not ((lo is not None and g.alpha == 0.0) or 0.0 < g.alpha <= 1.0):
        raise ConfigError("geometry.alpha", f"must lie in (0, 1], got {g.alpha}")
    try:
        make_potential(cfg.potential.spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError("potential.spec", str(exc)) from None
    u = np.asarray(cfg.potential.u, dtype=np.float64).reshape(-1)
    if u.size not in (1, g.d):
        raise ConfigError("potential.u", f"needs 1 or {g.d} entries, got {u.size}")
    if cfg.stiffness.q:
        q = np.asarray(cfg.stiffness.q, dtype=np.float64)
        if q.shape != (g.d, g.d):
            raise ConfigError("stiffness.q", f"must be a {g.d}x{g.d} matrix, got shape {q.shape}")
        try:
            Stiffness(q)
        except (ValueError, EllipticityError) as exc:
            raise ConfigError("stiffness.q", str(exc)) from None
    s = cfg.sampler
    if s.algorithm not in ("mala", "hmc"):
        raise ConfigError("sampler.algorithm", f"must be 'mala' or 'hmc', got {s.algorithm!r}")
    for name in ("samples", "thinning", "n_chains", "n_leapfrog"):
        if getattr(s, name) < 1:
            raise ConfigError(f"sampler.{name}", "must be positive")
    if s.burn_in < 0:
        raise ConfigError("sampler.burn_in", "must be non-negative")
    if s.step_size < 0:
        raise ConfigError("sampler.step_size", "must be non-negative (0 selects the default)")
    e = cfg.estimator
    known = available_test_functions()
    for name in ("test_function", "window_a", "window_b", "scalar_window"):
        if getattr(e, name) not in known:
            raise ConfigError(f"estimator.{name}", f"unknown function {getattr(e, name)!r}; available: {', '.join(known)}")
    if not 0 <= e.direction < g.d:
        raise ConfigError("estimator.direction", f"must lie in [0, {g.d - 1}]")
    if not np.isfinite(e.amplitude):
        raise ConfigError("estimator.amplitude", "must be finite")
    if e.truncation < 1:
        raise ConfigError("estimator.truncation", "must be >= 1")
    if not 0 < e.rtol < 1:
        raise ConfigError("estimator.rtol", "must lie in (0, 1)")
    if e.momentum_cutoff < 1:
        raise ConfigError("estimator.momentum_cutoff", "must be >= 1")
    if e.n_blocks < 2:
        raise ConfigError("estimator.n_blocks", "must be >= 2")
    if not cfg.regulator.h > 0:
        raise ConfigError("regulator.h", "must be positive")
    if cfg.regulator.r0 < 0:
        raise ConfigError("regulator.r0", "must be non-negative")


def _env_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_env_overrides(raw: dict, environ=None) -> dict:
    """Return a copy of ``raw`` with ``GFFLAB_*`` variables applied."""
    environ = os.environ if environ is None else environ
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for key, text in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        if path == ["threads"]:
            continue
        if len(path) == 1:
            out[path[0]] = _env_value(text)
        elif len(path) == 2:
            # keys such as N_range keep their case in the schema
            section = out.setdefault(path[0], {})
            name = {f.name.lower(): f.name for f in fields(SECTIONS.get(path[0], GeometryConfig))}.get(path[1], path[1])
            section[name] = _env_value(text)
        else:
            raise ConfigError(key, "environment overrides nest at most one level (SECTION__KEY)")
    return out


def parse_config_text(text: str, environ=None, source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(None, f"{source}: TOML parse error: {exc}") from None
    return _build(apply_env_overrides(raw, environ if environ is not None else {}))


def parse_config(path, environ=None) -> RunConfig:
    """Read, apply ``GFFLAB_*`` overrides from ``environ`` (default: the process env) and validate."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(None, f"{path}: not UTF-8: {exc}") from None
    return parse_config_text(text, os.environ if environ is None else environ, str(path))


def emit_config(cfg: RunConfig) -> str:
    """Canonical TOML with every field present."""
    return tomli_w.dumps(cfg.to_dict())


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical config without the output block."""
    d = cfg.to_dict()
    d.pop("output")
    return hashlib.sha256(tomli_w.dumps(d).encode("utf-8")).hexdigest()
