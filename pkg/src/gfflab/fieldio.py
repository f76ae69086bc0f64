"""Field files (``.gfld``) and ensemble directories.

A ``.gfld`` file is one line of JSON (``d, L, N, alpha, mean_zero``)
terminated by a newline, followed by the field values as little-endian
float64 in row-major order of the stored array (origin at index 0, see
:mod:`gfflab.lattice`). Vector fields are written one file per component.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .lattice import ScalarField, TorusGeometry, VectorField

SUFFIX = ".gfld"


def _header(geom: TorusGeometry, mean_zero: bool) -> bytes:
    meta = {"d": geom.d, "L": geom.L, "N": geom.N, "alpha": geom.alpha, "mean_zero": bool(mean_zero)}
    return (json.dumps(meta, sort_keys=True) + "\n").encode("ascii")


def write_field(path, field: ScalarField) -> Path:
    path = Path(path)
    if path.suffix != SUFFIX:
        path = path.with_suffix(SUFFIX)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_header(field.geometry, field.mean_zero))
        fh.write(data.tobytes(order="C"))
    os.replace(tmp, path)
    return path


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        meta = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    geom = TorusGeometry(int(meta["d"]), int(meta["L"]), int(meta["N"]), float(meta["alpha"]))
    values = np.frombuffer(raw, dtype="<f8")
    if values.size != geom.n_sites:
        raise ValueError(f"{path}: expected {geom.n_sites} values, found {values.size}")
    return ScalarField(geom, values.reshape(geom.shape).astype(np.float64), bool(meta["mean_zero"]))


def write_vector_field(stem, field: VectorField) -> list:
    """Write ``<stem>_<i>.gfld`` for each component ``i``."""
    stem = Path(stem)
    return [
        write_field(stem.with_name(f"{stem.name}_{i}{SUFFIX}"), ScalarField(field.geometry, field.values[i]))
        for i in range(field.geometry.d)
    ]


def read_vector_field(stem) -> VectorField:
    stem = Path(stem)
    comps = []
    i = 0
    while (p := stem.with_name(f"{stem.name}_{i}{SUFFIX}")).exists():
        comps.append(read_field(p))
        i += 1
    if not comps:
        raise FileNotFoundError(f"no components found for {stem}")
    return VectorField(comps[0].geometry, np.stack([c.values for c in comps]))


def save_ensemble(directory, ens) -> Path:
    """Write each stored sample as a ``.gfld`` file plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    if ens.samples is not None:
        width = max(5, len(str(len(ens.samples))))
        for k, phi in enumerate(ens.samples):
            files.append(write_field(directory / f"sample_{k:0{width}d}", ScalarField(ens.geometry, phi, True)).name)
    manifest = {
        "geometry": {"d": ens.geometry.d, "L": ens.geometry.L, "N": ens.geometry.N, "alpha": ens.geometry.alpha},
        "sampler": ens.sampler,
        "seed": ens.seed,
        "n_chains": ens.n_chains,
        "config": ens.config,
        "diagnostics": ens.diagnostics,
        "files": files,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))
    os.replace(tmp, directory / "manifest.json")
    return directory


def load_ensemble(directory):
    from .mcmc import Ensemble

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    g = manifest["geometry"]
    geom = TorusGeometry(g["d"], g["L"], g["N"], g["alpha"])
    samples = np.stack([read_field(directory / f).values for f in manifest["files"]]) if manifest["files"] else None
    return Ensemble(
        geometry=geom,
        sampler=manifest["sampler"],
        seed=manifest["seed"],
        samples=samples,
        n_chains=manifest["n_chains"],
        diagnostics=manifest["diagnostics"],
        config=manifest["config"],
    )
