"""Command line entry point: ``gfflab {run,sample,solve,greens,check}``.

Exit codes: 0 when every configured check passes, 1 when a check fails,
2 for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..fieldio import read_field, save_ensemble, write_field
from ..gaussian import as_stiffness, assemble_symbol, greens_kernel, log_partition, solve
from ..gibbs import make_potential
from ..lattice import ScalarField, TorusGeometry, project_mean_zero
from ..mcmc import MCMCConfig, exact_ensemble, mcmc_sample
from .config import ConfigError, parse_config
from .runner import EXPERIMENTS, StageError, checks_csv, run

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _matrix(text: str):
    vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    d = int(round(len(vals) ** 0.5))
    if d * d != len(vals):
        raise argparse.ArgumentTypeError("stiffness needs d*d comma separated entries (row major)")
    return np.array(vals).reshape(d, d)


def _geometry_args(p):
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--q", type=_matrix, default=None, help="stiffness, row-major entries separated by commas")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("GFFLAB_THREADS", "1"))


def _load(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "experiment", None):
        if args.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {args.experiment!r}; available: {', '.join(sorted(EXPERIMENTS))}")
        cfg = dataclasses.replace(cfg, experiment=args.experiment)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    manifest = run(cfg, args.out, threads=_threads(args))
    print(json.dumps({"passed": manifest.passed, "config_hash": manifest.config_hash,
                      "files": manifest.files, "wall_clock_s": manifest.wall_clock_s}))
    return EXIT_OK if manifest.passed else EXIT_FAIL


def cmd_check(args) -> int:
    """Run an experiment into ``--out`` and print its per-N rows and checks."""
    cfg = _load(args)
    out = Path(args.out or cfg.output.dir)
    manifest = run(cfg, out, threads=_threads(args))
    for name in manifest.files:
        if name.endswith(".csv") and name != "checks.csv":
            print(f"# {name}")
            sys.stdout.write((out / name).read_text())
    print("# checks.csv")
    sys.stdout.write((out / "checks.csv").read_text())
    return EXIT_OK if manifest.passed else EXIT_FAIL


def cmd_sample(args) -> int:
    geom = TorusGeometry(args.d, args.L, args.N)
    pot = make_potential(args.potential, u=args.u)
    if pot.is_zero and args.u == 0.0:
        ens = exact_ensemble(assemble_symbol(as_stiffness(args.q, geom.d), geom), args.samples, args.seed)
    else:
        per_chain = max(1, -(-args.samples // args.chains))
        mc = MCMCConfig(n_steps=per_chain * args.thinning, burn_in=args.burn_in, thinning=args.thinning,
                        seed=args.seed, algorithm=args.algorithm, n_chains=args.chains)
        ens = mcmc_sample(pot, geom, mc)
    save_ensemble(args.out, ens)
    print(json.dumps({"directory": str(args.out), "n_samples": len(ens), "diagnostics": ens.diagnostics},
                     default=float))
    return EXIT_OK


def cmd_solve(args) -> int:
    rhs = read_field(args.rhs)
    op = assemble_symbol(as_stiffness(args.q, rhs.geometry.d), rhs.geometry)
    values = rhs.values
    if args.project:
        values = project_mean_zero(values, rhs.geometry.d)
    u = solve(op, values)
    path = write_field(args.out, ScalarField(rhs.geometry, u, True))
    print(json.dumps({"solution": str(path)}))
    return EXIT_OK


def cmd_greens(args) -> int:
    geom = TorusGeometry(args.d, args.L, args.N)
    op = assemble_symbol(as_stiffness(args.q, geom.d), geom)
    path = write_field(args.out, ScalarField(geom, greens_kernel(op)))
    print(json.dumps({"kernel": str(path), "log_partition": log_partition(op)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfflab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_text in (("run", cmd_run, "run a configured experiment"),
                                ("check", cmd_check, "run an experiment and print per-N rows and checks")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        if name == "check":
            p.add_argument("--experiment", help="override the experiment named in the config")
        p.set_defaults(func=fn)

    p = sub.add_parser("sample", help="sample a field ensemble into a directory of .gfld files")
    _geometry_args(p)
    p.add_argument("--potential", default="zero")
    p.add_argument("--u", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument("--algorithm", default="mala", choices=("mala", "hmc"))
    p.add_argument("--chains", type=int, default=8)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thinning", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="solve A^q u = rhs for a .gfld right-hand side")
    p.add_argument("--rhs", required=True)
    p.add_argument("--q", type=_matrix, default=None)
    p.add_argument("--project", action="store_true", help="subtract the mean of the right-hand side first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("greens", help="write the Green's kernel as a .gfld file")
    _geometry_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_greens)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
