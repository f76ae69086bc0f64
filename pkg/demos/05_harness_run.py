"""Driving an experiment through the harness.

Writes a minimal TOML config, runs it into a temporary directory and prints
the resulting checks. The command-line equivalent is
``gfflab run --config demo.toml --out <dir>``.
"""
import tempfile
from pathlib import Path

from gfflab.harness import parse_config, run

text = """
experiment = "covariance"
seed = 2024

[geometry]
d = 2
N_range = [1, 2, 3]
alpha = 0.9

[sampler]
samples = 40000

[output]
record_runtime = false
"""

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.toml"
    path.write_text(text)
    manifest = run(parse_config(path), Path(tmp) / "out")
    print("files:", manifest.files)
    print((Path(tmp) / "out" / "covariance.csv").read_text())
    print((Path(tmp) / "out" / "checks.csv").read_text())
    print("all checks passed:", manifest.passed)
