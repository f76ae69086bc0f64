"""How the lattice quadratic form approaches its continuum value.

For a smooth periodic vector field f the Gaussian variance of
(grad phi, f^N) is an exact quadratic form on the lattice. As the torus is
refined it converges to the Fourier series on the unit torus. A short
Monte Carlo study of the Laplace transform follows.
"""
import math

from gfflab.continuum import continuum_torus_covariance
from gfflab.gaussian import assemble_symbol
from gfflab.gibbs import make_potential
from gfflab.lattice import TorusGeometry
from gfflab.scaling import discrete_quadratic_form, scale_test_function, scaling_limit_study
from gfflab.testfunctions import smooth_torus_field

f = smooth_torus_field(2)
ref = continuum_torus_covariance(f, None, truncation=64)
print(f"continuum value: {ref:.6f}")
for N in (1, 2, 3, 4):
    geom = TorusGeometry(2, 3, N)
    form = discrete_quadratic_form(assemble_symbol(None, geom), scale_test_function(f, geom))
    print(f"N={N}  M={geom.side:3d}  lattice form {form:.6f}  error {abs(form - ref):.2e}")

print("\nLaplace transform with exact Gaussian samples:")
table = scaling_limit_study(make_potential("zero"), "zero", f, [1, 2, 3], 40_000, seed=3)
print(table.to_csv(record_runtime=False))
print(f"target exp(C/2) = {math.exp(ref / 2):.6f}")
