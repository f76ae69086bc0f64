"""Field norm, large-field regulator and the tau(alpha) bound.

The regulator is evaluated at the Gaussian shift xi = -C div* f^N. It is
bounded in N only for small test functions, so the amplitude matters. The
measured norm of C grad* g^N is compared with tau(alpha)^N.
"""
import numpy as np

from gfflab.lattice import TorusGeometry
from gfflab.norms import field_norm, large_field_regulator, regulator_bound_check, tau, tau_bound_check
from gfflab.testfunctions import bump, smooth_torus_field

geom = TorusGeometry(1, 3, 1)
print("norm of the spike [0, 1, 0] at level 0:", field_norm(np.array([1.0, 0.0, 0.0]), geom, level=0))
print("w_N(0):", large_field_regulator(np.zeros((9, 9)), TorusGeometry(2, 3, 2)).value)

for amp in (5e-4, 1.0):
    t = regulator_bound_check(None, smooth_torus_field(2, amplitude=amp), [1, 2, 3])
    print(f"amplitude {amp}: log w_N = {np.round(t.metadata['log_values'], 4).tolist()}")

for alpha in (0.8, 1.0):
    t = tau_bound_check(None, bump(2, radius=0.45), alpha, [1, 2, 3, 4])
    print(f"alpha={alpha}: tau={tau(alpha, 2, 3):.3f} ratios", ", ".join(f"{x:.3g}" for x in t.metadata["ratio"]))
