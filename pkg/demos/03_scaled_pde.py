"""The rescaled lattice and its elliptic estimates.

Sites sit eps = L^{-alpha N} apart on a torus of side R = L^{(1-alpha) N}.
We verify the kernel scaling identity, watch the Poincare constant grow like
R^2 and look at the a-priori norms of the solution of A u = D* g.
"""
import math

from gfflab.gaussian import Stiffness
from gfflab.lattice import TorusGeometry
from gfflab.scaledpde import ScaledTorus, kernel_scaling_check, poincare_constant, scaled_solve, sup_bound_check
from gfflab.testfunctions import bump

r = kernel_scaling_check(Stiffness.zero(2), TorusGeometry(2, 3, 2), alpha=0.5)
print("kernel scaling, max discrepancy:", r.max_abs_discrepancy)

for alpha in (0.0, 0.5, 1.0):
    cs = [poincare_constant(ScaledTorus(1, 3, N, alpha)) for N in (1, 2, 3, 4)]
    print(f"alpha={alpha}: Poincare constants", ", ".join(f"{c:.4g}" for c in cs),
          f"(R_4^2 / 4 pi^2 = {3 ** (8 * (1 - alpha)) / (4 * math.pi ** 2):.4g})")

g = bump(1, radius=0.45)
for N in (1, 2, 3, 4):
    st = ScaledTorus(1, 3, N, 0.5)
    sol = scaled_solve(None, g(st.coordinates()), 0, st)
    sb = sup_bound_check(None, g, st)
    print(f"N={N}: |Du|/|g| = {sol.grad_norm / sol.g_norm:.4f}  |u|_w12/|g| = {sol.w12_norm / sol.g_norm:.4f}"
          f"  sup|u| = {sb.sup:.4f}  sup ratio = {sb.bound_ratio:.2e}")
