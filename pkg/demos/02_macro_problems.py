# The eps-problem and its homogenized limit.
#
# For a 2D laminate the homogenized operator is computed from cell problems
# and the oscillating solutions u_h approach u as eps shrinks.
import numpy as np

from monohom.grid import Field, build_cell_grid, build_macro_grid, lp_norm
from monohom.macro_solver import HomogenizedOperator, MacroProblem, solve_macro
from monohom.operator import Kernel, OperatorSpec

spec = OperatorSpec(p=3.0, kernels=(Kernel("laminate", (1.0, 4.0)),), n=2)
M = 64

grid = build_macro_grid(2, M, 1 / 8)
b = HomogenizedOperator(spec, build_cell_grid(2, 16), directions=64)
hom = solve_macro(MacroProblem("homogenized", spec, grid, b=b))
print("homogenized solve:", hom.diagnostics.newton_iterations, "Newton steps, residual",
      f"{hom.diagnostics.residual:.2e}")

for eps in (1 / 2, 1 / 4, 1 / 8):
    g = build_macro_grid(2, M, eps)
    sol = solve_macro(MacroProblem("eps", spec, g))
    err = lp_norm(Field("nodal", g.mesh, sol.u.values - hom.u.values), spec.p)
    print(f"eps=1/{round(1 / eps)}: ||u_h - u||_Lp = {err:.4e}  "
          f"(newton={sol.diagnostics.newton_iterations}, picard={sol.diagnostics.picard_iterations})")

u = grid.mesh.full_nodal(hom.u.values).reshape(M + 1, M + 1)
print("max u =", u.max(), "at", np.unravel_index(u.argmax(), u.shape))
