# Cell problems and the effective flux.
#
# A 1D laminate has a closed-form effective flux; a 2D checkerboard with
# two phases has effective conductivity sqrt(k1 k2) in the linear case.
import numpy as np

from monohom.cell_solver import cell_energy_identity, solve_cell
from monohom.grid import build_cell_grid
from monohom.operator import Kernel, OperatorSpec

lam = Kernel("laminate", (1.0, 4.0))

# -------------------------
# 1D laminate for a few p
# -------------------------
for p in (1.5, 2.0, 3.0):
    spec = OperatorSpec(p=p, kernels=(lam,), n=1)
    sol = solve_cell(spec, 0, [1.0], build_cell_grid(1, 256))
    closed = np.mean(np.array(lam.values) ** (-1 / (p - 1))) ** (-(p - 1))
    print(f"p={p}: b={sol.b_flux[0]:.12f}  closed form={closed:.12f}  "
          f"newton={sol.diagnostics.newton_iterations}")

# energy <b, xi> equals the cell integral of <a, xi + Dv>
spec = OperatorSpec(p=3.0, kernels=(lam,), n=1)
sol = solve_cell(spec, 0, [1.0], build_cell_grid(1, 256))
print("energy identity:", cell_energy_identity(sol), "vs <b, xi> =", float(sol.b_flux @ sol.xi))

# -------------------------
# 2D checkerboard, grid refinement
# -------------------------
cb = OperatorSpec(p=2.0, kernels=(Kernel("checkerboard", (1.0, 4.0)),), n=2)
for m in (16, 32, 64):
    b = solve_cell(cb, 0, [1.0, 0.0], build_cell_grid(2, m)).b_flux
    print(f"checkerboard m={m:3d}: b={b.round(6)}  (duality value 2.0)")

# the corrector field itself: v is periodic with zero mean
sol = solve_cell(cb, 0, [1.0, 0.0], build_cell_grid(2, 32))
print("mean(v) =", sol.mean, " max|v| =", np.abs(sol.v.values).max())
