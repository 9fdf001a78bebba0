# Gradient correctors.
#
# Du_h oscillates; Du does not. Adding the cell corrector Dv(x / eps) on
# every eps-cell recovers Du_h in Lp, while Du alone does not.
from monohom.verify import StudySettings, run_convergence_study
from monohom.operator import Kernel, OperatorSpec

spec = OperatorSpec(p=2.0, kernels=(Kernel("laminate", (1.0, 4.0)),), n=2)
rep = run_convergence_study(StudySettings(spec=spec, eps_list=(1 / 4, 1 / 8), macro_M=64, cell_m=16,
                                          directions=16, jobs=2))

print(f"{'eps':>8} {'|Du_h - P_h|':>14} {'|Du_h - Du|':>14} {'ratio':>8}")
for r in rep.rows:
    print(f"{r['eps']:8.4f} {r['err_corrector']:14.5e} {r['err_plain']:14.5e} {r['ratio']:8.3f}")

for c in rep.checks:
    print(f"  {c.name:28s} {'pass' if c.passed else 'FAIL'}")
