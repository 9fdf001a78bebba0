# Sampled structure checks for a and for the homogenized b.
#
# Constants are fitted by sampling, never assumed; the reports carry the
# fitted values so later runs can be compared against them.
from monohom.cell_solver import FluxCache
from monohom.grid import build_cell_grid
from monohom.operator import Kernel, OperatorSpec
from monohom.verify import LemmaSweep, verify_lemmas, verify_operator, verify_theorem6

spec = OperatorSpec(p=2.5, kernels=(Kernel("checkerboard", (1.0, 4.0)),), n=2, x_mode="modulated",
                    theta=0.5, lipschitz_L=2.0)
cache = FluxCache(spec, build_cell_grid(2, 8))

for title, rep in (("operator a", verify_operator(spec, 1000, 0)),
                   ("homogenized b", verify_theorem6(spec, cache, 100, 0)),
                   ("cell solutions", verify_lemmas(spec, cache, LemmaSweep(directions=8), 0))):
    print(f"-- {title}")
    for c in rep.checks:
        consts = ", ".join(f"{k}={v:.4g}" for k, v in c.constants.items())
        print(f"   {c.name:24s} {'pass' if c.passed else 'FAIL'}  {consts}")

print("distinct cell solves:", len(cache), " cache hits:", cache.hits)
