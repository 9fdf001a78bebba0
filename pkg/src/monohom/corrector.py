"""Gradient correctors P_h(x, M_h Du, anchor) and their errors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell_solver import CellSolveError, FluxCache, subdomain_centroid
from .grid import CellGrid, Field, MacroGrid, cell_averages, gamma_h, lp_norm
from .operator import OperatorSpec

MODES = ("piecewise", "modulated")


@dataclass
class CorrectorField:
    grid: MacroGrid
    P: Field
    mode: str
    provenance: dict = field(default_factory=dict)
    xi_cells: np.ndarray = field(default=None, repr=False)


def build_corrector(u: Field, spec: OperatorSpec, macro_grid: MacroGrid, cell_grid: CellGrid, mode: str,
                    cache: FluxCache | None = None) -> CorrectorField:
    """Assemble P_h = xi^j + Dv^{xi^j, anchor_j}(x / eps) cell by cell.

    ``mode="piecewise"`` anchors every cell of J^i at the centroid of
    Omega_i; ``mode="modulated"`` anchors at the cell center gamma_h.
    Interface cells (B^i) and cells outside J receive P_h = 0.
    """
    if mode not in MODES:
        raise ValueError(f"unknown corrector mode {mode!r}")
    if u.mesh is not macro_grid.mesh or u.kind != "nodal":
        raise ValueError("u must be a nodal field on the macro grid")
    if cache is None:
        cache = FluxCache(spec, cell_grid)
    xi_cells = cell_averages(u.gradient(), macro_grid)
    centers = gamma_h(macro_grid)(macro_grid.cell_centers())
    active = np.zeros(macro_grid.num_cells, dtype=bool)
    active[macro_grid.J] = True
    active[macro_grid.boundary_cells] = False
    mesh = macro_grid.mesh
    P = np.zeros((mesh.num_qp, spec.n))
    y_all = np.mod(mesh.qp / macro_grid.eps, 1.0)
    order = np.argsort(macro_grid.qp_cell, kind="stable")
    starts = np.searchsorted(macro_grid.qp_cell[order], np.arange(macro_grid.num_cells + 1))
    provenance = {}
    for j in np.flatnonzero(active):
        if mode == "piecewise":
            anchor = subdomain_centroid(spec, int(spec.subdomain(centers[j])))
        else:
            anchor = centers[j]
        try:
            sol = cache.solution(anchor, xi_cells[j])
        except CellSolveError as exc:
            raise CellSolveError(f"cell {j}: {exc}", exc.diagnostics) from exc
        pts = order[starts[j]:starts[j + 1]]
        P[pts] = sol.xi + cell_grid.mesh.gradient_at(sol.v.values, y_all[pts])
        provenance[int(j)] = cache.key(anchor, xi_cells[j])
    return CorrectorField(grid=macro_grid, P=Field("qp", mesh, P), mode=mode, provenance=provenance,
                          xi_cells=xi_cells)


@dataclass
class CorrectorError:
    corrector: float
    plain: float

    @property
    def ratio(self) -> float:
        return self.corrector / self.plain if self.plain > 0 else float("nan")


def corrector_error(u_h: Field, P: CorrectorField, p: float, u: Field | None = None) -> CorrectorError:
    """||Du_h - P_h||_p and, given the homogenized u, ||Du_h - Du||_p."""
    if u_h.mesh is not P.grid.mesh:
        raise ValueError("u_h and the corrector live on different grids")
    du_h = u_h.gradient().values
    err = lp_norm(Field("qp", u_h.mesh, du_h - P.P.values), p)
    plain = float("nan")
    if u is not None:
        if u.mesh is not u_h.mesh:
            raise ValueError("u and u_h live on different grids")
        plain = lp_norm(Field("qp", u_h.mesh, du_h - u.gradient().values), p)
    return CorrectorError(corrector=err, plain=plain)
