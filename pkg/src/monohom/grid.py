"""Structured Q1 meshes of the unit cell and of Omega = (0, 1)^n.

Elements are linear segments (1D) or bilinear squares (2D) on a uniform
grid, integrated with the tensor 2-point Gauss rule (exact for polynomials
of degree 3 per axis). All per-point fields live on the quadrature points;
gradients are obtained through sparse matrices ``G[k]`` mapping DOF vectors
to the k-th gradient component at every quadrature point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
QUADRATURE_DEGREE = 3


class GridError(ValueError):
    pass


class StructuredMesh:
    """Uniform mesh with either periodic or homogeneous Dirichlet DOFs."""

    def __init__(self, n: int, cells: int, periodic: bool):
        if n not in (1, 2):
            raise GridError(f"dimension {n} unsupported (n must be 1 or 2)")
        if cells < 2:
            raise GridError("need at least 2 elements per axis")
        self.n = n
        self.cells = cells
        self.periodic = periodic
        self.h = 1.0 / cells
        nn = cells + 1
        self.node_shape = (nn,) * n
        self.num_nodes = nn ** n
        coords = np.stack(np.meshgrid(*([np.linspace(0.0, 1.0, nn)] * n), indexing="ij"), axis=-1)
        self.nodes = coords.reshape(-1, n)

        elem_idx = np.stack(np.meshgrid(*([np.arange(cells)] * n), indexing="ij"), axis=-1).reshape(-1, n)
        self.num_elements = len(elem_idx)
        self.local_offsets = np.array(list(itertools.product((0, 1), repeat=n)))
        corners = elem_idx[:, None, :] + self.local_offsets[None, :, :]
        self.connectivity = np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), self.node_shape)

        # DOF numbering
        if periodic:
            wrapped = np.mod(np.stack(np.meshgrid(*([np.arange(nn)] * n), indexing="ij"), -1), cells)
            self.node_to_dof = np.ravel_multi_index(tuple(np.moveaxis(wrapped.reshape(-1, n), -1, 0)),
                                                    (cells,) * n)
            self.num_dofs = cells ** n
            self.boundary_nodes = np.zeros(0, dtype=int)
        else:
            on_bnd = np.any((self.nodes < 0.5 * self.h) | (self.nodes > 1.0 - 0.5 * self.h), axis=1)
            self.boundary_nodes = np.flatnonzero(on_bnd)
            self.node_to_dof = -np.ones(self.num_nodes, dtype=int)
            interior = np.flatnonzero(~on_bnd)
            self.node_to_dof[interior] = np.arange(len(interior))
            self.num_dofs = len(interior)

        # quadrature: points/weights per element, element-major ordering
        ref_pts = np.array(list(itertools.product(GAUSS_1D, repeat=n)))
        self.ref_points = ref_pts
        self.qpe = len(ref_pts)
        ref_w = np.full(self.qpe, 0.5 ** n)
        origin = elem_idx * self.h
        self.qp = (origin[:, None, :] + self.h * ref_pts[None, :, :]).reshape(-1, n)
        self.qw = np.tile(ref_w * self.h ** n, self.num_elements)
        self.qp_element = np.repeat(np.arange(self.num_elements), self.qpe)
        self.num_qp = len(self.qw)

        shape_vals, shape_grads = _q1_reference(ref_pts, self.local_offsets)
        self._shape_vals = shape_vals          # (qpe, nloc)
        self._shape_grads = shape_grads / self.h  # (qpe, nloc, n)
        self._build_operators()

    def _build_operators(self):
        nloc = len(self.local_offsets)
        rows = np.repeat(np.arange(self.num_qp), nloc)
        node = np.repeat(self.connectivity, self.qpe, axis=0).reshape(-1)
        dof = self.node_to_dof[node]
        keep = dof >= 0
        shape = (self.num_qp, self.num_dofs)
        vals = np.tile(self._shape_vals, (self.num_elements, 1)).reshape(-1)
        self.interp = sp.csr_matrix((vals[keep], (rows[keep], dof[keep])), shape=shape)
        self.G = []
        for k in range(self.n):
            gk = np.tile(self._shape_grads[:, :, k], (self.num_elements, 1)).reshape(-1)
            self.G.append(sp.csr_matrix((gk[keep], (rows[keep], dof[keep])), shape=shape))
        self.GT = [g.T.tocsr() for g in self.G]

    # -- discrete fields -------------------------------------------------
    def gradient(self, u: np.ndarray) -> np.ndarray:
        return np.stack([g @ u for g in self.G], axis=-1)

    def values(self, u: np.ndarray) -> np.ndarray:
        return self.interp @ u

    def divergence_form(self, flux: np.ndarray) -> np.ndarray:
        """Vector sum_q w_q <flux_q, D phi_i(x_q)> over DOFs i."""
        wf = flux * self.qw[:, None]
        return sum(self.GT[k] @ wf[:, k] for k in range(self.n))

    def load(self, f_qp: np.ndarray) -> np.ndarray:
        return self.interp.T @ (self.qw * f_qp)

    @cached_property
    def _pattern(self):
        """CSR pattern of element matrices and the scatter map into it."""
        dofs = self.node_to_dof[self.connectivity]  # (ne, nloc)
        nloc = dofs.shape[1]
        r = np.repeat(dofs, nloc, axis=1).reshape(-1)
        c = np.tile(dofs, (1, nloc)).reshape(-1)
        keep = (r >= 0) & (c >= 0)
        flat = r[keep].astype(np.int64) * self.num_dofs + c[keep]
        uniq, slot = np.unique(flat, return_inverse=True)
        rows, cols = np.divmod(uniq, self.num_dofs)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=self.num_dofs))])
        return keep, slot, cols.astype(np.int32), indptr.astype(np.int32), len(uniq)

    def stiffness(self, tensor: np.ndarray) -> sp.csr_matrix:
        """sum_q w_q D phi_j^T T_q D phi_i for per-point tensors (nq, n, n) or scalars (nq,)."""
        tensor = np.asarray(tensor, dtype=float)
        ne, q, n = self.num_elements, self.qpe, self.n
        wq = self.qw.reshape(ne, q)
        B = self._shape_grads  # identical on every element of a uniform mesh
        if tensor.ndim == 1:
            Ke = np.einsum("qak,eq,qbk->eab", B, wq * tensor.reshape(ne, q), B, optimize=True)
        else:
            T = tensor.reshape(ne, q, n, n) * wq[:, :, None, None]
            Ke = np.einsum("qak,eqkl,qbl->eab", B, T, B, optimize=True)
        keep, slot, cols, indptr, nnz = self._pattern
        data = np.bincount(slot, weights=Ke.reshape(-1)[keep], minlength=nnz)
        return sp.csr_matrix((data, cols, indptr), shape=(self.num_dofs, self.num_dofs))

    def full_nodal(self, u: np.ndarray) -> np.ndarray:
        """Nodal values on all mesh nodes (periodic copies / zero boundary)."""
        out = np.zeros(self.num_nodes)
        mask = self.node_to_dof >= 0
        out[mask] = u[self.node_to_dof[mask]]
        return out

    def dof_coordinates(self) -> np.ndarray:
        owned = np.flatnonzero(self.node_to_dof >= 0)[::-1]
        first = np.empty(self.num_dofs, dtype=int)
        first[self.node_to_dof[owned]] = owned
        return self.nodes[first]

    @cached_property
    def _laplace_factor(self):
        lap = self.stiffness(np.ones(self.num_qp)).tocsc()
        if self.periodic:
            lap = lap.tolil()
            lap[0, :] = 0.0
            lap[:, 0] = 0.0
            lap[0, 0] = 1.0
            lap = lap.tocsc()
        return spla.splu(lap)

    def dual_norm(self, r: np.ndarray) -> float:
        """H^1-seminorm dual norm sqrt(r^T K^-1 r) of a residual vector."""
        rr = np.array(r, dtype=float)
        if self.periodic:
            rr[0] = 0.0
        z = self._laplace_factor.solve(rr)
        return float(np.sqrt(max(np.dot(rr, z), 0.0)))

    # -- point evaluation -------------------------------------------------
    def gradient_at(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Gradient of the discrete field at arbitrary points (periodic wrap)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.n)
        if self.periodic:
            pts = np.mod(pts, 1.0)
        idx = np.clip(np.floor(pts / self.h).astype(int), 0, self.cells - 1)
        local = pts / self.h - idx
        elem = np.ravel_multi_index(tuple(idx.T), (self.cells,) * self.n)
        nodal = self.full_nodal(u)[self.connectivity[elem]]  # (np, nloc)
        grads = _q1_grad_at(local, self.local_offsets) / self.h  # (np, nloc, n)
        return np.einsum("pa,pak->pk", nodal, grads)


def _q1_reference(points, offsets):
    vals = np.ones((len(points), len(offsets)))
    grads = np.ones((len(points), len(offsets), points.shape[1]))
    for a, off in enumerate(offsets):
        for d in range(points.shape[1]):
            phi = points[:, d] if off[d] else 1.0 - points[:, d]
            dphi = 1.0 if off[d] else -1.0
            vals[:, a] *= phi
            for k in range(points.shape[1]):
                grads[:, a, k] *= dphi if k == d else phi
    return vals, grads


def _q1_grad_at(local, offsets):
    return _q1_reference(local, offsets)[1]


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Periodic discretization of the unit cell Y."""

    n: int
    m: int
    mesh: StructuredMesh = field(repr=False)

    @property
    def num_dofs(self) -> int:
        return self.mesh.num_dofs

    @property
    def num_elements(self) -> int:
        return self.mesh.num_elements

    @property
    def element_volume(self) -> float:
        return self.mesh.h ** self.n


def build_cell_grid(n: int, m: int) -> CellGrid:
    return CellGrid(n=n, m=m, mesh=StructuredMesh(n, m, periodic=True))


@dataclass(frozen=True, eq=False)
class MacroGrid:
    """Dirichlet mesh of Omega = (0, 1)^n with the eps-cell index machinery.

    Cells Y^j = eps (j + Y) tile Omega exactly. ``J`` lists all cell
    multi-indices (flattened), ``J_sub[i]``/``B_sub[i]`` classify them against
    the strips Omega_i = {i/N <= x1 < (i+1)/N}: a cell is in J^i when it lies
    inside the closed strip and in B^i when it overlaps the strip with
    positive measure without lying inside it.
    """

    n: int
    M: int
    eps: float
    mesh: StructuredMesh = field(repr=False)
    N: int = 1
    cells_per_axis: int = 0
    qp_cell: np.ndarray = field(default=None, repr=False)
    J: np.ndarray = field(default=None, repr=False)
    J_sub: tuple = ()
    B_sub: tuple = ()

    @property
    def num_cells(self) -> int:
        return self.cells_per_axis ** self.n

    @property
    def boundary_cells(self) -> np.ndarray:
        if not self.B_sub:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate(self.B_sub))

    @property
    def boundary_layer_measure(self) -> float:
        return float(len(self.boundary_cells) * self.eps ** self.n)

    def cell_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        idx = np.clip(np.floor(x / self.eps + 1e-12).astype(int), 0, self.cells_per_axis - 1)
        return np.ravel_multi_index(tuple(idx.T), (self.cells_per_axis,) * self.n)

    def cell_centers(self) -> np.ndarray:
        k = self.cells_per_axis
        idx = np.stack(np.meshgrid(*([np.arange(k)] * self.n), indexing="ij"), -1).reshape(-1, self.n)
        return (idx + 0.5) * self.eps

    def cell_bounds(self, j: int):
        k = self.cells_per_axis
        lo = np.array(np.unravel_index(j, (k,) * self.n)) * self.eps
        return lo, lo + self.eps


def _reciprocal(eps: float) -> int:
    inv = 1.0 / eps
    k = int(round(inv))
    if k < 1 or abs(inv - k) > 1e-9 * inv:
        raise GridError(f"1/eps must be a positive integer, got eps={eps}")
    return k


_MESH_CACHE: dict = {}


def _dirichlet_mesh(n: int, M: int) -> StructuredMesh:
    key = (n, M)
    if key not in _MESH_CACHE:
        _MESH_CACHE[key] = StructuredMesh(n, M, periodic=False)
    return _MESH_CACHE[key]


def build_macro_grid(n: int, M: int, eps: float, x_mode: str = "piecewise", N: int = 1) -> MacroGrid:
    """Macro grid with M elements per axis resolving cells of size eps.

    Requires 1/eps integer and M divisible by 1/eps, so cell averages and the
    step map are exact on elements. ``N`` is the strip count in piecewise
    mode (default split gives N = 2 with the interface at x1 = 1/2).
    """
    k = _reciprocal(eps)
    if M % k != 0 or M // k < 2:
        raise GridError(f"M={M} must be divisible by 1/eps={k} with at least 2 elements per cell")
    mesh = _dirichlet_mesh(n, M)
    qp_cell_idx = np.floor(mesh.qp / eps).astype(int)
    qp_cell = np.ravel_multi_index(tuple(qp_cell_idx.T), (k,) * n)
    J = np.arange(k ** n)
    nsub = N if x_mode == "piecewise" else 1
    J_sub, B_sub = [], []
    if nsub > 1:
        lo = np.stack(np.unravel_index(J, (k,) * n), -1)[:, 0] * eps
        hi = lo + eps
        tol = 1e-12
        for i in range(nsub):
            s0, s1 = i / nsub, (i + 1) / nsub
            inside = (lo >= s0 - tol) & (hi <= s1 + tol)
            overlap = (np.minimum(hi, s1) - np.maximum(lo, s0)) > tol
            J_sub.append(J[inside])
            B_sub.append(J[overlap & ~inside])
    else:
        J_sub, B_sub = [J], [np.zeros(0, dtype=int)]
    return MacroGrid(n=n, M=M, eps=float(eps), mesh=mesh, N=nsub, cells_per_axis=k,
                     qp_cell=qp_cell, J=J, J_sub=tuple(J_sub), B_sub=tuple(B_sub))


@dataclass(frozen=True, eq=False)
class Field:
    """A discrete field: nodal scalar DOFs or per-quadrature-point values."""

    kind: str
    mesh: StructuredMesh = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.kind == "nodal":
            if vals.shape != (self.mesh.num_dofs,):
                raise GridError("nodal field length does not match the DOF count")
        elif self.kind == "qp":
            if vals.shape[0] != self.mesh.num_qp:
                raise GridError("quadrature field length does not match the point count")
        else:
            raise GridError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite entries")

    def at_qp(self) -> np.ndarray:
        return self.mesh.values(self.values) if self.kind == "nodal" else self.values

    def gradient(self) -> "Field":
        if self.kind != "nodal":
            raise GridError("gradient needs a nodal field")
        return Field("qp", self.mesh, self.mesh.gradient(self.values))


def apply_Mh(field_: Field, grid: MacroGrid) -> Field:
    """Piecewise-constant eps-cell averages of a per-point (or nodal) field.

    Cells outside J (none on the tiled unit cube) would receive 0.
    """
    if field_.mesh is not grid.mesh:
        raise GridError("field does not live on this macro grid")
    vals = field_.at_qp()
    vec = vals.ndim == 2
    v2 = vals if vec else vals[:, None]
    w = grid.mesh.qw
    sums = np.zeros((grid.num_cells, v2.shape[1]))
    np.add.at(sums, grid.qp_cell, w[:, None] * v2)
    vol = np.zeros(grid.num_cells)
    np.add.at(vol, grid.qp_cell, w)
    avg = np.zeros_like(sums)
    inJ = np.zeros(grid.num_cells, dtype=bool)
    inJ[grid.J] = True
    avg[inJ] = sums[inJ] / vol[inJ, None]
    out = avg[grid.qp_cell]
    return Field("qp", grid.mesh, out if vec else out[:, 0])


def cell_averages(field_: Field, grid: MacroGrid) -> np.ndarray:
    """The values xi^j of M_h per cell, shape (num_cells, ...)."""
    mh = apply_Mh(field_, grid).values
    first = np.zeros(grid.num_cells, dtype=int)
    first[grid.qp_cell[::-1]] = np.arange(len(grid.qp_cell))[::-1]
    return mh[first]


def gamma_h(grid: MacroGrid):
    """Step map x -> center of the eps-cell containing x."""
    centers = grid.cell_centers()

    def step(x):
        x = np.asarray(x, dtype=float)
        out = centers[grid.cell_index(x)]
        return out.reshape(x.shape) if x.ndim > 1 else out.reshape(-1)

    return step


def lp_norm(field_: Field, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = field_.at_qp()
    mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=1)
    return float(np.dot(field_.mesh.qw, mag ** p) ** (1.0 / p))


def weak_pairing(vector_field: Field, test: Field) -> float:
    if vector_field.mesh is not test.mesh:
        raise GridError("fields live on different grids")
    v, w = vector_field.at_qp(), test.at_qp()
    if v.shape != w.shape:
        raise GridError(f"shape mismatch {v.shape} vs {w.shape}")
    prod = v * w if v.ndim == 1 else np.sum(v * w, axis=1)
    return float(np.dot(vector_field.mesh.qw, prod))


def qp_field(mesh: StructuredMesh, fun) -> Field:
    """Sample a callable at the quadrature points of ``mesh``."""
    return Field("qp", mesh, np.asarray(fun(mesh.qp), dtype=float))
