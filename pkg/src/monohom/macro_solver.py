"""Dirichlet problems on Omega: the eps-problem and the homogenized problem."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .cell_solver import FluxCache
from .grid import CellGrid, Field, MacroGrid, lp_norm
from .nonlinear import Diagnostics, NonlinearSystem, SolverOptions, solve
from .operator import OperatorSpec, eval_a, eval_a_jacobian, lagged_coefficient


def default_load(x: np.ndarray) -> np.ndarray:
    """f = pi^2 sin(pi x1)."""
    return np.pi ** 2 * np.sin(np.pi * x[..., 0])


class HomogenizedOperator:
    """Evaluator for b(x, xi) at many points.

    ``method="cell"`` calls the flux cache once per (anchor, xi), with the
    quadrature point itself as anchor. ``method="table"`` uses two exact
    reductions of the shipped family: the multiplier m(x) factors out of the
    cell problem, so b(x, xi) = m(x) b_i(xi); and a is positively
    (p-1)-homogeneous and odd in xi, so b_i(xi) = |xi|^(p-1) B_i(xi/|xi|).
    B_i is tabulated at ``directions`` equispaced angles (2D) and
    trigonometrically interpolated, which is exact for p = 2 and in 1D.
    """

    def __init__(self, spec: OperatorSpec, cell_grid: CellGrid, opts: SolverOptions | None = None,
                 method: str = "table", directions: int = 128, cache: FluxCache | None = None):
        if method not in ("table", "cell"):
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.cell_grid = cell_grid
        self.opts = opts or SolverOptions()
        self.method = method
        self.cache = cache if cache is not None else FluxCache(spec, cell_grid, self.opts)
        if method == "table":
            if spec.n == 2 and directions % 4:
                raise ValueError("direction count must be a multiple of 4")
            self._build_tables(directions)

    def _base_spec(self, i: int) -> OperatorSpec:
        s = self.spec
        return OperatorSpec(p=s.p, kernels=(s.kernels[i if s.x_mode == "piecewise" else 0],), n=s.n,
                            alpha=s.alpha, beta=s.beta)

    def _build_tables(self, K):
        self.base_caches = []
        self.coeffs = []
        for i in range(self.spec.N):
            cache = FluxCache(self._base_spec(i), self.cell_grid, self.opts)
            self.base_caches.append(cache)
            if self.spec.n == 1:
                self.coeffs.append(cache.flux(0, [1.0]))
                continue
            theta = 2 * np.pi * np.arange(K // 2) / K
            half = np.array([cache.flux(0, [np.cos(t), np.sin(t)]) for t in theta])
            table = np.vstack([half, -half])  # odd symmetry b(-xi) = -b(xi)
            self.coeffs.append(np.fft.rfft(table, axis=0) / K)
        self.directions = K

    def _unit_flux(self, i, theta):
        c = self.coeffs[i]
        K = self.directions
        k = np.arange(c.shape[0])
        w = np.full(len(k), 2.0)
        w[0] = 1.0
        if K % 2 == 0:
            w[-1] = 1.0
        phase = np.exp(1j * np.outer(theta, k))
        return np.real(phase @ (w[:, None] * c))

    def __call__(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.spec.n)
        xi = np.asarray(xi, dtype=float).reshape(-1, self.spec.n)
        if self.method == "cell":
            return np.array([self.cache.flux(xx, gg) for xx, gg in zip(x, xi)])
        out = np.zeros_like(xi)
        r = np.linalg.norm(xi, axis=1)
        sub = self.spec.subdomain(x)
        mult = self.spec.multiplier(x)
        for i in range(self.spec.N):
            sel = (sub == i) & (r > 0)
            if not np.any(sel):
                continue
            if self.spec.n == 1:
                unit = np.sign(xi[sel]) * self.coeffs[i]
            else:
                unit = self._unit_flux(i, np.arctan2(xi[sel, 1], xi[sel, 0]))
            out[sel] = (mult[sel] * r[sel] ** (self.spec.p - 1.0))[:, None] * unit
        return out

    def jacobian(self, x, xi) -> np.ndarray:
        """Forward-difference derivative with step 1e-6 (1 + |xi|)."""
        xi = np.asarray(xi, dtype=float)
        base = self(x, xi)
        h = 1e-6 * (1.0 + np.linalg.norm(xi, axis=1))
        jac = np.empty(xi.shape + (xi.shape[1],))
        for l in range(xi.shape[1]):
            step = xi.copy()
            step[:, l] += h
            jac[:, :, l] = (self(x, step) - base) / h[:, None]
        return jac

    def lagged(self, x, xi, delta_reg) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi, axis=1)
        small = r < np.sqrt(delta_reg)
        g = xi.copy()
        g[small] = 0.0
        g[small, 0] = np.sqrt(delta_reg)
        return np.sum(self(x, g) * g, axis=1) / np.sum(g * g, axis=1)


@dataclass
class MacroProblem:
    kind: str
    spec: OperatorSpec
    grid: MacroGrid
    load: Callable[[np.ndarray], np.ndarray] = default_load
    b: HomogenizedOperator | None = None

    def __post_init__(self):
        if self.kind not in ("eps", "homogenized"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "homogenized" and self.b is None:
            raise ValueError("homogenized problems need a b evaluator")
        f = np.asarray(self.load(self.grid.mesh.qp), dtype=float)
        if f.shape != (self.grid.mesh.num_qp,) or not np.all(np.isfinite(f)):
            raise ValueError("load must be finite at every quadrature point")

    def y_points(self) -> np.ndarray:
        return np.mod(self.grid.mesh.qp / self.grid.eps, 1.0)

    def flux(self, grad: np.ndarray) -> np.ndarray:
        x = self.grid.mesh.qp
        if self.kind == "eps":
            return eval_a(self.spec, x, self.y_points(), grad)
        return self.b(x, grad)


@dataclass
class MacroSolution:
    u: Field
    diagnostics: Diagnostics
    problem: MacroProblem

    @property
    def grad(self) -> Field:
        return self.u.gradient()


def solve_macro(problem: MacroProblem, opts: SolverOptions | None = None) -> MacroSolution:
    """Discrete weak solution u in V_h (zero on the boundary)."""
    opts = opts or SolverOptions(rtol=1e-9)
    mesh = problem.grid.mesh
    x = mesh.qp
    F = mesh.load(problem.load(x))
    if problem.kind == "eps":
        y = problem.y_points()
        jac = lambda g: eval_a_jacobian(problem.spec, x, y, g, opts.delta_reg)
        lag = lambda g: lagged_coefficient(problem.spec, x, y, g, opts.delta_reg)
        coef0 = problem.spec.coefficient(x, y)
    else:
        jac = lambda g: problem.b.jacobian(x, g)
        lag = lambda g: problem.b.lagged(x, g, opts.delta_reg)
        e1 = np.zeros((len(x), problem.spec.n))
        e1[:, 0] = 1.0
        coef0 = problem.b.lagged(x, e1, opts.delta_reg)

    def residual(u):
        return mesh.divergence_form(problem.flux(mesh.gradient(u))) - F

    system = NonlinearSystem(
        residual=residual,
        jacobian=lambda u: mesh.stiffness(jac(mesh.gradient(u))),
        picard=lambda u: mesh.stiffness(lag(mesh.gradient(u))),
        dual_norm=mesh.dual_norm,
    )
    if np.allclose(F, 0.0, atol=0.0):
        u0 = np.zeros(mesh.num_dofs)
    elif problem.spec.p == 2.0:
        u0 = np.zeros(mesh.num_dofs)
    else:
        u0 = spla.spsolve(mesh.stiffness(coef0).tocsc(), F)
    tol = opts.rtol * max(1.0, mesh.dual_norm(F))
    u, diag = solve(system, u0, tol, opts)
    return MacroSolution(u=Field("nodal", mesh, u), diagnostics=diag, problem=problem)


@dataclass
class AprioriRecord:
    norms: list
    bound_ok: bool
    median: float


def w1p_norm(u: Field, p: float) -> float:
    return float((lp_norm(u, p) ** p + lp_norm(u.gradient(), p) ** p) ** (1.0 / p))


def apriori_bound_check(solutions, p: float, spread: float = 0.10) -> AprioriRecord:
    """W^{1,p} norms across a sweep; bounded iff max <= (1 + spread) * median."""
    norms = [w1p_norm(s.u if isinstance(s, MacroSolution) else s, p) for s in solutions]
    med = float(np.median(norms))
    return AprioriRecord(norms=norms, bound_ok=bool(max(norms) <= (1.0 + spread) * med), median=med)
