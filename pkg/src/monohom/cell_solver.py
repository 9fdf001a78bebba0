"""Periodic cell problems and the homogenized flux b(x, xi)."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .grid import CellGrid, Field
from .nonlinear import ConvergenceError, Diagnostics, NonlinearSystem, SolverOptions, solve
from .operator import OperatorSpec, eval_a, eval_a_jacobian, lagged_coefficient

XI_DIGITS = 12


class CellSolveError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class CellSolution:
    xi: np.ndarray
    x_anchor: np.ndarray
    v: Field
    grad_total: Field
    b_flux: np.ndarray
    diagnostics: Diagnostics
    spec: OperatorSpec = field(repr=False)
    grid: CellGrid = field(repr=False)

    @property
    def mean(self) -> float:
        return float(np.dot(self.grid.mesh.qw, self.grid.mesh.values(self.v.values)))


def _anchor_array(spec: OperatorSpec, x_anchor) -> np.ndarray:
    if np.isscalar(x_anchor) and spec.x_mode == "piecewise" and isinstance(x_anchor, (int, np.integer)):
        # subdomain index -> strip centroid
        i = int(x_anchor)
        if not 0 <= i < spec.N:
            raise ValueError(f"subdomain index {i} out of range")
        x = np.full(spec.n, 0.5)
        x[0] = (i + 0.5) / spec.N
        return x
    x = np.asarray(x_anchor, dtype=float).reshape(-1)
    if x.shape != (spec.n,):
        raise ValueError("anchor must be a point of Omega")
    return x


def subdomain_centroid(spec: OperatorSpec, i: int) -> np.ndarray:
    return _anchor_array(spec, int(i))


def solve_cell(spec: OperatorSpec, x_anchor, xi, grid: CellGrid, opts: SolverOptions | None = None) -> CellSolution:
    """Solve -div a(x, y, xi + Dv) = 0 on Y for periodic, mean-zero v."""
    opts = opts or SolverOptions()
    if grid.n != spec.n:
        raise ValueError("cell grid dimension does not match the operator")
    if grid.mesh.num_qp == 0:
        raise CellSolveError("zero-measure grid")
    for ker in spec.kernels:
        if grid.m % ker.bands:
            raise ValueError(f"cell resolution m={grid.m} does not align with the {ker.bands} bands of {ker.kind}")
    mesh = grid.mesh
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    if not np.all(np.isfinite(xi)):
        raise CellSolveError("non-finite xi")
    x = _anchor_array(spec, x_anchor)
    y = mesh.qp
    xq = np.broadcast_to(x, y.shape)
    weights = mesh.qw / mesh.qw.sum()
    vals = mesh.interp

    def total(v):
        return xi[None, :] + mesh.gradient(v)

    def project(v):
        return v - np.dot(weights, vals @ v)

    system = NonlinearSystem(
        residual=lambda v: mesh.divergence_form(eval_a(spec, xq, y, total(v))),
        jacobian=lambda v: mesh.stiffness(eval_a_jacobian(spec, xq, y, total(v), opts.delta_reg)),
        picard=lambda v: mesh.stiffness(lagged_coefficient(spec, xq, y, total(v), opts.delta_reg)),
        dual_norm=mesh.dual_norm,
        project=project,
        pin=0,
    )
    tol = opts.rtol * (1.0 + np.linalg.norm(xi) ** (spec.p - 1.0))
    try:
        v, diag = solve(system, np.zeros(mesh.num_dofs), tol, opts)
    except ConvergenceError as exc:
        raise CellSolveError(f"cell problem did not converge for xi={xi.tolist()}: {exc}", exc.diagnostics) from exc
    g = total(v)
    flux = eval_a(spec, xq, y, g)
    b = weights @ flux
    return CellSolution(xi=xi, x_anchor=x, v=Field("nodal", mesh, v), grad_total=Field("qp", mesh, g),
                        b_flux=b, diagnostics=diag, spec=spec, grid=grid)


def quantize(xi) -> tuple:
    return tuple(round(float(c), XI_DIGITS) + 0.0 for c in np.asarray(xi).reshape(-1))


class FluxCache:
    """Cell solutions keyed by (anchor key, quantized xi).

    Reads are lock-free; inserts are serialized. A miss solves the cell
    problem at the quantized xi so stored values are a pure function of the
    key.
    """

    def __init__(self, spec: OperatorSpec, grid: CellGrid, opts: SolverOptions | None = None,
                 keep_solutions: bool = True):
        self.spec = spec
        self.grid = grid
        self.opts = opts or SolverOptions()
        self.keep_solutions = keep_solutions
        self._flux: dict = {}
        self._sol: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def key(self, x_anchor, xi) -> tuple:
        return (self.spec.anchor_key(_anchor_array(self.spec, x_anchor)), quantize(xi))

    def __len__(self):
        return len(self._flux)

    def solution(self, x_anchor, xi) -> CellSolution:
        k = self.key(x_anchor, xi)
        sol = self._sol.get(k)
        if sol is None:
            sol = solve_cell(self.spec, x_anchor, np.array(k[1]), self.grid, self.opts)
            with self._lock:
                self.misses += 1
                self._flux.setdefault(k, sol.b_flux)
                if self.keep_solutions:
                    self._sol.setdefault(k, sol)
        else:
            self.hits += 1
        return sol

    def flux(self, x_anchor, xi) -> np.ndarray:
        k = self.key(x_anchor, xi)
        b = self._flux.get(k)
        if b is not None:
            self.hits += 1
            return b.copy()
        return self.solution(x_anchor, xi).b_flux.copy()

    def insert(self, key, b):
        with self._lock:
            self._flux.setdefault(key, np.asarray(b, dtype=float))

    def cache_tag(self) -> str:
        return f"{self.spec.spec_hash()}:m{self.grid.m}"

    def save(self, path) -> None:
        """Persist fluxes to JSON, versioned by the operator hash and grid."""
        entries = [{"anchor": list(k[0]), "xi": list(k[1]), "b": [float(c) for c in b]}
                   for k, b in sorted(self._flux.items(), key=lambda kv: repr(kv[0]))]
        payload = {"version": __version__, "tag": self.cache_tag(), "entries": entries}
        Path(path).write_text(json.dumps(payload, indent=1))

    def load(self, path) -> int:
        payload = json.loads(Path(path).read_text())
        if payload.get("tag") != self.cache_tag():
            raise ValueError("cache file belongs to a different operator or grid")
        for e in payload["entries"]:
            anchor = tuple(e["anchor"]) if e["anchor"][0] == "x" else (e["anchor"][0], int(e["anchor"][1]))
            self.insert((anchor, tuple(e["xi"])), np.array(e["b"]))
        return len(payload["entries"])


def homogenized_flux(spec: OperatorSpec, x_anchor, xi, grid: CellGrid, cache: FluxCache | None = None,
                     opts: SolverOptions | None = None) -> np.ndarray:
    """b(x, xi) = int_Y a(x, y, xi + Dv) dy through the flux cache."""
    if cache is None:
        cache = FluxCache(spec, grid, opts)
    elif cache.spec != spec or cache.grid is not grid:
        raise ValueError("cache was built for a different operator or grid")
    return cache.flux(x_anchor, xi)


def cell_energy_identity(sol: CellSolution, c_b: float | None = None) -> float:
    """Return int_Y <a(x, y, xi + Dv), xi + Dv> dy.

    Checks that it equals <b, xi> (the corrector term vanishes by the weak
    equation) and, when ``c_b`` is given, the bound int |xi + Dv|^p <= c_b (1 + value).
    """
    if not sol.diagnostics.converged:
        raise CellSolveError("unconverged cell solution")
    mesh = sol.grid.mesh
    w = mesh.qw / mesh.qw.sum()
    g = sol.grad_total.values
    flux = eval_a(sol.spec, np.broadcast_to(sol.x_anchor, g.shape), mesh.qp, g)
    value = float(w @ np.sum(flux * g, axis=1))
    scale = 1.0 + abs(value)
    if abs(value - float(np.dot(sol.b_flux, sol.xi))) > 1e-8 * scale:
        raise AssertionError("energy identity <b, xi> = int <a, xi + Dv> violated")
    if c_b is not None:
        lhs = float(w @ np.linalg.norm(g, axis=1) ** sol.spec.p)
        if lhs > c_b * (1.0 + value) * (1 + 1e-12):
            raise AssertionError("coercivity bound int |xi + Dv|^p <= c_b (1 + energy) violated")
    return value
