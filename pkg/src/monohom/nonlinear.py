"""Damped Newton with residual-norm backtracking and a Picard fallback."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla


@dataclass
class SolverOptions:
    rtol: float = 1e-10
    max_newton: int = 50
    max_picard: int = 200
    delta_reg: float = 1e-8
    min_step: float = 2.0 ** -20


@dataclass
class Diagnostics:
    newton_iterations: int = 0
    picard_iterations: int = 0
    residual: float = np.inf
    tolerance: float = 0.0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.newton_iterations + self.picard_iterations

    def to_dict(self) -> dict:
        return {
            "newton_iterations": self.newton_iterations,
            "picard_iterations": self.picard_iterations,
            "residual": float(self.residual),
            "tolerance": float(self.tolerance),
            "converged": bool(self.converged),
            "residual_history": [float(r) for r in self.residual_history],
            "damping_history": [float(t) for t in self.damping_history],
        }


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: Diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class NonlinearSystem:
    """Callbacks describing one discrete monotone problem R(u) = 0.

    ``picard`` returns the lagged-coefficient matrix A(u) whose step is
    u - A(u)^-1 R(u). ``pin`` (periodic problems) names one DOF removed from
    linear solves; ``project`` restores the mean-zero normalization.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], object]
    picard: Callable[[np.ndarray], object]
    dual_norm: Callable[[np.ndarray], float]
    project: Callable[[np.ndarray], np.ndarray] = lambda u: u
    pin: int | None = None


def _linear_solve(matrix, rhs, pin):
    if pin is None:
        return spla.spsolve(matrix.tocsc(), rhs)
    keep = np.ones(len(rhs), dtype=bool)
    keep[pin] = False
    mat = matrix.tocsr()
    sub = mat[1:, 1:] if pin == 0 else mat[keep][:, keep]
    out = np.zeros(len(rhs))
    out[keep] = spla.spsolve(sub.tocsc(), rhs[keep])
    return out


def solve(system: NonlinearSystem, u0: np.ndarray, tol: float, opts: SolverOptions) -> tuple[np.ndarray, Diagnostics]:
    diag = Diagnostics(tolerance=float(tol))
    u = system.project(np.array(u0, dtype=float))
    r = system.residual(u)
    rn = system.dual_norm(r)
    diag.residual_history.append(rn)

    def step(direction, rn):
        t = 1.0
        while t >= opts.min_step:
            trial = system.project(u + t * direction)
            r_t = system.residual(trial)
            rn_t = system.dual_norm(r_t)
            if np.isfinite(rn_t) and rn_t <= (1.0 - 1e-4 * t) * rn:
                return trial, r_t, rn_t, t
            t *= 0.5
        return None

    phase = "newton"
    while rn > tol:
        if phase == "newton":
            if diag.newton_iterations >= opts.max_newton:
                phase = "picard"
                continue
            d = _linear_solve(system.jacobian(u), -r, system.pin)
            diag.newton_iterations += 1
            res = step(d, rn) if np.all(np.isfinite(d)) else None
            if res is None:
                phase = "picard"
                continue
        else:
            if diag.picard_iterations >= opts.max_picard:
                break
            d = _linear_solve(system.picard(u), -r, system.pin)
            diag.picard_iterations += 1
            res = step(d, rn)
            if res is None:
                break
            # hand back to Newton once Picard has made progress
            phase = "newton" if diag.newton_iterations < opts.max_newton else "picard"
        u, r, rn, t = res
        diag.damping_history.append(t)
        diag.residual_history.append(rn)
    diag.residual = float(rn)
    diag.converged = bool(rn <= tol)
    if not diag.converged:
        raise ConvergenceError(f"no convergence: residual {rn:.3e} > tol {tol:.3e}", diag)
    return u, diag
