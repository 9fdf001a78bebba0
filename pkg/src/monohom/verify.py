"""Sampled verification of the structure inequalities and convergence studies."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from .cell_solver import CellSolveError, FluxCache, subdomain_centroid
from .corrector import build_corrector, corrector_error
from .grid import Field, apply_Mh, build_cell_grid, build_macro_grid, lp_norm
from .macro_solver import HomogenizedOperator, MacroProblem, apriori_bound_check, solve_macro
from .nonlinear import SolverOptions
from .operator import OperatorSpec, eval_a, fit_structure_constants, modulus_omega

STABILITY_TOL = 0.10
DEFECT_FLOOR = 1e-10
ERROR_FLOOR = 1e-8


@dataclass
class CheckRecord:
    name: str
    constants: dict
    exponents: dict
    sample_count: int
    worst_ratio: float
    passed: bool
    seed: int
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = bool(d.pop("passed"))
        d["constants"] = {k: float(v) for k, v in self.constants.items()}
        d["exponents"] = {k: float(v) for k, v in self.exponents.items()}
        d["worst_ratio"] = float(self.worst_ratio)
        d["sample_count"] = int(self.sample_count)
        return d


@dataclass
class StructureReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> CheckRecord:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def extend(self, other: "StructureReport"):
        self.checks.extend(other.checks)
        return self


def _unit(rng, count, n):
    d = rng.standard_normal((count, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _log_slope(ts, vals) -> float:
    vals = np.asarray(vals)
    if np.any(vals <= 0):
        return float("nan")
    return float(np.polyfit(np.log(ts), np.log(vals), 1)[0])


def verify_operator(spec: OperatorSpec, sample_count: int, seed: int) -> StructureReport:
    """Continuity, monotonicity, zero law and growth bounds for a itself."""
    fit = fit_structure_constants(spec, sample_count, seed)
    rep = StructureReport()
    rep.checks.append(CheckRecord(
        "a_continuity", {"c1_hat": fit.c1_hat, "c1_declared": spec.c1}, {"alpha": spec.alpha, "alpha_hat": fit.alpha_hat},
        fit.sample_count, fit.c1_hat, bool(fit.c1_hat <= spec.c1 * (1 + 1e-9) and fit.alpha_hat >= spec.alpha - 0.05),
        seed))
    rep.checks.append(CheckRecord(
        "a_monotonicity", {"c2_hat": fit.c2_hat, "c2_declared": spec.c2}, {"beta": spec.beta, "beta_hat": fit.beta_hat},
        fit.sample_count, fit.c2_hat, bool(fit.c2_hat >= spec.c2 * (1 - 1e-9) and fit.beta_hat <= spec.beta + 0.05),
        seed))
    rep.checks.append(CheckRecord(
        "a_zero", {"max_zero_violation": fit.max_zero_violation}, {}, fit.sample_count, fit.max_zero_violation,
        bool(fit.max_zero_violation == 0.0), seed))
    if spec.x_mode == "modulated":
        rng = np.random.default_rng(seed + 17)
        x1, x2, y = rng.random((3, sample_count, spec.n))
        xi = _unit(rng, sample_count, spec.n) * 10.0 ** rng.uniform(-2, 1, (sample_count, 1))
        lhs = np.linalg.norm(eval_a(spec, x1, y, xi) - eval_a(spec, x2, y, xi), axis=1) ** spec.q
        mod = modulus_omega(spec, np.linalg.norm(x1 - x2, axis=1)) * (1 + np.linalg.norm(xi, axis=1)) ** spec.p
        worst = float(np.max(lhs / np.where(mod > 0, mod, np.inf)))
        rep.checks.append(CheckRecord("a_x_modulus", {"max_ratio": worst}, {"q": spec.q}, sample_count, worst,
                                      bool(np.all(lhs <= mod * (1 + 1e-12))), seed))
    return rep


def _pair_samples(rng, count, n):
    """Mix of near pairs (for Hoelder behaviour) and independent pairs."""
    mag = 10.0 ** rng.uniform(-2, 1, (count, 1))
    xi1 = _unit(rng, count, n) * mag
    near = rng.random(count) < 0.5
    delta = 10.0 ** rng.uniform(-3, 0, (count, 1)) * _unit(rng, count, n) * (1 + mag)
    far = _unit(rng, count, n) * 10.0 ** rng.uniform(-2, 1, (count, 1))
    xi2 = np.where(near[:, None], xi1 + delta, far)
    return xi1, xi2


def _anchors(spec: OperatorSpec, rng, count):
    if spec.x_mode == "piecewise":
        idx = rng.integers(0, spec.N, count)
        return np.array([subdomain_centroid(spec, i) for i in idx])
    return rng.random((count, spec.n))


def verify_theorem6(spec: OperatorSpec, b_evaluator: FluxCache, sample_count: int, seed: int,
                    calibration_count: int | None = None) -> StructureReport:
    """Sampled properties (a)-(d) of the homogenized operator.

    ``b_evaluator`` is a flux cache; every b value is an actual cell solve
    (anchored at the sampled x). Failed solves are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    n, p, alpha, beta = spec.n, spec.p, spec.alpha, spec.beta
    gam = alpha / (beta - alpha)
    xs = _anchors(spec, rng, sample_count)
    xi1, xi2 = _pair_samples(rng, sample_count, n)
    failures = 0

    def b(x, xi):
        nonlocal failures
        try:
            return b_evaluator.flux(x, xi)
        except CellSolveError:
            failures += 1
            return None

    mono, cont = [], []
    bmax = 1.0
    for x, s1, s2 in zip(xs, xi1, xi2):
        b1, b2 = b(x, s1), b(x, s2)
        if b1 is None or b2 is None:
            continue
        bmax = max(bmax, float(np.linalg.norm(b1)), float(np.linalg.norm(b2)))
        d = np.linalg.norm(s1 - s2)
        if d == 0:
            continue
        base = 1 + np.linalg.norm(s1) + np.linalg.norm(s2)
        mono.append(np.dot(b1 - b2, s1 - s2) / (base ** (p - beta) * d ** beta))
        cont.append(np.linalg.norm(b1 - b2) / (base ** (p - 1 - gam) * d ** gam))
    mono = np.asarray(mono)
    cont = np.asarray(cont)
    rep = StructureReport()
    c2t = float(mono.min())
    rep.checks.append(CheckRecord("b_monotonicity", {"c2_tilde": c2t}, {"beta": beta}, len(mono), c2t,
                                  bool(c2t > 0), seed, f"skipped={failures}"))

    # local Hoelder exponent of b(x, .) from log-log slopes, origin included
    nb = 12
    ts = np.logspace(-4, -1, 7)
    bases = np.vstack([np.zeros((1, n)), _unit(rng, nb - 1, n) * 10.0 ** rng.uniform(-1, 0.5, (nb - 1, 1))])
    dirs = _unit(rng, nb, n)
    xb = _anchors(spec, rng, nb)
    slopes = []
    for x, s, d in zip(xb, bases, dirs):
        b0 = b(x, s)
        vals = []
        for t in ts:
            bt = b(x, s + t * d)
            vals.append(np.linalg.norm(bt - b0) if bt is not None and b0 is not None else np.nan)
        slope = _log_slope(ts, vals)
        if np.isfinite(slope):
            slopes.append(slope)
    holder = float(min(slopes))
    c1t = float(cont.max())
    rep.checks.append(CheckRecord("b_continuity", {"c1_tilde": c1t}, {"gamma": gam, "holder_measured": holder},
                                  len(cont), c1t, bool(np.isfinite(c1t) and holder >= gam - 0.1), seed))

    zero = [np.linalg.norm(b(x, np.zeros(n))) for x in xs[: min(50, len(xs))]]
    zmax = float(max(zero))
    rep.checks.append(CheckRecord("b_zero", {"max_abs_b0": zmax, "flux_scale": bmax}, {}, len(zero), zmax,
                                  bool(zmax <= 1e-8 * (1 + bmax)), seed))

    if spec.x_mode == "modulated":
        rep.checks.append(_theorem6_modulus(spec, b, rng, sample_count, calibration_count or max(200, sample_count // 4),
                                            seed))
    else:
        # b is constant in x on every strip
        spread = 0.0
        for s1 in xi1[:20]:
            for i in range(spec.N):
                lo, hi = i / spec.N, (i + 1) / spec.N
                pts = rng.random((3, n))
                pts[:, 0] = lo + (hi - lo) * (0.05 + 0.9 * pts[:, 0])
                vals = [b(x, s1) for x in pts]
                spread = max(spread, max(np.linalg.norm(v - vals[0]) for v in vals))
        rep.checks.append(CheckRecord("b_piecewise_x_constant", {"max_spread": spread}, {}, 20 * spec.N * 3, spread,
                                      bool(spread == 0.0), seed))
    return rep


def omega_tilde_shape(spec: OperatorSpec, d):
    """omega(d) + omega(d)^(alpha / (beta - 1)), the composite x-modulus of b."""
    w = modulus_omega(spec, d)
    return w + w ** (spec.alpha / (spec.beta - 1.0))


def _theorem6_modulus(spec, b, rng, count, calib, seed, refine_starts=3, refine_evals=150):
    """x-modulus of b with a fitted constant C in front of omega_tilde.

    C is an estimate of the supremum of the ratio over the sampling domain
    (x1, x2 in Omega, 1e-2 <= |xi| <= 10): the max over a calibration batch,
    refined by bounded Nelder-Mead from the best calibration points, plus a
    10% allowance. The check is that every main-batch sample stays below C.
    Plain random maxima creep up slowly with the sample count, so without the
    refinement a calibration batch systematically underestimates the bound.
    """
    n = spec.n

    def unpack(z):
        x1, x2, s = z[:n], z[n:2 * n], z[2 * n]
        d = np.array([np.cos(z[2 * n + 1]), np.sin(z[2 * n + 1])]) if n == 2 else np.array([1.0])
        return x1, x2, 10.0 ** s * d

    def ratio(x1, x2, s):
        b1, b2 = b(x1, s), b(x2, s)
        if b1 is None or b2 is None:
            return np.nan
        shape = omega_tilde_shape(spec, np.linalg.norm(x1 - x2)) * (1 + np.linalg.norm(s)) ** spec.p
        lhs = np.linalg.norm(b1 - b2) ** spec.q
        return lhs / shape if shape > 0 else (0.0 if lhs == 0 else np.inf)

    def batch(m):
        x1, x2 = rng.random((2, m, n))
        logs = rng.uniform(-2, 1, m)
        ang = rng.uniform(0, 2 * np.pi, m)
        z = np.column_stack([x1, x2, logs] + ([ang] if n == 2 else []))
        r = np.array([ratio(*unpack(zz)) for zz in z])
        ok = np.isfinite(r)
        return z[ok], r[ok]

    zc, rc = batch(calib)
    best = float(rc.max())
    lo = [0.0] * (2 * n) + [-2.0] + ([0.0] if n == 2 else [])
    hi = [1.0] * (2 * n) + [1.0] + ([2 * np.pi] if n == 2 else [])
    for z0 in zc[np.argsort(rc)[::-1][:refine_starts]]:
        res = minimize(lambda z: -np.nan_to_num(ratio(*unpack(np.clip(z, lo, hi)))), z0, method="Nelder-Mead",
                       bounds=list(zip(lo, hi)), options={"maxfev": refine_evals, "xatol": 1e-4, "fatol": 1e-8})
        best = max(best, float(-res.fun))
    C = best * (1 + STABILITY_TOL)
    _, main = batch(count)
    worst = float(main.max())
    return CheckRecord("b_x_modulus", {"C_fitted": C, "calibration_max": float(rc.max()), "sup_estimate": best},
                       {"alpha_over_beta_minus_1": spec.alpha / (spec.beta - 1.0)}, len(main), worst,
                       bool(np.isfinite(C) and worst <= C), seed,
                       "C = 1.1 x refined supremum estimate from an independent calibration batch")


@dataclass
class LemmaSweep:
    magnitudes: tuple = (0.0, 0.1, 1.0, 10.0)
    directions: int = 16


def _lemma_constants(spec, cache, anchors, xis):
    p, alpha, beta = spec.p, spec.alpha, spec.beta
    mesh = cache.grid.mesh
    w = mesh.qw / mesh.qw.sum()
    c_a = c_b = c_c = 0.0
    lemma3 = 0.0
    zero_rows = []
    for x in anchors:
        sols = [cache.solution(x, xi) for xi in xis]
        for sol in sols:
            g = sol.grad_total.values
            aval = eval_a(spec, np.broadcast_to(sol.x_anchor, g.shape), mesh.qp, g)
            gn = np.linalg.norm(g, axis=1)
            c_a = max(c_a, float(np.max(np.linalg.norm(aval, axis=1) / (1 + gn ** (p - 1)))))
            c_b = max(c_b, float(np.max(gn ** p / (1 + np.sum(aval * g, axis=1)))))
            c_c = max(c_c, float(w @ gn ** p / (1 + np.linalg.norm(sol.xi) ** p)))
        for i, s1 in enumerate(sols):
            for s2 in sols[i:]:
                diff = s1.grad_total.values - s2.grad_total.values
                lhs = float(w @ np.linalg.norm(diff, axis=1) ** p)
                d = np.linalg.norm(s1.xi - s2.xi)
                if d == 0:
                    zero_rows.append(lhs)
                    continue
                rhs = (1 + np.linalg.norm(s1.xi) ** p + np.linalg.norm(s2.xi) ** p) ** (
                    (beta - alpha - 1) / (beta - alpha)) * d ** (p / (beta - alpha))
                lemma3 = max(lemma3, lhs / rhs)
    return {"c_a": c_a, "c_b": c_b, "c_c": c_c, "C_lemma3": lemma3}, zero_rows


def verify_lemmas(spec: OperatorSpec, cache: FluxCache, sweep: LemmaSweep, seed: int) -> StructureReport:
    """Smallest constants making the cell growth, coercivity and flux-difference bounds hold over the sweep.

    Each constant is fitted at ``sweep.directions`` and again at twice as
    many directions (a superset); it passes when finite and stable within 10%.
    """
    if not sweep.magnitudes or sweep.directions < 1:
        raise ValueError("empty sweep")
    rng = np.random.default_rng(seed)
    dirs = _unit(rng, 2 * sweep.directions, spec.n)
    anchors = _anchors(spec, rng, 2) if spec.x_mode == "modulated" else [
        subdomain_centroid(spec, i) for i in range(spec.N)]

    def xis(k):
        out = [np.zeros(spec.n)] if 0.0 in sweep.magnitudes else []
        out += [m * d for m in sweep.magnitudes if m > 0 for d in dirs[:k]]
        return out

    small, zeros_small = _lemma_constants(spec, cache, anchors, xis(sweep.directions))
    large, zeros_large = _lemma_constants(spec, cache, anchors, xis(2 * sweep.directions))
    rep = StructureReport()
    names = {"c_a": "lemma2a", "c_b": "lemma2b", "c_c": "lemma2c", "C_lemma3": "lemma3"}
    for key, name in names.items():
        lo, hi = small[key], large[key]
        stable = np.isfinite(hi) and hi > 0 and abs(hi - lo) <= STABILITY_TOL * hi
        rep.checks.append(CheckRecord(name, {key: hi, f"{key}_half_sample": lo}, {}, len(xis(2 * sweep.directions)),
                                      hi, bool(stable), seed))
    zmax = float(max(zeros_large)) if zeros_large else 0.0
    rep.checks.append(CheckRecord("lemma3_equal_pairs_zero", {"max_lhs": zmax}, {}, len(zeros_large), zmax,
                                  bool(zmax == 0.0), seed))
    return rep


# -- convergence study ---------------------------------------------------

def battery_fields(x: np.ndarray, k: int):
    """phi_k = prod sin(k pi x_i), its gradient, and the vector field phi_k (1, ..., 1)."""
    s = np.sin(k * np.pi * x)
    c = np.cos(k * np.pi * x)
    phi = np.prod(s, axis=1)
    grad = np.empty_like(x)
    for i in range(x.shape[1]):
        others = np.prod(np.delete(s, i, axis=1), axis=1) if x.shape[1] > 1 else 1.0
        grad[:, i] = k * np.pi * c[:, i] * others
    return phi, grad, np.repeat(phi[:, None], x.shape[1], axis=1)


@dataclass
class StudySettings:
    spec: OperatorSpec
    eps_list: tuple
    macro_M: int
    cell_m: int = 32
    opts: SolverOptions = field(default_factory=SolverOptions)
    macro_rtol: float = 1e-9
    directions: int = 128
    min_resolution: int = 8
    test_count: int = 4
    ratio_threshold: float = 0.75
    dominance_factor: float = 0.5
    jobs: int = 1
    seed: int = 0


@dataclass
class ConvergenceReport:
    rows: list
    checks: list
    apriori: dict
    timings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _macro_opts(settings):
    o = settings.opts
    return SolverOptions(rtol=settings.macro_rtol, max_newton=o.max_newton, max_picard=o.max_picard,
                         delta_reg=o.delta_reg, min_step=o.min_step)


def _study_row(settings: StudySettings, eps: float, u_hom: np.ndarray, bDu: np.ndarray):
    spec = settings.spec
    t0 = time.perf_counter()
    grid = build_macro_grid(spec.n, settings.macro_M, eps, spec.x_mode, spec.N)
    mesh = grid.mesh
    sol = solve_macro(MacroProblem("eps", spec, grid), _macro_opts(settings))
    t_solve = time.perf_counter() - t0
    u = Field("nodal", mesh, u_hom)
    cell_grid = build_cell_grid(spec.n, settings.cell_m)
    cache = FluxCache(spec, cell_grid, settings.opts)
    mode = "piecewise" if spec.x_mode == "piecewise" else "modulated"
    P = build_corrector(u, spec, grid, cell_grid, mode, cache)
    err = corrector_error(sol.u, P, spec.p, u)
    diff = Field("nodal", mesh, sol.u.values - u_hom)
    x = mesh.qp
    a_h = eval_a(spec, x, np.mod(x / eps, 1.0), sol.u.gradient().values)
    row = {
        "eps": eps,
        "err_u_L2": lp_norm(diff, 2.0),
        "err_u_Lp": lp_norm(diff, spec.p),
        "err_grad_Lp": err.plain,
        "err_corrector": err.corrector,
        "err_plain": err.plain,
        "ratio": err.ratio,
        "err_Mh": lp_norm(Field("qp", mesh, u.gradient().values - apply_Mh(u.gradient(), grid).values), spec.p),
        "boundary_layer_measure": grid.boundary_layer_measure,
        "newton_iterations": sol.diagnostics.newton_iterations,
        "picard_iterations": sol.diagnostics.picard_iterations,
        "residual": sol.diagnostics.residual,
        "cell_solves": len(cache),
    }
    for k in range(1, settings.test_count + 1):
        _, grad, vec = battery_fields(x, k)
        row[f"defect_{k}"] = abs(float(mesh.qw @ np.sum((a_h - bDu) * vec, axis=1)))
        row[f"defect_grad_{k}"] = abs(float(mesh.qw @ np.sum((a_h - bDu) * grad, axis=1)))
    timing = {"eps": eps, "solve_seconds": t_solve, "total_seconds": time.perf_counter() - t0}
    return row, sol.u.values, timing


def _decreasing(seq) -> bool:
    return bool(all(b < a for a, b in zip(seq, seq[1:])))


def run_convergence_study(settings: StudySettings) -> ConvergenceReport:
    """eps-sweep: u_h vs u, corrector error, and flux pairing defects.

    All eps-problems and the homogenized problem share one macro grid with
    M elements per axis, which must resolve every eps-cell by at least
    ``min_resolution`` elements per axis. Flux defects pair a(x, x/eps, Du_h)
    - b(x, Du) with the vector fields phi_k (1, ..., 1); the pairings with
    D phi_k are reported too, but vanish up to discretization error for
    every eps since both fluxes balance the same load.
    """
    spec = settings.spec
    eps_list = sorted((float(e) for e in settings.eps_list), reverse=True)
    for e in eps_list:
        if settings.macro_M * e < settings.min_resolution - 1e-9:
            raise ValueError(f"macro grid M={settings.macro_M} resolves eps={e} with fewer than "
                             f"{settings.min_resolution} elements per axis")
    t0 = time.perf_counter()
    grid0 = build_macro_grid(spec.n, settings.macro_M, eps_list[-1], spec.x_mode, spec.N)
    cell_grid = build_cell_grid(spec.n, settings.cell_m)
    b = HomogenizedOperator(spec, cell_grid, settings.opts, directions=settings.directions)
    hom = solve_macro(MacroProblem("homogenized", spec, grid0, b=b), _macro_opts(settings))
    bDu = b(grid0.mesh.qp, hom.u.gradient().values)
    t_hom = time.perf_counter() - t0
    out = Parallel(n_jobs=settings.jobs)(delayed(_study_row)(settings, e, hom.u.values, bDu) for e in eps_list)
    rows = [r for r, _, _ in out]
    timings = [{"stage": "homogenized", "seconds": t_hom}] + [t for _, _, t in out]
    rec = apriori_bound_check([Field("nodal", grid0.mesh, uh) for _, uh, _ in out], spec.p)

    checks = []
    eu = [r["err_u_L2"] for r in rows]
    ratios = [b_ / a_ if a_ > 0 else (0.0 if b_ == 0 else np.inf) for a_, b_ in zip(eu, eu[1:])]
    # no oscillation (e.g. constant kappa): u_h = u to solver tolerance on every row
    u_floor = ERROR_FLOOR * (1.0 + lp_norm(Field("nodal", grid0.mesh, hom.u.values), 2.0))
    exact = max(eu) <= u_floor
    checks.append(CheckRecord("u_error_decreasing", {"max_ratio": max(ratios) if ratios else 0.0,
                                                     "noise_floor": u_floor}, {}, len(rows),
                              max(ratios) if ratios else 0.0,
                              exact or (_decreasing(eu) and all(r <= settings.ratio_threshold for r in ratios)),
                              settings.seed, "u_h = u to solver tolerance" if exact else ""))
    ec = [r["err_corrector"] for r in rows]
    last = rows[-1]
    checks.append(CheckRecord("corrector_error_decreasing", {}, {}, len(rows), max(ec), _decreasing(ec), settings.seed))
    checks.append(CheckRecord("corrector_dominates", {"ratio_at_smallest_eps": last["ratio"]}, {}, 1, last["ratio"],
                              bool(last["ratio"] < settings.dominance_factor), settings.seed))
    # a pairing that vanishes identically (e.g. even k in 1D, where both fluxes are F + const)
    # sits at round-off for every eps; it counts as converged rather than as non-monotone
    floor = DEFECT_FLOOR * (1.0 + float(np.max(np.abs(bDu))))
    for k in range(1, settings.test_count + 1):
        dk = [r[f"defect_{k}"] for r in rows]
        vanishing = max(dk) <= floor
        checks.append(CheckRecord(f"flux_defect_{k}_decreasing", {"noise_floor": floor}, {}, len(rows), max(dk),
                                  _decreasing(dk) or vanishing, settings.seed,
                                  "identically zero pairing" if vanishing else ""))
    checks.append(CheckRecord("apriori_bound", {"median": rec.median, "max": max(rec.norms)}, {}, len(rows),
                              max(rec.norms), rec.bound_ok, settings.seed))
    return ConvergenceReport(rows=rows, checks=checks, apriori={"w1p_norms": rec.norms, "bound_ok": rec.bound_ok},
                             timings=timings)
