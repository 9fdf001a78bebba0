"""Command line pipeline driven by one TOML run configuration.

Exit codes: 0 success, 1 a pass flag is false, 2 invalid configuration,
3 unwritable output directory, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .cell_solver import CellSolveError, FluxCache, solve_cell, subdomain_centroid
from .config import ConfigError, RunConfig, load_config
from .grid import GridError, build_cell_grid, build_macro_grid
from .macro_solver import HomogenizedOperator, MacroProblem, solve_macro
from .nonlinear import ConvergenceError, SolverOptions
from .verify import LemmaSweep, StudySettings, run_convergence_study, verify_lemmas, verify_operator, verify_theorem6

EXIT_FAIL, EXIT_CONFIG, EXIT_OUTPUT, EXIT_SOLVER = 1, 2, 3, 4

STUDY_COLUMNS = ("eps", "err_corrector", "err_plain", "ratio", "boundary_layer_measure", "err_Mh")


class OutputError(OSError):
    pass


class Writer:
    """Writes payload files stamped with config hash, seed and version."""

    def __init__(self, directory: Path, cfg: RunConfig):
        self.dir = Path(directory)
        self.cfg = cfg
        self.meta = {"config_hash": cfg.config_hash, "seed": cfg.study.seed, "version": __version__}
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OutputError(f"output directory {self.dir} is not writable: {exc}") from None
        self.timing = {}

    def json(self, name: str, payload: dict):
        if "json" not in self.cfg.output.formats:
            return
        body = dict(self.meta)
        body.update(payload)
        (self.dir / name).write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        if "csv" not in self.cfg.output.formats:
            return
        buf = io.StringIO()
        buf.write("# " + " ".join(f"{k}={v}" for k, v in self.meta.items()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        (self.dir / name).write_text(buf.getvalue())

    def finish(self):
        # wall times go to their own file so payloads are byte-identical across runs
        (self.dir / "timing.json").write_text(json.dumps(_plain(self.timing), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _vector(text: str | None, n: int, name: str) -> np.ndarray | None:
    if text is None:
        return None
    try:
        vals = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r}") from None
    if vals.shape != (n,):
        raise ConfigError(name, f"expected {n} comma-separated components")
    return vals


def _anchor(cfg: RunConfig, text: str | None):
    spec = cfg.spec
    if text is None:
        return subdomain_centroid(spec, 0) if spec.x_mode == "piecewise" else np.full(spec.n, 0.5)
    if spec.x_mode == "piecewise" and "," not in text and "." not in text:
        try:
            return subdomain_centroid(spec, int(text))
        except ValueError as exc:
            raise ConfigError("--anchor", str(exc)) from None
    return _vector(text, spec.n, "--anchor")


def _sweep_xis(cfg: RunConfig) -> list:
    n = cfg.spec.n
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        t = 2 * np.pi * np.arange(cfg.study.xi_directions) / cfg.study.xi_directions
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    out = [np.zeros(n)] if 0.0 in cfg.study.xi_magnitudes else []
    out += [m * d for m in cfg.study.xi_magnitudes if m > 0 for d in dirs]
    return out


def _table_anchors(cfg: RunConfig) -> list:
    spec = cfg.spec
    if spec.x_mode == "piecewise":
        return [subdomain_centroid(spec, i) for i in range(spec.N)]
    return [np.full(spec.n, (k + 0.5) / 4) for k in range(4)]


def _cell_task(spec, anchor, xi, m, opts):
    sol = solve_cell(spec, anchor, xi, build_cell_grid(spec.n, m), opts)
    return sol.b_flux, sol.diagnostics.iterations, sol.diagnostics.residual


# -- subcommands ---------------------------------------------------------

def cmd_solve_cell(cfg: RunConfig, w: Writer, args) -> int:
    spec = cfg.spec
    xi = _vector(args.xi, spec.n, "--xi")
    if xi is None:
        xi = np.eye(spec.n)[0]
    anchor = _anchor(cfg, args.anchor)
    grid = build_cell_grid(spec.n, cfg.grid.cell_m)
    t0 = time.perf_counter()
    sol = solve_cell(spec, anchor, xi, grid, cfg.solver)
    w.timing["solve_cell_seconds"] = time.perf_counter() - t0
    mesh = grid.mesh
    v = mesh.full_nodal(sol.v.values)
    cols = [f"y{k + 1}" for k in range(spec.n)]
    w.csv("cell_field.csv", cols + ["v"], [list(c) + [val] for c, val in zip(mesh.nodes, v)])
    w.json("cell_flux.json", {"xi": xi, "anchor": sol.x_anchor, "b": sol.b_flux, "cell_m": cfg.grid.cell_m,
                              "diagnostics": sol.diagnostics.to_dict()})
    return 0


def cmd_tabulate_b(cfg: RunConfig, w: Writer, args) -> int:
    spec = cfg.spec
    grid = build_cell_grid(spec.n, cfg.grid.cell_m)
    anchors = _table_anchors(cfg)
    xis = _sweep_xis(cfg)
    items = [(i, a, xi) for i, a in enumerate(anchors) for xi in xis]
    t0 = time.perf_counter()
    res = Parallel(n_jobs=args.jobs)(delayed(_cell_task)(spec, a, xi, cfg.grid.cell_m, cfg.solver)
                                     for _, a, xi in items)
    w.timing["tabulate_seconds"] = time.perf_counter() - t0
    cache = FluxCache(spec, grid, cfg.solver)
    rows = []
    for (i, a, xi), (b, its, resid) in zip(items, res):
        cache.insert(cache.key(a, xi), b)
        rows.append([i] + list(xi) + list(b) + [its, resid])
    n = spec.n
    header = ["anchor_id"] + [f"xi{k + 1}" for k in range(n)] + [f"b{k + 1}" for k in range(n)] + [
        "iterations", "residual"]
    w.csv("b_table.csv", header, rows)
    w.json("b_table.json", {"anchors": anchors, "cell_m": cfg.grid.cell_m, "entries": len(rows)})
    cache.save(w.dir / "b_cache.json")
    return 0


def _eps_arg(cfg, args) -> float:
    if args.eps is not None:
        return float(args.eps)
    return float(min(cfg.grid.eps_list))


def _macro_opts(cfg):
    s = cfg.solver
    return SolverOptions(rtol=cfg.macro_rtol, max_newton=s.max_newton, max_picard=s.max_picard,
                         delta_reg=s.delta_reg)


def _write_solution(w: Writer, stem: str, sol, extra: dict):
    mesh = sol.u.mesh
    cols = [f"x{k + 1}" for k in range(mesh.n)]
    u = mesh.full_nodal(sol.u.values)
    w.csv(f"{stem}.csv", cols + ["u"], [list(c) + [val] for c, val in zip(mesh.nodes, u)])
    meta = {"diagnostics": sol.diagnostics.to_dict(), "macro_M": mesh.cells}
    meta.update(extra)
    w.json(f"{stem}.json", meta)


def cmd_solve_eps(cfg: RunConfig, w: Writer, args) -> int:
    spec = cfg.spec
    eps = _eps_arg(cfg, args)
    grid = build_macro_grid(spec.n, cfg.grid.macro_M, eps, spec.x_mode, spec.N)
    t0 = time.perf_counter()
    sol = solve_macro(MacroProblem("eps", spec, grid), _macro_opts(cfg))
    w.timing["solve_eps_seconds"] = time.perf_counter() - t0
    _write_solution(w, "u_eps", sol, {"eps": eps})
    return 0


def cmd_solve_hom(cfg: RunConfig, w: Writer, args) -> int:
    spec = cfg.spec
    grid = build_macro_grid(spec.n, cfg.grid.macro_M, _eps_arg(cfg, args), spec.x_mode, spec.N)
    t0 = time.perf_counter()
    b = HomogenizedOperator(spec, build_cell_grid(spec.n, cfg.grid.cell_m), cfg.solver, directions=cfg.directions)
    sol = solve_macro(MacroProblem("homogenized", spec, grid, b=b), _macro_opts(cfg))
    w.timing["solve_hom_seconds"] = time.perf_counter() - t0
    _write_solution(w, "u_hom", sol, {"b_method": "table", "directions": cfg.directions})
    return 0


def _study(cfg: RunConfig, args):
    settings = StudySettings(spec=cfg.spec, eps_list=cfg.grid.eps_list, macro_M=cfg.grid.macro_M,
                             cell_m=cfg.grid.cell_m, opts=cfg.solver, macro_rtol=cfg.macro_rtol,
                             directions=cfg.directions, min_resolution=cfg.study.min_resolution,
                             jobs=args.jobs, seed=cfg.study.seed)
    return run_convergence_study(settings)


def _write_checks(w: Writer, name: str, checks):
    w.csv(name, ["name", "pass", "worst_ratio", "sample_count", "constants", "exponents"],
          [[c.name, c.passed, c.worst_ratio, c.sample_count, json.dumps(_plain(c.constants), sort_keys=True),
            json.dumps(_plain(c.exponents), sort_keys=True)] for c in checks])


def cmd_corrector_study(cfg: RunConfig, w: Writer, args) -> int:
    t0 = time.perf_counter()
    rep = _study(cfg, args)
    w.timing["study_seconds"] = time.perf_counter() - t0
    w.timing["rows"] = rep.timings
    w.csv("corrector_study.csv", STUDY_COLUMNS, [[r[c] for c in STUDY_COLUMNS] for r in rep.rows])
    checks = [c for c in rep.checks if c.name.startswith("corrector")]
    w.json("corrector_study.json", {"rows": rep.rows, "checks": [c.to_dict() for c in checks]})
    return 0 if all(c.passed for c in checks) else EXIT_FAIL


def _structure_checks(cfg: RunConfig, args) -> list:
    spec, seed = cfg.spec, cfg.study.seed
    checks = list(verify_operator(spec, cfg.study.operator_samples, seed).checks)
    grid = build_cell_grid(spec.n, cfg.study.theorem6_cell_m)
    cache = FluxCache(spec, grid, cfg.solver)
    checks += verify_theorem6(spec, cache, cfg.study.sample_count, seed).checks
    sweep = LemmaSweep(magnitudes=cfg.study.xi_magnitudes, directions=cfg.study.xi_directions)
    checks += verify_lemmas(spec, cache, sweep, seed).checks
    return checks


def cmd_verify_structure(cfg: RunConfig, w: Writer, args) -> int:
    t0 = time.perf_counter()
    checks = _structure_checks(cfg, args)
    w.timing["verify_seconds"] = time.perf_counter() - t0
    w.json("verify_structure.json", {"checks": [c.to_dict() for c in checks], "rows": []})
    _write_checks(w, "verify_structure_checks.csv", checks)
    return 0 if all(c.passed for c in checks) else EXIT_FAIL


def cmd_full_study(cfg: RunConfig, w: Writer, args) -> int:
    t0 = time.perf_counter()
    checks = _structure_checks(cfg, args)
    w.timing["verify_seconds"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    rep = _study(cfg, args)
    w.timing["study_seconds"] = time.perf_counter() - t1
    w.timing["rows"] = rep.timings
    checks += rep.checks
    w.json("full_study.json", {"checks": [c.to_dict() for c in checks], "rows": rep.rows,
                               "apriori": rep.apriori, "spec": cfg.spec.to_dict()})
    cols = list(rep.rows[0].keys()) if rep.rows else []
    w.csv("full_study_rows.csv", cols, [[r[c] for c in cols] for r in rep.rows])
    _write_checks(w, "full_study_checks.csv", checks)
    return 0 if all(c.passed for c in checks) else EXIT_FAIL


COMMANDS = {
    "solve-cell": cmd_solve_cell,
    "tabulate-b": cmd_tabulate_b,
    "solve-eps": cmd_solve_eps,
    "solve-hom": cmd_solve_hom,
    "corrector-study": cmd_corrector_study,
    "verify-structure": cmd_verify_structure,
    "full-study": cmd_full_study,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monohom", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    common.add_argument("--jobs", type=int, default=None, help="worker cap (default: available cores)")
    common.add_argument("--seed", type=int, default=None, help="overrides study.seed")
    common.add_argument("--out", type=Path, default=None, help="overrides output.directory")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "solve-cell":
            sp.add_argument("--xi", help="comma-separated macroscopic gradient (default e1)")
            sp.add_argument("--anchor", help="subdomain index or comma-separated point of Omega")
        if name in ("solve-eps", "solve-hom"):
            sp.add_argument("--eps", type=float, help="period (default: smallest of grid.eps_list)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        writer = Writer(args.out if args.out is not None else Path(cfg.output.directory), cfg)
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    try:
        code = COMMANDS[args.command](cfg, writer, args)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GridError as exc:
        print(f"config error [grid]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CellSolveError, ConvergenceError) as exc:
        print(f"solver failure [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    writer.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
