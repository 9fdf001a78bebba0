"""Run configuration: one TOML file with [operator], [grid], [solver], [study], [output]."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .nonlinear import SolverOptions
from .operator import Kernel, OperatorSpec


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


SCHEMA = {
    "operator": {"p", "alpha", "beta", "kernel", "x_mode", "theta", "lipschitz_L", "N", "subdomain_values"},
    "operator.kernel": {"kind", "values"},
    "grid": {"n", "cell_m", "macro_M", "eps_list"},
    "solver": {"rtol", "macro_rtol", "max_newton", "max_picard", "delta_reg", "directions"},
    "study": {"eps_list", "xi_magnitudes", "xi_directions", "sample_count", "operator_samples", "seed",
              "theorem6_cell_m", "min_resolution"},
    "output": {"directory", "formats"},
}


@dataclass
class GridConfig:
    n: int = 1
    cell_m: int = 32
    macro_M: int = 128
    eps_list: tuple = (0.25, 0.125, 0.0625)


@dataclass
class StudyConfig:
    xi_magnitudes: tuple = (0.0, 0.1, 1.0, 10.0)
    xi_directions: int = 16
    sample_count: int = 2000
    operator_samples: int = 4000
    seed: int = 0
    theorem6_cell_m: int = 16
    min_resolution: int = 8


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass
class RunConfig:
    spec: OperatorSpec
    grid: GridConfig
    solver: SolverOptions
    macro_rtol: float
    directions: int
    study: StudyConfig
    output: OutputConfig
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("study", {})["seed"] = int(seed)
        return build_config(raw)


def _check_keys(section: str, table: dict):
    allowed = SCHEMA[section]
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}", "unknown key")


def _get(table, section, key, default, kind):
    if key not in table:
        return default
    val = table[key]
    try:
        if kind is tuple:
            if not isinstance(val, list):
                raise TypeError
            return tuple(float(v) for v in val)
        if kind is int and (isinstance(val, bool) or not float(val).is_integer()):
            raise TypeError
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", f"invalid value {val!r}") from None


def build_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a table")
    for section in raw:
        if section not in ("operator", "grid", "solver", "study", "output"):
            raise ConfigError(section, "unknown section")
    op = raw.get("operator")
    if op is None:
        raise ConfigError("operator", "missing section")
    _check_keys("operator", op)
    ker = op.get("kernel", {})
    if not isinstance(ker, dict):
        raise ConfigError("operator.kernel", "must be a table")
    _check_keys("operator.kernel", ker)

    g = raw.get("grid", {})
    _check_keys("grid", g)
    st = raw.get("study", {})
    _check_keys("study", st)
    if "eps_list" in g and "eps_list" in st and list(g["eps_list"]) != list(st["eps_list"]):
        raise ConfigError("study.eps_list", "conflicts with grid.eps_list")
    grid = GridConfig(
        n=_get(g, "grid", "n", 1, int),
        cell_m=_get(g, "grid", "cell_m", 32, int),
        macro_M=_get(g, "grid", "macro_M", 128, int),
        eps_list=_get(g, "grid", "eps_list", None, tuple) or _get(st, "study", "eps_list", GridConfig.eps_list, tuple),
    )
    if grid.n not in (1, 2):
        raise ConfigError("grid.n", "must be 1 or 2")
    if grid.cell_m < 2:
        raise ConfigError("grid.cell_m", "must be >= 2")

    x_mode = _get(op, "operator", "x_mode", "piecewise", str)
    N = _get(op, "operator", "N", 1, int)
    kind = _get(ker, "operator.kernel", "kind", "laminate", str)
    values = _get(ker, "operator.kernel", "values", (1.0,), tuple)
    try:
        if "subdomain_values" in op:
            sv = op["subdomain_values"]
            if x_mode != "piecewise" or not isinstance(sv, list) or len(sv) != N:
                raise ConfigError("operator.subdomain_values", "needs piecewise mode and one list per subdomain")
            kernels = tuple(Kernel(kind, tuple(v)) for v in sv)
        else:
            kernels = tuple(Kernel(kind, values) for _ in range(N if x_mode == "piecewise" else 1))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("operator.kernel", str(exc)) from None
    if x_mode == "modulated" and N != 1:
        raise ConfigError("operator.N", "modulated mode uses a single subdomain")
    try:
        spec = OperatorSpec(
            p=_get(op, "operator", "p", 2.0, float),
            kernels=kernels,
            n=grid.n,
            x_mode=x_mode,
            theta=_get(op, "operator", "theta", 0.0, float),
            lipschitz_L=_get(op, "operator", "lipschitz_L", 0.0, float),
            alpha=_get(op, "operator", "alpha", None, float) if "alpha" in op else None,
            beta=_get(op, "operator", "beta", None, float) if "beta" in op else None,
        )
    except ValueError as exc:
        bad = next((k for k in ("p", "alpha", "beta", "theta", "x_mode") if k in str(exc)), "operator")
        raise ConfigError(f"operator.{bad}" if bad != "operator" else bad, str(exc)) from None

    sv = raw.get("solver", {})
    _check_keys("solver", sv)
    solver = SolverOptions(
        rtol=_get(sv, "solver", "rtol", 1e-10, float),
        max_newton=_get(sv, "solver", "max_newton", 50, int),
        max_picard=_get(sv, "solver", "max_picard", 200, int),
        delta_reg=_get(sv, "solver", "delta_reg", 1e-8, float),
    )
    study = StudyConfig(
        xi_magnitudes=_get(st, "study", "xi_magnitudes", StudyConfig.xi_magnitudes, tuple),
        xi_directions=_get(st, "study", "xi_directions", 16, int),
        sample_count=_get(st, "study", "sample_count", 2000, int),
        operator_samples=_get(st, "study", "operator_samples", 4000, int),
        seed=_get(st, "study", "seed", 0, int),
        theorem6_cell_m=_get(st, "study", "theorem6_cell_m", 16, int),
        min_resolution=_get(st, "study", "min_resolution", 8, int),
    )
    out = raw.get("output", {})
    _check_keys("output", out)
    formats = out.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ConfigError("output.formats", "must be a subset of ['csv', 'json']")
    output = OutputConfig(directory=str(out.get("directory", "out")), formats=tuple(formats))
    return RunConfig(spec=spec, grid=grid, solver=solver, macro_rtol=_get(sv, "solver", "macro_rtol", 1e-9, float),
                     directions=_get(sv, "solver", "directions", 128, int), study=study, output=output, raw=raw)


def load_config(path) -> RunConfig:
    try:
        raw = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"malformed TOML: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return build_config(raw)
