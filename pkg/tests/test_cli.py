import json
import subprocess
import sys
from pathlib import Path

import pytest

from monohom.cli import main
from monohom.config import ConfigError, build_config, load_config

ROOT = Path(__file__).resolve().parents[1]

SMALL = """
[operator]
p = {p}
[operator.kernel]
kind = "laminate"
values = {values}
[grid]
n = 1
cell_m = 64
macro_M = 64
eps_list = [0.25, 0.125]
[study]
sample_count = 100
operator_samples = 200
xi_directions = 4
seed = 3
"""


@pytest.fixture
def small(tmp_path):
    def make(p=2.0, values="[1.0, 4.0]", extra=""):
        path = tmp_path / f"cfg_{p}_{abs(hash(values + extra))}.toml"
        path.write_text(SMALL.format(p=p, values=values) + extra)
        return path
    return make


def _json(path):
    return json.loads(Path(path).read_text())


def test_shipped_configs_parse():
    for path in sorted((ROOT / "configs").glob("*.toml")):
        cfg = load_config(path)
        assert cfg.spec.n == 2 and len(cfg.config_hash) == 16


@pytest.mark.parametrize("raw,key", [
    ({"operator": {"p": 2.0, "colour": 1}}, "operator.colour"),
    ({"operator": {"p": 2.0}, "grid": {"n": 3}}, "grid.n"),
    ({"operator": {"p": 2.0}, "solvers": {}}, "solvers"),
    ({"operator": {"p": "two"}}, "operator.p"),
    ({"operator": {"p": 2.0, "kernel": {"kind": "plaid"}}}, "operator.kernel"),
    ({"operator": {"p": 2.0}, "output": {"formats": ["xlsx"]}}, "output.formats"),
    ({"grid": {"n": 1}}, "operator"),
])
def test_config_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError) as info:
        build_config(raw)
    assert info.value.key == key


def test_solve_cell_laminate(small, tmp_path):
    out = tmp_path / "a" / "b"  # missing directories are created
    assert main(["solve-cell", "--config", str(small()), "--out", str(out)]) == 0
    flux = _json(out / "cell_flux.json")
    assert flux["b"][0] == pytest.approx(1.6, abs=1e-8)
    assert {"config_hash", "seed", "version"} <= set(flux)
    assert (out / "cell_field.csv").read_text().startswith("# config_hash=")


def test_solve_cell_zero_xi(small, tmp_path):
    assert main(["solve-cell", "--config", str(small(p=3.0)), "--xi", "0", "--out", str(tmp_path)]) == 0
    assert _json(tmp_path / "cell_flux.json")["b"] == [0.0]
    lines = (tmp_path / "cell_field.csv").read_text().splitlines()[2:]
    assert all(float(line.split(",")[1]) == 0.0 for line in lines)


def test_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[operator]\np = 2.0\nbogus = 1\n")
    assert main(["solve-cell", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "operator.bogus" in capsys.readouterr().err
    bad.write_text("[operator\n")
    assert main(["solve-cell", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_bad_cli_vector_exit_2(small, tmp_path, capsys):
    assert main(["solve-cell", "--config", str(small()), "--xi", "1,2", "--out", str(tmp_path)]) == 2
    assert "--xi" in capsys.readouterr().err


def test_unwritable_output_exit_3(small, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve-cell", "--config", str(small()), "--out", str(blocker / "sub")]) == 3


def test_tabulate_b(small, tmp_path):
    assert main(["tabulate-b", "--config", str(small()), "--out", str(tmp_path), "--jobs", "2"]) == 0
    lines = (tmp_path / "b_table.csv").read_text().splitlines()
    assert lines[1] == "anchor_id,xi1,b1,iterations,residual"
    for line in lines[2:]:
        _, xi, b, _, _ = line.split(",")
        assert float(b) == pytest.approx(1.6 * float(xi), abs=1e-9)
    cache = _json(tmp_path / "b_cache.json")
    assert cache["tag"].startswith(load_config(small()).spec.spec_hash())


def test_solve_eps_and_hom(small, tmp_path):
    cfg = small()
    assert main(["solve-eps", "--config", str(cfg), "--out", str(tmp_path), "--eps", "0.25"]) == 0
    assert main(["solve-hom", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for stem in ("u_eps", "u_hom"):
        meta = _json(tmp_path / f"{stem}.json")
        assert meta["diagnostics"]["converged"]
        assert (tmp_path / f"{stem}.csv").read_text().splitlines()[1] == "x1,u"
    assert "solve_eps_seconds" in _json(tmp_path / "timing.json") or "solve_hom_seconds" in _json(
        tmp_path / "timing.json")


def test_solve_eps_bad_eps_exit_2(small, tmp_path):
    assert main(["solve-eps", "--config", str(small()), "--out", str(tmp_path), "--eps", "0.3"]) == 2


def test_constant_kappa_corrector_study(small, tmp_path):
    main(["corrector-study", "--config", str(small(values="[2.0]")), "--out", str(tmp_path), "--jobs", "1"])
    lines = (tmp_path / "corrector_study.csv").read_text().splitlines()
    assert lines[1] == "eps,err_corrector,err_plain,ratio,boundary_layer_measure,err_Mh"
    for line in lines[2:]:
        vals = [float(v) for v in line.split(",")]
        assert vals[1] == pytest.approx(vals[5], abs=1e-8)


def test_verify_structure_passes(small, tmp_path):
    assert main(["verify-structure", "--config", str(small(p=3.0)), "--out", str(tmp_path)]) == 0
    rep = _json(tmp_path / "verify_structure.json")
    assert rep["seed"] == 3 and rep["rows"] == []
    assert all(c["pass"] for c in rep["checks"])


def test_seed_override(small, tmp_path):
    assert main(["verify-structure", "--config", str(small(p=3.0)), "--out", str(tmp_path), "--seed", "9"]) == 0
    assert _json(tmp_path / "verify_structure.json")["seed"] == 9


def test_formats_respected(small, tmp_path):
    cfg = small(extra='[output]\nformats = ["json"]\n')
    assert main(["solve-cell", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "cell_field.csv").exists() and (tmp_path / "cell_flux.json").exists()


def test_console_entry_point(small, tmp_path):
    res = subprocess.run([sys.executable, "-m", "monohom.cli", "solve-cell", "--config", str(small()),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
