from __future__ import annotations

import json

import numpy as np
import pytest

from hjdesign import cli
from hjdesign.grid import GridSpec, read_csv, write_csv

BASE = """\
grid: {dim: 1, L: 2.0, M: 129}
hamiltonian: {family: quadratic, A: [2.0]}
T: 0.5
"""


def write(tmp_path, body, name="run.yaml"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def run(tmp_path, command, body, out="out"):
    return cli.main([command, write(tmp_path, body), "-o", str(tmp_path / out)])


def test_solve_writes_artifacts(tmp_path):
    assert run(tmp_path, "solve", BASE + "data: {u0: {fixture: abs-kink}}\n") == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "solve"
    assert "solution_000.csv" in manifest["artifacts"] or manifest["artifacts"]
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["T"] == 0.5
    assert "output_dir" not in resolved
    assert "wall_seconds" in json.loads((out / "run_info.json").read_text())


def test_missing_T_exits_2_with_field(tmp_path, capsys):
    body = "grid: {dim: 1, M: 65}\nhamiltonian: {family: quadratic, A: [2.0]}\n"
    assert run(tmp_path, "solve", body) == 2
    err = capsys.readouterr().err
    assert "T:" in err and "required" in err


def test_bad_field_exits_2_with_path(tmp_path, capsys):
    body = "grid: {dim: 3, M: 65}\nhamiltonian: {family: quadratic, A: [2.0]}\nT: 0.5\n"
    assert run(tmp_path, "solve", body) == 2
    assert "grid.dim" in capsys.readouterr().err


def test_unreadable_yaml_exits_2(tmp_path, capsys):
    assert run(tmp_path, "solve", "grid: [unclosed\n") == 2
    assert "invalid YAML" in capsys.readouterr().err


def test_inverse_design_needs_zero_C0(tmp_path, capsys):
    body = ("grid: {dim: 1, L: 2.0, M: 65}\nhamiltonian: {family: shifted, potential: cosine}\n"
            "T: 0.5\n")
    assert run(tmp_path, "invert", body) == 3
    assert "C0" in capsys.readouterr().err


def test_cone_of_unreachable_target_exits_3(tmp_path):
    assert run(tmp_path, "cone", BASE + "data: {uT: {fixture: abs-kink}}\n") == 3


def test_invert_on_reachable_target(tmp_path):
    assert run(tmp_path, "invert", BASE + "data: {uT: {fixture: neg-abs}}\n") == 0
    log = (tmp_path / "out" / "descent_log.jsonl").read_text().splitlines()
    assert 1 <= len(log) <= 2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["iterations"] <= 1


def test_gateaux_table(tmp_path):
    assert run(tmp_path, "gateaux", BASE + "data: {u0: {fixture: abs-kink}, w: {fixture: gaussian-bump}}\n") == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["monotone"]
    assert report["invalid_nodes"] == 0
    rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
    assert len(rows) == 6
    distances = [float(r.split(",")[1]) for r in rows[1:]]
    assert distances[-1] <= 3 * report["floor"]


def test_csv_input(tmp_path):
    spec = GridSpec(1, 2.0, 129)
    f = spec.sample(lambda p: np.abs(p[..., 0]))
    write_csv(tmp_path / "u0.csv", f)
    assert run(tmp_path, "solve", BASE + "data: {u0: {csv: u0.csv}}\n") == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["inputs"]["data.u0"]["path"] == "u0.csv"


def test_csv_on_wrong_grid_exits_2(tmp_path):
    write_csv(tmp_path / "u0.csv", GridSpec(1, 2.0, 65).sample(lambda p: p[..., 0]))
    assert run(tmp_path, "solve", BASE + "data: {u0: {csv: u0.csv}}\n") == 2


def test_project_matches_library(tmp_path):
    assert run(tmp_path, "project", BASE) == 0
    phi, _ = read_csv(tmp_path / "out" / "projection.csv")
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["projection_reachable"]
    assert not report["target_reachable"]
    assert phi.spec == GridSpec(1, 2.0, 129)


def test_runs_are_deterministic(tmp_path):
    body = BASE + "data: {u0: {fixture: abs-kink}, uT: {fixture: two-bump}}\n"
    assert run(tmp_path, "grad", body, "a") == 0
    assert run(tmp_path, "grad", body, "b") == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b


@pytest.mark.parametrize("command", ["backward", "envelope", "transport", "check"])
def test_other_subcommands_succeed(tmp_path, command):
    assert run(tmp_path, command, BASE) == 0
    assert (tmp_path / "out" / "report.json").exists()
