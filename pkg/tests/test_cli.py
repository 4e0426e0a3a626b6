import csv
import json

import numpy as np
import pytest

from weylkit.cli import build_alpha, build_potential, build_z_grid, main, ConfigError


def write_cfg(tmp_path, cfg, name="run.json"):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, command, cfg, *extra):
    out = tmp_path / "out"
    code = main([command, "--config", write_cfg(tmp_path, cfg), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- config builders ----------------------------------------------------------------

def test_builtin_potentials():
    assert build_potential({"builtin": "free", "n": 2}).dim == 2
    V = build_potential({"builtin": "constant", "n": 2})
    assert np.allclose(V.cells[0], np.diag([1.0, 2.0]))
    B = build_potential({"builtin": "barrier", "height": 3.0, "width": 0.5})
    assert B.value_at(0.1)[0, 0] == pytest.approx(3.0) and B.value_at(0.8)[0, 0] == 0.0
    R1 = build_potential({"builtin": "random", "n": 2}, seed=3)
    R2 = build_potential({"builtin": "random", "n": 2}, seed=3)
    assert np.array_equal(R1.cells, R2.cells)


@pytest.mark.parametrize("spec", [{"builtin": "nope"}, {"builtin": "free", "n": 0},
                                  {"builtin": "barrier", "width": -1}, {"builtin": "free", "n": "x"}])
def test_bad_potentials(spec):
    with pytest.raises(ConfigError):
        build_potential(spec)


def test_alpha_and_grid():
    assert np.allclose(build_alpha(0.5, 2), 0.5 * np.eye(2))
    with pytest.raises(ConfigError):
        build_alpha([[1, 0, 0]], 2)
    assert build_z_grid([[0, 1], 2]) == [1j, 2]
    g = build_z_grid({"rect": {"re": [-1, 1, 3], "im": [1, 2, 2]}})
    assert len(g) == 6 and g[0] == -1 + 1j
    for bad in ([], None, {"rect": {"re": [0]}}, {"other": 1}):
        with pytest.raises(ConfigError):
            build_z_grid(bad)


# -- subcommands -------------------------------------------------------------------

def test_m_half_free(tmp_path):
    code, out = run(tmp_path, "m-half", {"problem": "free", "z": [[0, 1], [1, 1]]})
    assert code == 0
    rows = read_csv(out / "m_half.csv")
    assert list(rows[0]) == ["re_z", "im_z", "block_row", "block_col", "re_m", "im_m",
                             "cauchy_gap", "disk_diameter"]
    assert len(rows) == 2
    m = complex(float(rows[0]["re_m"]), float(rows[0]["im_m"]))
    assert m == pytest.approx((-1 + 1j) / np.sqrt(2), abs=1e-8)
    assert len(json.loads((out / "m_half.json").read_text())["results"]) == 2


def test_m_half_left_side(tmp_path):
    code, out = run(tmp_path, "m-half", {"problem": "free", "side": "-", "z": [[0, 1]]})
    assert code == 0
    row, = read_csv(out / "m_half.csv")
    assert float(row["im_m"]) < 0


def test_m_full_row_count(tmp_path):
    code, out = run(tmp_path, "m-full", {"problem": {"builtin": "constant", "n": 2},
                                         "z": [[0, 1], [1, 1], [0, 2]]})
    assert code == 0
    assert len(read_csv(out / "m_full.csv")) == 3 * 16
    assert json.loads((out / "m_full.json").read_text())["M"][0]["n"] == 2


@pytest.mark.parametrize("mode", ["half+", "half-", "full"])
def test_m_donoghue_forced_residual(tmp_path, mode):
    code, out = run(tmp_path, "m-donoghue", {"problem": "barrier", "mode": mode, "z": [[1, 1]]})
    assert code == 0
    data = json.loads((out / "m_donoghue.json").read_text())
    assert data["forced_residual"] <= 1e-8
    assert data["z"][0] == [0.0, 1.0]  # z = i is always evaluated


def test_m_donoghue_abstract(tmp_path):
    cfg = {"mode": "abstract", "abstract": {"A": [1, 2], "N": [0.6, 0.8]}, "z": [[0, 2]]}
    code, out = run(tmp_path, "m-donoghue", cfg)
    assert code == 0
    rows = read_csv(out / "m_donoghue.csv")
    z = 2j
    ref = 0.36 * (z + 1) / (1 - z) + 0.64 * (2 * z + 1) / (2 - z)
    assert complex(float(rows[1]["re_m"]), float(rows[1]["im_m"])) == pytest.approx(ref, abs=1e-14)


def test_measure_function(tmp_path):
    cfg = {"kind": "function", "function": "free_sqrt", "intervals": [[0, 1], [-2, -1]]}
    code, out = run(tmp_path, "measure", cfg)
    assert code == 0
    rows = read_csv(out / "measure.csv")
    assert float(rows[0]["re_mass"]) == pytest.approx(2 / (3 * np.pi), abs=1e-3)
    assert abs(float(rows[1]["re_mass"])) <= 1e-6


def test_measure_abstract(tmp_path):
    cfg = {"kind": "abstract", "abstract": {"A": [1, 2], "N": [0.6, 0.8]}}
    code, out = run(tmp_path, "measure", cfg)
    assert code == 0
    data = json.loads((out / "measure.json").read_text())
    assert data["normalization_residual"] <= 1e-12
    assert len(data["measure"]["atoms"]) == 2


def test_oracle_poles(tmp_path):
    code, out = run(tmp_path, "oracle", {"oracle": "poles", "problem": "free", "h": 0.01,
                                         "lam_max": 4.0})
    assert code == 0
    assert json.loads((out / "oracle_poles.json").read_text())["passed"]


def test_oracle_block(tmp_path):
    code, out = run(tmp_path, "oracle", {"problem": "free", "X": 10, "h": 0.01, "z": [[0, 2]]})
    assert code == 0
    assert len(read_csv(out / "oracle.csv")) == 4


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("WEYLKIT_THREADS", "3")
    cfg = {"problem": "free", "z": {"rect": {"re": [-1, 1, 3], "im": [1, 2, 2]}}}
    code, out = run(tmp_path, "m-half", cfg)
    assert code == 0
    serial_code, _ = run(tmp_path / "s", "m-half", cfg, "--threads", "1")
    assert serial_code == 0
    assert (out / "m_half.csv").read_bytes() == (tmp_path / "s" / "out" / "m_half.csv").read_bytes()


# -- check and exit codes --------------------------------------------------------------

def test_check_free_scalar_passes(tmp_path):
    code, out = run(tmp_path, "check", {"problem": "free"})
    assert code == 0
    report = json.loads((out / "check.json").read_text())
    assert {r["suite"] for r in report} >= {"wronskian", "herglotz", "forced", "t_algebra",
                                            "block_M", "lft", "donoghue"}
    assert all(r["pass"] for r in report)


def test_check_broken_tolerance_exits_3(tmp_path):
    code, out = run(tmp_path, "check", {"problem": "free", "tolerance_override": 1e-30})
    assert code == 3
    assert not all(r["pass"] for r in json.loads((out / "check.json").read_text()))


def test_check_seeded_random_is_deterministic(tmp_path):
    cfg = {"problem": {"builtin": "random", "n": 3}}
    code_a, out_a = run(tmp_path / "a", "check", cfg, "--seed", "11")
    code_b, out_b = run(tmp_path / "b", "check", cfg, "--seed", "11")
    assert code_a == code_b == 0
    assert (out_a / "check.json").read_bytes() == (out_b / "check.json").read_bytes()


def test_config_errors_exit_1(tmp_path, capsys):
    code, _ = run(tmp_path, "m-half", {"problem": "free"})  # no z grid
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid-input"
    assert run(tmp_path, "m-half", {"problem": "free", "z": [], "tol": 1e-8})[0] == 1
    assert run(tmp_path, "m-half", {"problem": "free", "z": [[0, 1]], "tol": -1})[0] == 1
    assert main(["m-half", "--config", str(tmp_path / "missing.json")]) == 1


def test_resolution_error_exits_2(tmp_path):
    code, _ = run(tmp_path, "oracle", {"problem": "free", "X": 10, "h": 0.5, "z": [[0, 2]]})
    assert code == 2
