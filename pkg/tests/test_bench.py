import math
import os

import pytest

from saddlekit.bench import (ConfigError, IterationTable, compare_tables, data_path, emit_table, load_config,
                             parse_config, read_table, run_experiment)
from saddlekit.bench.cli import main
from saddlekit.bench.runner import sweep_threads

STOKES_INI = """
[experiment]
problem = stokes
levels = 0
[parameters]
mu = 1e-2 N*s/m^2, 1 N*s/m^2
[stopping]
relative_reduction = 1e-6
max_iterations = 500
"""


def stokes_table(vals=(48, 48, 55, 60, 60)):
    cols = (1e-4, 1e-2, 1.0, 1e2, 1e4)
    return IterationTable("stokes", (1,), "mu", cols, cells={(1, None, c): v for c, v in zip(cols, vals)},
                          units={"mu": "N*s/m^2"})


def test_parse_config():
    cfg = parse_config(STOKES_INI)
    assert cfg.problem == "stokes" and cfg.levels == (0,) and cfg.columns == "mu"
    assert [q.value for q in cfg.grids["mu"]] == [1e-2, 1.0]
    assert cfg.cells() == [(0, None, 1e-2), (0, None, 1.0)]
    # trailing unit applies to the whole grid
    cfg = parse_config(STOKES_INI.replace("1e-2 N*s/m^2, 1", "1e-2, 1"))
    assert len(cfg.grids["mu"]) == 2


@pytest.mark.parametrize("old,new,msg", [
    ("1e-2 N*s/m^2, 1 N*s/m^2", "", "empty"),
    ("1 N*s/m^2", "1 N/m^2", "does not match"),
    ("1e-2 N*s/m^2, 1 N*s/m^2", "1e-2, 1", "missing unit"),
    ("problem = stokes", "problem = heat", "unknown problem"),
    ("levels = 0", "levels = a", "levels"),
    ("1e-2 N*s/m^2, 1 N*s/m^2", "-1 N*s/m^2", "positive"),
    ("mu =", "nu =", "no parameter"),
    ("max_iterations = 500", "max_iterations = 0", "stopping"),
])
def test_config_errors(old, new, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(STOKES_INI.replace(old, new))


def test_config_missing_and_stray_parameters():
    base = """
[experiment]
problem = poisson_ocp
levels = 1
columns = alpha
[parameters]
alpha = 1e-4, 1 obj*m^3/W^2
beta = 1 obj/(K^2*m^3)
"""
    with pytest.raises(ConfigError, match="missing parameters: kappa"):
        parse_config(base)
    with pytest.raises(ConfigError, match="neither rows nor columns"):
        parse_config(base + "kappa = 1, 2 W/(m*K)\n")
    with pytest.raises(ConfigError, match="unknown solver option"):
        parse_config(base + "kappa = 1 W/(m*K)\n[solver]\ninner_rel_tol = 1e-8\n")
    cfg = parse_config(base + "kappa = 1 W/(m*K)\n[solver]\ntheta = 0.5\n")
    assert cfg.options == {"theta": 0.5} and set(cfg.fixed) == {"beta", "kappa"}


def test_emit_table_stokes_row():
    md = emit_table(stokes_table(), "markdown")
    row = [ln for ln in md.splitlines() if ln.startswith("| 1 ")][0]
    assert row.split("|")[2:-1] == [" 48 ", " 48 ", " 55 ", " 60 ", " 60 "]
    assert emit_table(stokes_table(), "csv") == emit_table(stokes_table(), "csv")
    with pytest.raises(ValueError):
        emit_table(stokes_table(), "html")


def test_single_cell_table_round_trip():
    t = IterationTable("stokes", (2,), "mu", (1.0,), cells={(2, None, 1.0): None})
    back = read_table(emit_table(t))
    assert back.cells == {(2, None, 1.0): None} and back.shape == (1, 1, 1)
    assert "FAIL" in emit_table(t, "markdown")


def test_csv_round_trip_two_parameter():
    ref = read_table(data_path("reference", "elasticity.csv").read_text())
    again = read_table(emit_table(ref))
    assert again.cells == ref.cells and again.rows == "lambda" and again.columns == "mu"
    assert again.shape == (3, 5, 5)
    assert ref[(3, 1e-4, 1e-4)] == 16


def test_compare():
    ref = stokes_table()
    rep = compare_tables(stokes_table((50, 48, 55, 60, 60)), ref, 0.25)
    assert rep.passed and math.isclose(rep.max_deviation, 2 / 48)
    assert not compare_tables(stokes_table((50, 48, 55, 60, 60)), ref, 0.0).passed
    assert compare_tables(ref, ref, 0.0).passed
    rep = compare_tables(stokes_table((None, 48, 55, 60, 60)), ref, 0.25)
    assert not rep.passed and len(rep.failures()) == 1
    assert compare_tables(stokes_table((61, 48, 55, 60, 60)), ref, 0.25).failures()[0].deviation > 0.25
    short = IterationTable("stokes", (1,), "mu", (1.0,), cells={(1, None, 1.0): 50})
    with pytest.raises(ValueError):
        compare_tables(short, ref, 0.25)
    with pytest.raises(ValueError):
        compare_tables(ref, ref, -1)


def test_reference_data_levels():
    stokes = read_table(data_path("reference", "stokes.csv").read_text())
    assert stokes.row(2) == [40, 40, 43, 46, 46]
    assert any("provenance" in n for n in stokes.notes)
    assert stokes.restrict_levels([1]).levels == (1,)
    for name in ("poisson_ocp_beta1.csv", "poisson_ocp_beta1e-4.csv", "stokes_ocp_beta1.csv"):
        assert read_table(data_path("reference", name).read_text()).values()
    for name in ("stokes", "elasticity", "poisson_ocp_beta1", "poisson_ocp_beta1e-4", "stokes_ocp_beta1"):
        cfg = load_config(data_path("configs", f"{name}.ini"))
        ref = read_table(data_path("reference", f"{name}.csv").read_text())
        assert set(cfg.levels) <= set(ref.levels)
        assert len(cfg.grids[cfg.columns]) == len(ref.col_values)


def test_sweep_is_deterministic(tmp_path):
    cfg = parse_config(STOKES_INI)
    a = run_experiment(cfg.with_output(tmp_path / "a"))
    b = run_experiment(cfg.with_output(tmp_path / "b"))
    assert a.all_consistent and a.table.cells == b.table.cells
    for f in ("table.csv", "runs.csv", "table.md"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    hist = sorted((tmp_path / "a" / "histories").iterdir())
    assert len(hist) == 2
    assert hist[0].read_text().splitlines()[0] == "iter,r1_norm,r2_norm,total_norm"


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SADDLEKIT_THREADS", "3")
    assert sweep_threads(10) == 3 and sweep_threads(2) == 2
    monkeypatch.setenv("SADDLEKIT_THREADS", "zero")
    with pytest.raises(ConfigError):
        sweep_threads(4)
    monkeypatch.setenv("SADDLEKIT_THREADS", "0")
    with pytest.raises(ConfigError):
        sweep_threads(4)
    monkeypatch.delenv("SADDLEKIT_THREADS")
    assert sweep_threads(1) == 1


def test_threaded_sweep_matches_serial(tmp_path, monkeypatch):
    cfg = parse_config(STOKES_INI)
    monkeypatch.setenv("SADDLEKIT_THREADS", "1")
    serial = run_experiment(cfg, write=False)
    monkeypatch.setenv("SADDLEKIT_THREADS", "2")
    threaded = run_experiment(cfg, write=False)
    assert emit_table(serial.table) == emit_table(threaded.table)


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    ini = tmp_path / "s.ini"
    ini.write_text(STOKES_INI)
    ref = tmp_path / "ref.csv"
    out = tmp_path / "out"
    assert main(["run", str(ini), "--out", str(out), "--format", "csv"]) == 0
    produced = read_table(capsys.readouterr().out)
    assert (out / "table.csv").exists() and (out / "consistency.txt").exists()
    ref.write_text(emit_table(produced))
    assert main(["run", str(ini), "--out", str(out), "--compare", str(ref), "--tol", "0"]) == 0
    far = IterationTable("stokes", (0,), "mu", produced.col_values,
                         cells={k: 3 * v for k, v in produced.cells.items()})
    ref.write_text(emit_table(far))
    assert main(["run", str(ini), "--out", str(out), "--compare", str(ref)]) == 1
    assert "OUT" in capsys.readouterr().out
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text(STOKES_INI.replace("N*s/m^2", "N/m^2"))
    assert main(["run", str(bad)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["run", str(ini), "--levels", "x"])
    assert e.value.code == 2
    assert main(["run", str(ini), "--out", str(out), "--compare", str(data_path("reference", "stokes.csv"))]) == 2
    monkeypatch.setenv("SADDLEKIT_THREADS", "-1")
    assert main(["run", str(ini), "--out", str(out)]) == 2


def test_elasticity_full_grid(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = load_config(data_path("configs", "elasticity.ini")).with_levels([0])
    res = run_experiment(cfg)
    assert len(res.runs) == 25 and all(r.converged for r in res.runs)
    assert res.all_consistent
    assert (tmp_path / "results" / "elasticity" / "table.csv").exists()
    assert len(list((tmp_path / "results" / "elasticity" / "histories").iterdir())) == 25
