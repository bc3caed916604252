import csv
import json

import pytest

from fehc.cli import PRESETS, ConfigError, load_config, main, parse_config, sweep_values
from fehc.estimator import CSV_COLUMNS
from fehc.mesh import read_mesh


def write_config(tmp_path, **cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


BASE = {"problem": "dirichlet_square", "n_list": [4, 8], "S": [0.375, 0.625, 0.375, 0.625], "epsilon": 0.15}


@pytest.mark.parametrize(
    "change, key",
    [
        ({"n_list": []}, "n_list"),
        ({"n_list": [8, 4]}, "n_list"),
        ({"n_list": [4, 4.5]}, "n_list"),
        ({"epsilon": -0.1}, "epsilon"),
        ({"epsilon": "wide"}, "epsilon"),
        ({"S": [0.5, 1.5, 0.0, 0.5]}, "S"),
        ({"S": [0.6, 0.4, 0.0, 0.5]}, "S"),
        ({"problem": "circle"}, "problem"),
        ({"variant": "rt7"}, "variant"),
        ({"kappa_method": "guess"}, "kappa_method"),
        ({"epsilon_sweep": [0.3, 0.05, 0.025]}, "epsilon_sweep"),
        ({"colour": "red"}, "colour"),
        ({"refine": {"region": [0, 1, 0, 1]}}, "refine"),
        ({"refine": {"region": [0, 1, 0, 1], "levels": [1]}}, "refine.levels"),
        ({"subdomains": [{"label": "a", "S": [0, 2, 0, 1], "epsilon": 0.1}]}, "subdomains[0].S"),
        ({"plots": "yes"}, "plots"),
    ],
)
def test_config_errors_name_the_key(change, key):
    with pytest.raises(ConfigError) as info:
        parse_config({**BASE, **change})
    assert info.value.key == key
    assert f"'{key}'" in str(info.value)


def test_lshape_requires_even_resolution():
    with pytest.raises(ConfigError, match="n_list"):
        parse_config({**BASE, "problem": "lshape", "S": [-0.1, 0.1, -0.1, 0.1], "n_list": [4, 9]})


def test_missing_problem():
    with pytest.raises(ConfigError, match="'problem'"):
        parse_config({k: v for k, v in BASE.items() if k != "problem"})


def test_every_preset_parses():
    for name in PRESETS:
        cfg = load_config(None, name)
        assert cfg.name == name and cfg.n_list


def test_config_file_overrides_preset(tmp_path):
    cfg = load_config(write_config(tmp_path, n_list=[16]), "table1")
    assert cfg.n_list == [16] and cfg.epsilon == 0.15


def test_sweep_values_cover_range_inclusive():
    cfg = load_config(None, "table1")
    vals = sweep_values(cfg)
    assert vals[0] == 0.05 and vals[-1] == 0.3 and len(vals) == 11


def test_empty_n_list_exits_with_config_error(tmp_path, capsys):
    code = main(["estimate", "--config", write_config(tmp_path, **{**BASE, "n_list": []}), "--out", str(tmp_path)])
    assert code == 2
    assert "'n_list'" in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["kappa", "--config", str(bad)]) == 2
    assert main(["kappa", "--config", str(tmp_path / "absent.json")]) == 2
    assert "--config" in capsys.readouterr().err


def test_unknown_subcommand_prints_usage(capsys):
    with pytest.raises(SystemExit) as info:
        main(["tabulate"])
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("value", ["0", "-2", "many"])
def test_invalid_thread_count(tmp_path, monkeypatch, value):
    monkeypatch.setenv("FEHC_THREADS", value)
    assert main(["mesh", "--config", write_config(tmp_path, **BASE), "--out", str(tmp_path)]) == 2


def test_mesh_subcommand_round_trips_single_cell_square(tmp_path):
    cfg = write_config(tmp_path, **{**BASE, "n_list": [1], "name": "unit"})
    assert main(["mesh", "--config", cfg, "--out", str(tmp_path)]) == 0
    path = tmp_path / "unit_n1.mesh"
    mesh = read_mesh(path, domain="square")
    assert mesh.nv == 4 and mesh.nt == 2
    again = tmp_path / "again.mesh"
    from fehc.mesh import write_mesh

    write_mesh(mesh, again)
    assert again.read_bytes() == path.read_bytes()


def test_kappa_subcommand_n16(tmp_path, capsys):
    cfg = write_config(tmp_path, **{**BASE, "n_list": [16], "name": "k"})
    assert main(["kappa", "--config", cfg, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "k_kappa.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["kappa_h"]) == pytest.approx(0.030, rel=0.05)
    assert float(row["C_h"]) > float(row["kappa_h"])
    assert "kappa_h=" in capsys.readouterr().out


def _run_converge(out, cfg):
    assert main(["converge", "--config", cfg, "--out", str(out)]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_converge_outputs_are_deterministic(tmp_path):
    cfg = write_config(tmp_path, **{**BASE, "n_list": [4, 8, 16], "name": "det"})
    a = _run_converge(tmp_path / "a", cfg)
    b = _run_converge(tmp_path / "b", cfg)
    assert a == b
    assert {"det.csv", "det_full.csv", "det_orders.csv", "det_EhatL.svg"} <= set(a)
    header = a["det.csv"].decode().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS) == "h,kappa_h,C_h,E_L,E1,E2,EhatL,EhatG,beta,beta_hat"
    orders = a["det_orders.csv"].decode().splitlines()
    assert orders[-1].startswith("fit,")
    assert len(orders) == 1 + 3 + 1


def test_threaded_rows_match_serial(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, **{**BASE, "n_list": [4, 8], "plots": False, "name": "thr"})
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setenv("FEHC_THREADS", "2")
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path / "pool")]) == 0
    assert (tmp_path / "serial" / "thr.csv").read_bytes() == (tmp_path / "pool" / "thr.csv").read_bytes()


def test_sweep_subcommand_writes_curve(tmp_path):
    cfg = write_config(tmp_path, **{**BASE, "n_list": [8], "epsilon_sweep": [0.1, 0.2, 0.05], "name": "sw"})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "sw_sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["epsilon"]) for r in rows] == [0.1, 0.15, 0.2]
    assert all(float(r["E_hat_L"]) >= float(r["E_L"]) for r in rows)
    assert (tmp_path / "sw_sweep_EhatL.svg").exists()


def test_subdomains_get_their_own_csv(tmp_path):
    cfg = write_config(tmp_path, problem="lshape", n_list=[4, 8], S=[-0.125, 0.125, -0.125, 0.125],
                       epsilon=0.375, plots=False, name="ls",
                       subdomains=[{"label": "Sprime", "S": [0.25, 0.5, 0.25, 0.5], "epsilon": 0.25}])
    assert main(["estimate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "ls.csv").exists() and (tmp_path / "ls_Sprime.csv").exists()
