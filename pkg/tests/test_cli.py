import csv
import json
from pathlib import Path

import pytest

from secureabm.cli import ConfigError, main, resolve_config

DATA = Path(__file__).parent / "data"
SMALL = {"population": {"generate": {"n_agents": 60}}, "model": {"n_t": 12, "i0": 0.05}}


def run(tmp_path, command, config=None, *flags, name="out"):
    out = tmp_path / name
    argv = [command, "--out", str(out), *flags]
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv), out


def test_genpop_then_load(tmp_path):
    code, out = run(tmp_path, "genpop", SMALL, "--seed", "4")
    assert code == 0
    assert (out / "population" / "agents.jsonl").exists() and (out / "population" / "edges.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["command"] == "genpop"
    assert len(manifest["config_sha256"]) == 64 and "numpy" in manifest["versions"]
    cfg = {"population": {"load": str(out / "population")}, "model": {"n_t": 5}}
    code, sim = run(tmp_path, "simulate", cfg, name="sim")
    assert code == 0 and (sim / "simulation.csv").exists()


def test_simulate_outputs_and_reproducibility(tmp_path):
    code1, a = run(tmp_path, "simulate", SMALL, "--seed", "3", name="a")
    code2, b = run(tmp_path, "simulate", SMALL, "--seed", "3", name="b")
    assert code1 == code2 == 0
    for f in ("simulation.csv", "simulation.json", "simulation.svg"):
        assert (a / f).read_bytes() == (b / f).read_bytes() or f == "simulation.json"
    # timing metrics differ run to run; everything else in the JSON is deterministic
    ja, jb = json.loads((a / "simulation.json").read_text()), json.loads((b / "simulation.json").read_text())
    ja.pop("metrics"), jb.pop("metrics")
    assert ja == jb
    rows = list(csv.DictReader((a / "simulation.csv").open()))
    assert len(rows) == 12


def test_simulate_zero_initial_infection(tmp_path):
    cfg = {**SMALL, "model": {"n_t": 8, "i0": 0.0}}
    code, out = run(tmp_path, "simulate", cfg)
    assert code == 0
    rows = list(csv.DictReader((out / "simulation.csv").open()))
    assert all(r["new_infections"] == "0" and r["prevalence"] == "0" for r in rows)


def test_concurrent_backend_flag_gives_same_curves(tmp_path):
    _, a = run(tmp_path, "simulate", SMALL, "--seed", "2", name="a")
    _, b = run(tmp_path, "simulate", SMALL, "--seed", "2", "--backend", "concurrent", name="b")
    assert (a / "simulation.csv").read_text() == (b / "simulation.csv").read_text()


def test_sweep(tmp_path):
    cfg = {**SMALL, "model": {"n_t": 15, "i0": 0.05, "beta": 1.0},
           "experiment": {"sweep-compliance": {"alphas": [0.0, 0.5], "replicates": 3}}}
    code, out = run(tmp_path, "sweep-compliance", cfg)
    assert code == 0
    header = (out / "sweep.csv").read_text().splitlines()[0]
    assert header == "step,alpha_0.0,alpha_0.5"
    summary = json.loads((out / "sweep.json").read_text())
    assert len(summary["0.0"]["attack_rates"]) == 3
    assert (out / "sweep.svg").read_text().count("<polyline") == 2


def test_calibrate_writes_posterior(tmp_path):
    cfg = {**SMALL, "experiment": {"calibrate": {"epochs": 2, "n_mc": 2}}}
    code, out = run(tmp_path, "calibrate", cfg, "--seed", "1")
    assert code == 0
    post = json.loads((out / "posterior.json").read_text())
    assert "beta" in json.dumps(post)
    assert len((out / "trace.csv").read_text().splitlines()) == 3
    assert len(json.loads((out / "observed.json").read_text())["new_infections"]) == 12
    assert (out / "posterior.svg").exists()


def test_calibrate_from_observed_file(tmp_path):
    y = tmp_path / "y.json"
    y.write_text(json.dumps({"new_infections": [1] * 12}))
    cfg = {**SMALL, "experiment": {"calibrate": {"epochs": 1, "n_mc": 1, "y": str(y)}}}
    assert run(tmp_path, "calibrate", cfg)[0] == 0
    y.write_text(json.dumps([1, 2, 3]))
    assert run(tmp_path, "calibrate", cfg, name="bad")[0] == 2


def test_analyze(tmp_path):
    cfg = {**SMALL, "experiment": {"analyze": {
        "indicators": [[{"field": "age", "op": "range", "value": [20, 30]}], []]}}}
    code, out = run(tmp_path, "analyze", cfg)
    assert code == 0
    res = json.loads((out / "analysis.json").read_text())
    assert res["indicators"][1]["count"] == 60
    totals = [sum(json.loads((out / f"histogram_{d}.json").read_text())["counts"])
              for d in ("age", "ethnicity", "zip_sector")]
    assert len(set(totals)) == 1
    assert (out / "zip_sectors.csv").read_text().startswith("sector,count\n")
    assert "beta" in res["sensitivity"][0]["gradient"]


@pytest.mark.parametrize("cfg,path", [
    ({"populaton": {}}, "populaton"),
    ({"population": {"load": "/nonexistent"}}, "population.load"),
    ({"population": {"generate": {"n_agents": -1}}}, "population.generate"),
    ({"model": {"beta": -1}}, "model"),
    ({"mpc": {"modulus": 12}}, "mpc.modulus"),
    ({"mpc": {"scale": 0}}, "mpc.scale"),
    ({"experiment": {"simulate": {}, "analyze": {}}}, "experiment"),
    ({"experiment": {"analyze": {}}}, "experiment.analyze"),
])
def test_config_errors_carry_field_paths(cfg, path):
    with pytest.raises(ConfigError, match=f"^{path}"):
        resolve_config("simulate", cfg, {})


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", {"model": {"beta": -1}})
    assert code == 2
    assert "model:" in capsys.readouterr().err
    code, _ = run(tmp_path, "analyze", {"experiment": {"analyze": {"indicators": [[{"field": "x", "op": "eq",
                                                                                      "value": 1}]]}}})
    assert code == 2


def test_protocol_abort_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", SMALL, "--modulus", "1009", "--scale", "16")
    assert code == 3
    assert "protocol aborted" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = resolve_config("simulate", {"seed": 1, "mpc": {"scale": 256}}, {"seed": 9, "scale": 1024})
    assert cfg["seed"] == 9 and cfg["mpc"]["scale"] == 1024


def test_golden_simulation_svg(tmp_path):
    cfg = {"population": {"generate": {"n_agents": 40}}, "model": {"n_t": 10, "i0": 0.1, "beta": 1.2}}
    code, out = run(tmp_path, "simulate", cfg, "--seed", "7")
    assert code == 0
    assert (out / "simulation.svg").read_bytes() == (DATA / "golden_simulation.svg").read_bytes()
