import json
import os

import pytest

from wgmps import acceptance
from wgmps.cli import CONFIG_SCHEMA, PRESETS, ConfigError, load_config, main, preset_runs, run_all
from wgmps.model import StepGate, build_step_gate
from wgmps.mps import TruncationPolicy, TruncationWarning
from wgmps.observables import csv_columns

SMALL = {"name": "small", "params": {"tau": 0.1, "phi": 0.5}, "horizon": 0.4}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_preset_inventory():
    sizes = {name: len(preset_runs(name)) for name in PRESETS}
    assert sizes == {"fig2a": 1, "fig2b": 1, "fig2c": 1, "fig3": 5, "fig4": 4, "fig5": 4, "fig6": 8}
    taus = sorted({r.params.tau for r in preset_runs("fig3")})
    assert taus == [0.0, 0.375, 0.5, 0.895, 2.0]
    for r in preset_runs("fig3"):
        assert r.params.l == round(r.params.tau / r.params.dt)


def test_unknown_preset_and_keys(tmp_path, capsys):
    assert main(["run", "fig9"]) == 1
    bad = write_cfg(tmp_path, {**SMALL, "colour": "red"})
    assert main(["run", bad]) == 1
    assert "colour" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config({"params": {"tau": 0.1, "gamma": 1}})
    with pytest.raises(ConfigError):
        load_config({"preset": "fig2a", "runs": [SMALL]})


def test_mismatched_initial_rejected():
    with pytest.raises(ConfigError):
        load_config({"params": {"n_qubits": 4}, "initial": "ee"})


def test_run_writes_csv_and_sidecar(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write_cfg(tmp_path, SMALL), "--out", str(out)]) == 0
    header = (out / "small.csv").read_text().splitlines()[0].split(",")
    assert header == csv_columns(2)
    meta = json.loads((out / "small.json").read_text())
    for key in ("config", "gate_checksum", "truncation", "wall_time", "schema_version", "columns"):
        assert key in meta
    assert meta["config"]["params"]["tau"] == 0.1
    assert meta["truncation"]["max_cons_residual"] < 1e-9


def test_every_column_documented(tmp_path):
    cfg = {"name": "four", "params": {"n_qubits": 4, "tau": 0.04}, "initial": "C", "horizon": 0.1}
    out = tmp_path / "o"
    assert main(["run", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    meta = json.loads((out / "four.json").read_text())
    assert set(meta["columns"]) <= set(csv_columns(4))
    assert meta["schema_version"] == 1


def test_deterministic_output_identical(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["run", path, "--out", str(tmp_path / d), "--deterministic"]) == 0
    assert (tmp_path / "a" / "small.csv").read_bytes() == (tmp_path / "b" / "small.csv").read_bytes()


def test_oracle_check_and_dt_override(tmp_path):
    out = tmp_path / "o"
    code = main(["run", write_cfg(tmp_path, SMALL), "--out", str(out), "--oracle-check", "--dt", "0.01"])
    assert code == 0
    meta = json.loads((out / "small.json").read_text())
    assert meta["oracle"]["status"] == "pass"
    assert meta["config"]["params"]["dt"] == 0.01


def test_bad_dt_override_is_error(tmp_path):
    assert main(["run", write_cfg(tmp_path, SMALL), "--out", str(tmp_path / "o"), "--dt", "0.03"]) == 1


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", write_cfg(tmp_path, SMALL), "--out", str(blocker / "sub")]) == 1


def test_multi_run_config_parallel(tmp_path):
    cfg = {"params": {"phi": 0.2}, "horizon": 0.2, "runs": [{"name": "m"}, {"name": "d", "params": {"tau": 0.04}}]}
    label, runs, _ = load_config(cfg)
    assert [r.params.tau for r in runs] == [0.0, 0.04]
    assert all(r.params.phi == 0.2 for r in runs)
    res = run_all(runs, tmp_path, jobs=2)
    assert sorted(os.listdir(tmp_path)) == ["d.csv", "d.json", "m.csv", "m.json"]
    assert [r["name"] for r in res] == ["m", "d"]


def test_sweep(tmp_path):
    base = write_cfg(tmp_path, SMALL)
    out = tmp_path / "sw"
    assert main(["sweep", "--param", "tau", "--values", "0.04", "0.06", "--base", base, "--out", str(out)]) == 0
    assert {"tau0.04.csv", "tau0.06.csv"} <= set(os.listdir(out))


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == CONFIG_SCHEMA


def test_validate_subset(capsys):
    assert main(["validate", "--only", "0", "11"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2 and all(line.startswith("[PASS]") for line in out)


def corrupted(params):
    g = build_step_gate(params)
    m = g.matrix.copy()
    m[0, 0] *= 1.01
    return StepGate(m, g.roles, g.dims)


def test_corrupted_gate_fails_unitarity():
    res = acceptance.run_suite(only=[0], suite=acceptance.Suite(gate_factory=corrupted))
    assert not res[0].passed


def test_coarse_cutoff_fails_conservation():
    suite = acceptance.Suite(policy=TruncationPolicy(svd_cutoff=0.1), conservation_presets=("fig2b",))
    with pytest.warns(TruncationWarning):
        res = acceptance.run_suite(only=[2], suite=suite)
    assert not res[0].passed
    assert "truncation weight" in res[0].detail


_Suite = acceptance.Suite


def _bad_suite():
    return _Suite(gate_factory=corrupted)


def test_validate_exit_code_on_failure(monkeypatch):
    monkeypatch.setattr(acceptance, "Suite", _bad_suite)
    assert main(["validate", "--only", "0"]) == 2


