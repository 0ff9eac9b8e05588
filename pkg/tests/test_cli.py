import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwave.cli import main, run
from pilotwave.scenario import PRESETS, ScenarioError, dump_scenario, load_scenario, parse_scenario, preset


def _write(tmp_path, doc, name="scenario.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def _manifest(root):
    return json.loads((root / "manifest.json").read_text())["artifacts"]


# -- parsing ----------------------------------------------------------------------------
def test_minimal_scenario_gets_defaults(tmp_path):
    cfg = parse_scenario(_write(tmp_path, {"model": "bell-lattice"}))
    assert cfg.hbar == 1.0 and cfg.dt == 1e-3
    assert cfg.mode == "trajectory" and cfg.M == 1
    assert cfg.params.sites == 2


def test_errors_are_aggregated(tmp_path):
    doc = {"model": "btqft-emission", "T": -1.0, "params": {"w": -2.0, "n_max": 0}}
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_write(tmp_path, doc))
    msgs = err.value.errors
    assert len(msgs) >= 3
    assert any(m.startswith("params.w") for m in msgs)
    assert any(m.startswith("params.n_max") for m in msgs)
    assert any(m.startswith("T") for m in msgs)


def test_unknown_and_missing_keys(tmp_path):
    with pytest.raises(ScenarioError, match="colour"):
        parse_scenario(_write(tmp_path, {"model": "bell-lattice", "colour": "red"}))
    with pytest.raises(ScenarioError, match="model"):
        parse_scenario(_write(tmp_path, {"T": 1.0}))
    with pytest.raises(ScenarioError):
        load_scenario({"model": "something-else"})


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model: [unclosed\n")
    with pytest.raises(ScenarioError, match="YAML"):
        parse_scenario(p)


def test_mode_restrictions():
    with pytest.raises(ScenarioError):
        load_scenario({"model": "bell-lattice", "mode": "sweep"})
    with pytest.raises(ScenarioError):
        load_scenario({"model": "nikolic-decay", "mode": "ensemble"})
    with pytest.raises(ScenarioError):
        load_scenario({"model": "bell-lattice", "mode": "verify", "M": 10})


def test_every_preset_validates():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.name == name
        assert load_scenario(yaml.safe_load(dump_scenario(cfg))) == cfg


@settings(max_examples=40, deadline=None)
@given(
    T=st.floats(0.1, 10.0),
    frac=st.floats(1e-4, 1.0),
    M=st.integers(1, 10**5),
    seed=st.integers(0, 2**31),
    hop=st.floats(-5, 5),
    phase=st.floats(-3.2, 3.2),
    n_max=st.integers(1, 4),
    model=st.sampled_from(["bell-lattice", "btqft-emission", "nikolic-decay"]),
)
def test_scenario_round_trip(T, frac, M, seed, hop, phase, n_max, model):
    doc = {"model": model, "T": T, "dt": T * frac, "M": M, "seed": seed}
    if model == "bell-lattice":
        doc["params"] = {"hop": hop, "hop_phase": phase, "n_max": n_max}
    elif model == "btqft-emission":
        doc["params"] = {"g": hop, "coupling_phase": phase, "n_max": n_max}
    else:
        doc["params"] = {"mu1": hop, "psi1": {"phase": phase}}
    cfg = load_scenario(doc)
    again = load_scenario(yaml.safe_load(dump_scenario(cfg)))
    assert again == cfg
    assert dump_scenario(again) == dump_scenario(cfg)


# -- running -----------------------------------------------------------------------------
def test_verify_preset_exits_zero(tmp_path, capsys):
    assert main(["run", "--preset", "bell-lattice", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report_equivariance.json").read_text())
    assert rep["status"] == "PASS"
    ctrl = json.loads((tmp_path / "report_time_reversal_control.json").read_text())
    assert ctrl["status"] == "FAIL"
    names = {a["path"] for a in _manifest(tmp_path)}
    assert {"report_equivariance.json", "report_master_equation.json", "scenario.yaml"} <= names
    assert "verify: PASS" in capsys.readouterr().out


def test_single_trajectory_writes_csv_and_manifest(tmp_path):
    doc = {"model": "btqft-emission", "T": 0.5, "dt": 1e-2, "params": {"orbitals": [{"centre": 8.0, "width": 3.0}]}}
    assert main(["run", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    header = (out / "trajectory_00000.csv").read_text().splitlines()[0]
    assert header.startswith("t,event_type,config_id,destination_id")
    names = {a["path"] for a in _manifest(out)}
    assert "trajectory_00000.csv" in names and "summary.json" in names
    for a in _manifest(out):
        assert len(a["sha256"]) == 64


def test_same_seed_gives_identical_bytes(tmp_path):
    over = _write(tmp_path, {"M": 300, "T": 1.0, "dt": 1e-2, "checkpoints": [1.0]}, "over.yaml")
    args = ["run", str(over), "--preset", "picture-a", "--seed", "11"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "events.csv").read_bytes() == (tmp_path / "b" / "events.csv").read_bytes()
    assert _manifest(tmp_path / "a") == _manifest(tmp_path / "b")


def test_worker_count_does_not_change_artifacts(tmp_path):
    cfg = preset("bell-lattice", {"mode": "ensemble", "M": 9000, "dt": 1e-2})
    assert run(cfg, tmp_path / "w1", workers=1) == 0
    assert run(cfg, tmp_path / "w2", workers=2) == 0
    assert _manifest(tmp_path / "w1") == _manifest(tmp_path / "w2")


def test_error_leaves_partial_artifacts(tmp_path, capsys):
    # a zero initial state cannot be normalized: the run fails after writing the scenario
    cfg = load_scenario({"model": "bell-lattice", "params": {"initial": [{"occupation": [0, 0], "amplitude": [0.0, 0.0]}]}})
    assert run(cfg, tmp_path) == 2
    assert (tmp_path / "scenario.yaml.partial").exists()
    assert not (tmp_path / "scenario.yaml").exists()
    assert not (tmp_path / "manifest.json").exists()
    assert "error" in capsys.readouterr().err


def test_invalid_scenario_exit_code(tmp_path, capsys):
    p = _write(tmp_path, {"model": "bell-lattice", "params": {"sites": 1}})
    assert main(["run", str(p)]) == 2
    assert "params.sites" in capsys.readouterr().err


def test_nikolic_sweep_and_verify(tmp_path):
    assert main(["run", "--preset", "dead-particle-sweep", "--out-dir", str(tmp_path / "s")]) == 0
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "separation,overlap,dead_speed,direct_speed"
    assert len(rows) == 5
    over = _write(tmp_path, {"mode": "verify"}, "v.yaml")
    assert main(["run", str(over), "--preset", "dead-particle-sweep", "--out-dir", str(tmp_path / "v")]) == 0
    rep = json.loads((tmp_path / "v" / "report_multitime.json").read_text())
    assert rep["status"] == "PASS"


def test_decay_box_logs_dominant_branch(tmp_path):
    assert main(["run", "--preset", "decay-box", "--out-dir", str(tmp_path)]) == 0
    head = (tmp_path / "path.csv").read_text().splitlines()[0]
    assert head == "s,X1_0,X1_1,X2_0,X2_1,X3_0,X3_1,Y,dominant_branch"


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("picture-a", "pair-creation", "decay-box", "dead-particle-sweep"):
        assert name in out


def test_run_needs_a_scenario(capsys):
    assert main(["run"]) == 2
