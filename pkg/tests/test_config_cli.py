import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rotorlattice.cli import main
from rotorlattice.config import ConfigError, defaults, from_mapping, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_ini(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_all_shipped_configs_parse():
    for ini in sorted(CONFIGS.glob("*.ini")):
        cfg = load_config(ini, env={})
        cfg.build_spec()
        cfg.sde_run()


def test_unknown_key_and_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write_ini(tmp_path / "a.ini", "[model]\nepsilon = 0.1\n"), env={})
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(write_ini(tmp_path / "b.ini", "[solver]\ndt = 0.1\n"), env={})
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(write_ini(tmp_path / "c.ini", "[run]\nseed = abc\n"), env={})
    with pytest.raises(ConfigError):
        from_mapping({}, env={"RLAT_RUN_SEEDS": "3"})


def test_env_override(tmp_path):
    ini = write_ini(tmp_path / "a.ini", "[run]\nseed = 3\n[model]\neps = 0.1\n")
    cfg = load_config(ini, env={"RLAT_RUN_SEED": "11", "RLAT_MODEL_TEMPERATURES": "0.5,2"})
    assert cfg["run"]["seed"] == 11
    assert cfg["model"]["eps"] == 0.1
    spec = cfg.build_spec()
    assert np.allclose(spec.temperatures, [0.5, 2.0] * 4)


def test_defaults_and_bad_model(tmp_path):
    cfg = from_mapping({}, env={})
    assert cfg.to_dict() == defaults()
    with pytest.raises(ConfigError, match="potential"):
        cfg.with_values("model", potential="cubic").build_spec()
    with pytest.raises(ConfigError, match="model"):
        cfg.with_values("model", eps=2.0).build_spec()
    with pytest.raises(ConfigError, match="lattice"):
        cfg.with_values("lattice", defects=[[9]]).build_lattice()


def test_hash_tracks_values():
    cfg = from_mapping({}, env={})
    assert cfg.hash() == from_mapping({}, env={}).hash()
    assert cfg.hash() != cfg.with_values("run", seed=1).hash()


def test_verify_pass_writes_summary_and_replays(tmp_path, capsys):
    code = main(["verify", "homological", "--config", str(CONFIGS / "homological.ini"),
                 "--out", str(tmp_path / "a"), "--json"])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    saved = json.loads((tmp_path / "a" / "homological.json").read_text())
    assert printed["metrics"] == saved["metrics"]
    assert saved["passed"] is True
    assert {"check", "metrics", "seed", "config_hash", "config", "artifacts"} <= set(saved)

    code = main(["verify", "homological", "--config", str(tmp_path / "a" / "homological.json"),
                 "--out", str(tmp_path / "b")])
    assert code == 0
    replay = json.loads((tmp_path / "b" / "homological.json").read_text())
    assert replay["metrics"] == saved["metrics"]
    assert replay["config_hash"] == saved["config_hash"]


def test_verify_failure_exit_code(tmp_path, capsys):
    ini = write_ini(tmp_path / "h.ini",
                    (CONFIGS / "homological.ini").read_text().replace("tolerance = 1e-6", "tolerance = 1e-30"))
    assert main(["verify", "homological", "--config", str(ini), "--out", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    ini = write_ini(tmp_path / "bad.ini", "[model]\nbogus = 1\n")
    assert main(["verify", "homological", "--config", str(ini), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["verify", "homological", "--config", str(tmp_path / "missing.ini")]) == 2


SIM_INI = """
[lattice]
extents = 4
[model]
eps = 0.05
temperatures = 1.0
[run]
dt = 0.01
horizon = 0.5
stride = 10
seed = 9
ensemble = {ensemble}
"""


@pytest.mark.parametrize("kind", ["full", "averaged", "effective"])
def test_simulate_csv(tmp_path, kind, capsys):
    ini = write_ini(tmp_path / "s.ini", SIM_INI.format(ensemble=1))
    assert main(["simulate", kind, "--config", str(ini), "--out", str(tmp_path / "r1")]) == 0
    assert main(["simulate", kind, "--config", str(ini), "--out", str(tmp_path / "r2"),
                 "--workers", "3"]) == 0
    first = (tmp_path / "r1" / "trajectory.csv").read_bytes()
    assert first == (tmp_path / "r2" / "trajectory.csv").read_bytes()
    rows = list(csv.DictReader(first.decode().splitlines()))
    assert len(rows) == 4 * 6
    assert "action" in rows[0]
    meta = json.loads((tmp_path / "r1" / "trajectory.json").read_text())
    assert meta["kind"] == kind and meta["nodes"] == 4


def test_simulate_ensemble_files(tmp_path):
    ini = write_ini(tmp_path / "s.ini", SIM_INI.format(ensemble=3))
    assert main(["simulate", "full", "--config", str(ini), "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("trajectory_*.csv"))
    assert names == ["trajectory_0000.csv", "trajectory_0001.csv", "trajectory_0002.csv"]
    assert main(["simulate", "full", "--config", str(ini), "--out", str(tmp_path), "--seed", "10"]) == 0


def test_sweep_dt(tmp_path, capsys):
    ini = write_ini(tmp_path / "w.ini", """
[lattice]
extents = 2
[model]
eps = 0.1
[run]
dt = 0.01
horizon = 0.2
ensemble = 400
seed = 3
[experiment]
values = 0.02, 0.01, 0.005
""")
    assert main(["sweep", "dt", "--config", str(ini), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "sweep-dt.json").read_text())
    assert summary["passed"] is True
    assert len(summary["table"]["rows"]) == 2
