from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from qclandscape.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(tmp_path, command, config, *extra):
    prefix = tmp_path / command
    code = main([command, "--config", str(config), "--out", str(prefix), *extra])
    return code, prefix


def _summary(prefix):
    return json.loads(Path(f"{prefix}.summary.json").read_text())


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _write_cfg(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


@pytest.mark.parametrize("command,config", [
    ("propagate", "rabi.json"),
    ("propagate", "free_evolution.json"),
    ("topology", "topology_n3.json"),
    ("flow", "flow_gate.json"),
    ("optimize", "optimize_transfer.json"),
    ("rank", "rank_pauli.json"),
    ("oracle", "oracle_three_level.json"),
    ("open", "open_lift.json"),
    ("track", "track_geodesic.json"),
])
def test_sample_configs_succeed(tmp_path, command, config):
    code, prefix = _run(tmp_path, command, CONFIGS / config)
    assert code == 0
    manifest = _summary(prefix)["manifest"]
    assert manifest["status"] == "ok" and manifest["command"] == command
    assert len(manifest["inputs_sha256"]) == 64


def test_outputs_are_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    for d in (a, b):
        assert main(["flow", "--config", str(CONFIGS / "flow_gate.json"), "--out", str(d / "run"), "--seed", "9"]) == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()
    c = tmp_path / "c"
    main(["flow", "--config", str(CONFIGS / "flow_gate.json"), "--out", str(c), "--seed", "10"])
    assert Path(f"{c}.flow.csv").read_bytes() != (a / "run.flow.csv").read_bytes()


def test_topology_rows_match_permutation_sums(tmp_path):
    code, prefix = _run(tmp_path, "topology", CONFIGS / "topology_n3.json")
    assert code == 0
    rows = _rows(f"{prefix}.critical.csv")
    assert len(rows) == 6
    eps, lam = np.array([0.6, 0.3, 0.1]), np.array([3.0, 1.0, -2.0])
    expected = sorted((eps @ lam[list(p)] for p in itertools.permutations(range(3))), reverse=True)
    assert np.allclose([float(r["value"]) for r in rows], expected, atol=1e-12)
    assert [int(r["saddle"]) for r in rows] == [0, 1, 1, 1, 1, 0]


def test_oracle_value(tmp_path):
    code, prefix = _run(tmp_path, "oracle", CONFIGS / "oracle_three_level.json")
    assert code == 0
    assert _summary(prefix)["results"]["value"] == pytest.approx(7.402203300817018, abs=1e-9)


def test_rank_reports_controllable(tmp_path):
    code, prefix = _run(tmp_path, "rank", CONFIGS / "rank_pauli.json")
    res = _summary(prefix)["results"]
    assert code == 0 and res["dimension_found"] == 4 and res["controllable"]


def test_dmorph_level_set_drift(tmp_path):
    code, prefix = _run(tmp_path, "dmorph", CONFIGS / "dmorph_eight_level.json")
    assert code == 0
    res = _summary(prefix)["results"]
    assert res["max_drift"] < 1e-4
    assert res["fluence_end"] > res["fluence_start"]
    fl = [float(r["fluence"]) for r in _rows(f"{prefix}.dmorph.csv")]
    assert np.all(np.diff(fl) > 0)


def test_csv_columns_are_documented(tmp_path):
    _, prefix = _run(tmp_path, "topology", CONFIGS / "topology_n3.json")
    lines = Path(f"{prefix}.critical.csv").read_text().splitlines()
    doc = [ln[2:].split(":")[0] for ln in lines if ln.startswith("#")]
    header = next(ln for ln in lines if not ln.startswith("#")).split(",")
    assert doc == header


def test_unknown_field_is_config_error(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"oracle": {"kind": "three_level", "T": 1.0}, "bogus": 1})
    code, prefix = _run(tmp_path, "oracle", cfg)
    assert code == 2
    assert not Path(f"{prefix}.summary.json").exists()
    assert "error" in capsys.readouterr().err


def test_missing_block_and_bad_input_exit_two(tmp_path):
    cfg = _write_cfg(tmp_path, {"output": "x"})
    assert _run(tmp_path, "oracle", cfg)[0] == 2
    bad = _write_cfg(tmp_path, {"system": {"h0": [[0, 1], [2, 0]], "dipoles": [[[0, 1], [1, 0]]], "horizon": 1.0},
                                "field": {"kind": "zeros", "steps": 4},
                                "objective": {"kind": "observable", "psi0": [1, 0], "theta": [[1, 0], [0, 0]]}}, "bad.json")
    assert _run(tmp_path, "propagate", bad)[0] == 2
    assert _run(tmp_path, "propagate", tmp_path / "missing.json")[0] == 2


def test_numerical_abort_exit_one(tmp_path):
    # a decoupled third level makes G singular, so geodesic tracking aborts
    cfg = _write_cfg(tmp_path, {
        "system": {"h0": [[0, 0, 0], [0, 1, 0], [0, 0, 2.5]], "dipoles": [[[0, 1, 0], [1, 0, 0], [0, 0, 0]]], "horizon": 4.0},
        "field": {"kind": "random", "steps": 60, "amplitude": 0.5},
        "track": {"target": "random", "s_steps": 10},
        "seed": 1,
    })
    code, prefix = _run(tmp_path, "track", cfg)
    assert code == 1
    manifest = _summary(prefix)["manifest"]
    assert manifest["status"] == "aborted" and "ConditionAbort" in manifest["reason"]


def test_seed_override_recorded(tmp_path):
    _, prefix = _run(tmp_path, "flow", CONFIGS / "flow_gate.json", "--seed", "42", "--verbose")
    assert _summary(prefix)["manifest"]["seed"] == 42


def test_free_evolution_conserves_energy_populations(tmp_path):
    code, prefix = _run(tmp_path, "propagate", CONFIGS / "free_evolution.json")
    assert code == 0
    rows = _rows(f"{prefix}.trajectory.csv")
    pops = np.array([[float(r[f"pop_{i}"]) for i in range(3)] for r in rows])
    assert len(rows) == 51
    assert np.max(np.abs(pops - pops[0])) < 1e-12


def test_rabi_config_swaps_population(tmp_path):
    code, prefix = _run(tmp_path, "propagate", CONFIGS / "rabi.json")
    assert code == 0
    assert abs(_summary(prefix)["results"]["objective_value"] - 1.0) < 1e-9
    last = _rows(f"{prefix}.trajectory.csv")[-1]
    assert abs(float(last["pop_1"]) - 1.0) < 1e-9
