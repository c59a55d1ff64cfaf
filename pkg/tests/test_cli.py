import json
from pathlib import Path

import numpy as np
import pytest

from branesim import cli, solver
from branesim.cli import cmd_verify, main, parse_run_config
from branesim.solver import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def flat_config(tmp_path, **overrides):
    cfg = {
        "schema": 1,
        "m": 1,
        "n": 1,
        "grid": {"sizes": [32], "lengths": [6.283185307179586]},
        "scheme": {"stencil_order": 2, "cfl": 0.4, "filter_strength": 0.0},
        "t_end": 0.2,
        "output_cadence": 0.1,
        "initial_data": {"X_modes": [], "V_modes": []},
        "toggles": {"oracle_compare": False, "mcf_compare": False},
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# verify


def test_verify_small_run_passes():
    report = cmd_verify(shapes=[(1, 1), (2, 2)], samples=10, seed=3)
    assert report.all_passed()
    assert report.passes["xi"]["pass"] == 20
    assert report.passes["cauchy_binet"]["fail"] == 0


def test_verify_zero_samples_is_empty_success(capsys):
    assert main(["verify", "--samples", "0"]) == 0
    out = capsys.readouterr().out
    doc = json.loads(out)
    assert doc["all_passed"] is True
    assert all(v == {"pass": 0, "fail": 0} for v in doc["identities"].values())


def test_verify_report_deterministic(capsys):
    assert main(["--seed", "11", "verify", "--samples", "5", "--shapes", "2x2,1x2"]) == 0
    first = capsys.readouterr().out
    assert main(["--seed", "11", "verify", "--samples", "5", "--shapes", "2x2,1x2"]) == 0
    second = capsys.readouterr().out
    assert first == second


def test_verify_failure_exits_nonzero(monkeypatch, capsys):
    real = cmd_verify

    def rigged(shapes, samples, seed):
        report = real(shapes, samples, seed)
        report.failures.append({"identity": "xi", "shape": [1, 1], "input": [["1"]]})
        return report

    monkeypatch.setattr(cli, "cmd_verify", rigged)
    assert main(["verify", "--samples", "1", "--shapes", "1x1"]) == 1


def test_verify_rejects_bad_shape_token():
    assert main(["verify", "--shapes", "2xx"]) == 2


# ---------------------------------------------------------------------------
# simulate


def test_simulate_flat_constant(tmp_path, capsys):
    path = flat_config(tmp_path)
    assert main(["simulate", str(path)]) == 0
    csv = (tmp_path / "out" / "diagnostics.csv").read_text().strip().split("\n")
    assert csv[0] == solver.CSV_HEADER
    for line in csv[1:]:
        cells = line.split(",")
        assert float(cells[1]) == pytest.approx(6.283185307179586, rel=1e-14)
        assert float(cells[3]) == 0.0


def test_simulate_missing_file_exits_2(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.json")]) == 2


def test_simulate_unknown_key_exits_2(tmp_path):
    path = flat_config(tmp_path)
    doc = json.loads(path.read_text())
    doc["surprise"] = 1
    path.write_text(json.dumps(doc))
    assert main(["simulate", str(path)]) == 2


def test_simulate_validation_messages(tmp_path):
    for bad in ({"m": 9}, {"n": 5}, {"t_end": -1.0}, {"scheme": {"cfl": 1.5}}):
        path = flat_config(tmp_path, **bad)
        assert main(["simulate", str(path)]) == 2


def test_simulate_blowup_exits_3_with_partial_output(tmp_path, monkeypatch):
    path = flat_config(tmp_path)

    def explode(*args, **kwargs):
        raise solver.BlowUpError(0.125, rows=[solver.DiagnosticsRow(0, 1, 0, 0, 0, 0, 0, 0)])

    monkeypatch.setattr(solver, "run", explode)
    assert main(["simulate", str(path)]) == 3
    assert (tmp_path / "out" / "diagnostics.csv").exists()


def test_simulate_deterministic_bytes(tmp_path):
    path = flat_config(
        tmp_path,
        initial_data={
            "X_modes": [{"component": 1, "wave": [1], "amplitude": 0.1, "phase": 0.0}],
            "V_modes": [{"component": 1, "wave": [1], "amplitude": 0.05, "phase": 0.7}],
        },
    )
    assert main(["--output-dir", str(tmp_path / "a"), "simulate", str(path)]) == 0
    assert main(["--output-dir", str(tmp_path / "b"), "simulate", str(path)]) == 0
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_simulate_snapshots_round_trip(tmp_path):
    path = flat_config(tmp_path, snapshot_cadence=0.1)
    assert main(["simulate", str(path)]) == 0
    snaps = sorted((tmp_path / "out").glob("snapshot_*.json"))
    assert snaps
    doc = json.loads(snaps[0].read_text())
    assert doc["layout"] == [[[1], [1]]]
    values = np.array(doc["values"])
    assert values.shape == (4, 32)


def test_parse_config_rejects_wrong_mode_sizes(tmp_path):
    path = flat_config(
        tmp_path,
        initial_data={"X_modes": [{"component": 1, "wave": [1, 2], "amplitude": 0.1}], "V_modes": []},
    )
    with pytest.raises(ConfigError):
        parse_run_config(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# characteristics


def test_characteristics_flat_and_moving(tmp_path, capsys):
    doc = {"m": 1, "n": 1, "state": {"tau": 1.0, "d": [0.0], "v": [0.0], "minors": [0.0]}}
    path = tmp_path / "state.json"
    path.write_text(json.dumps(doc))
    assert main(["characteristics", str(path)]) == 0
    out = capsys.readouterr().out
    assert "1 2" in out and "-1 2" in out

    doc["state"]["tau"], doc["state"]["v"] = 0.5, [0.2]
    path.write_text(json.dumps(doc))
    assert main(["characteristics", str(path)]) == 0
    out = capsys.readouterr().out
    assert "0.69999999999999996 2" in out
    assert "-0.29999999999999999 2" in out


def test_characteristics_n2_numeric(tmp_path, capsys):
    doc = {
        "m": 1,
        "n": 2,
        "state": {"tau": 1.0, "d": [0.1], "v": [0.05, -0.02], "minors": [0.1, 0.2]},
        "nu": [0.6, 0.8],
    }
    path = tmp_path / "state.json"
    path.write_text(json.dumps(doc))
    assert main(["characteristics", str(path)]) == 0
    out = capsys.readouterr().out
    spec = [float(x) for x in out.strip().split("\n")[-1].split()[1:]]
    assert len(spec) == 6  # n + m + C(m+n, n) = 2 + 1 + 3
    assert spec == sorted(spec)


def test_characteristics_bad_state_exits_2(tmp_path):
    path = tmp_path / "state.json"
    path.write_text(json.dumps({"m": 1, "n": 1, "state": {"tau": 1.0, "d": [], "v": [0.0], "minors": [0.0]}}))
    assert main(["characteristics", str(path)]) == 2


# ---------------------------------------------------------------------------
# mcf-compare


def mcf_config(tmp_path, **overrides):
    cfg = {
        "schema": 1,
        "m": 1,
        "n": 1,
        "grid": {"sizes": [64], "lengths": [6.283185307179586]},
        "initial_data": {"X_modes": [{"component": 1, "wave": [1], "amplitude": 0.1, "phase": 0.0}]},
        "dt_values": [0.004, 0.002],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "mcf.json"
    path.write_text(json.dumps(cfg))
    return path


def test_mcf_compare_runs_and_reports_order(tmp_path, capsys):
    path = mcf_config(tmp_path)
    assert main(["mcf-compare", str(path)]) == 0
    out = capsys.readouterr().out
    order = float(out.split("acceleration order in dt:")[1].split("\n")[0])
    assert order > 1.8
    lines = (tmp_path / "out" / "mcf_compare.csv").read_text().strip().split("\n")
    assert lines[0] == "t,err_acceleration_Linf,tangency_residual,radius_or_amplitude"
    assert len(lines) == 3


def test_mcf_compare_single_dt_leaves_order_empty(tmp_path, capsys):
    path = mcf_config(tmp_path, dt_values=[0.004])
    assert main(["mcf-compare", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.split("acceleration order in dt:")[1].split("\n")[0].strip() == ""


def test_mcf_compare_rejects_nonzero_velocity(tmp_path):
    path = mcf_config(
        tmp_path,
        initial_data={
            "X_modes": [{"component": 1, "wave": [1], "amplitude": 0.1}],
            "V_modes": [{"component": 1, "wave": [1], "amplitude": 0.1}],
        },
    )
    assert main(["mcf-compare", str(path)]) == 2


def test_bundled_configs_parse():
    for name in ("string_n1.json", "membrane_n2.json", "flat_n1.json"):
        parse_run_config(json.loads((CONFIG_DIR / name).read_text()))
    cli.parse_mcf_config(json.loads((CONFIG_DIR / "mcf_sine.json").read_text()))


def test_threads_flag_validation(tmp_path):
    path = flat_config(tmp_path)
    assert main(["--threads", "0", "simulate", str(path)]) == 2
    assert main(["--threads", "2", "simulate", str(path)]) == 0
