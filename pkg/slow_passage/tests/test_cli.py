import csv
import json

import pytest

from slow_passage import __version__
from slow_passage.cli import build_parser, config_from_args, main
from slow_passage.pwl.constants import ModelKind
from slow_passage.src.experiments import ExperimentConfig

TWO_REGION = ["--model", "two-region", "--m", "1", "--k", "0.1", "--eps", "0.25"]
THREE_REGION = ["--three-region", "--rho", "-0.085", "--mu", "0.15", "--eps", "0.05"]


def error_line(capsys):
    err = capsys.readouterr().err
    return json.loads([line for line in err.splitlines() if line.startswith("{")][-1])


def test_connect_three_region(tmp_path):
    """Test the connection report carries the solved slopes and the version."""
    assert main(["connect", *THREE_REGION, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "connection.json").read_text())
    assert report["version"] == __version__
    assert report["solution"]["m"] == pytest.approx(1.318, abs=1e-3)
    assert report["solution"]["k"] == pytest.approx(0.1894, abs=1e-3)
    assert report["sign_relations"]["case"] == "b"


def test_classify_three_region(tmp_path):
    assert main(["classify", *THREE_REGION, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["hopf"]["criticality"] == "supercritical"
    assert report["hopf"]["location"] == 0.15


def test_simulate_writes_trajectory(tmp_path):
    assert main(["simulate", *TWO_REGION, "--t-max", "20", "--dt", "0.5", "--out", str(tmp_path)]) == 0
    with (tmp_path / "trajectory.csv").open(newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "x", "y", "z", "region"]
    assert len(rows) == 42
    assert rows[1][4] in ("L", "R")
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["terminated_by"] == "horizon"


def test_runs_are_deterministic(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    args = ["simulate", *TWO_REGION, "--t-max", "30"]
    assert main([*args, "--out", str(first)]) == 0
    assert main([*args, "--out", str(second)]) == 0
    for name in ("trajectory.csv", "report.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_wayinout_writes_pairs(tmp_path):
    assert main(["wayinout", *TWO_REGION, "--z-start", "-3", "--z-stop", "-0.5", "--z-num", "4", "--out", str(tmp_path)]) == 0
    with (tmp_path / "wayinout.csv").open(newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    assert all(float(row["z_out"]) > 0 for row in rows)


def test_empty_grid_is_rejected(tmp_path, capsys):
    assert main(["wayinout", *TWO_REGION, "--z-grid", "", "--out", str(tmp_path)]) == 2
    error = error_line(capsys)
    assert error["error"] == "invalid-config"
    assert "z_grid" in error["message"]


def test_library_errors_exit_with_code(tmp_path, capsys):
    args = ["connect", "--three-region", "--rho", "-0.5", "--mu", "0.5", "--eps", "0.05"]
    assert main([*args, "--out", str(tmp_path)]) == 2
    error = error_line(capsys)
    assert error["error"] == "inadmissible"
    assert "slopes out of admissible range" in error["message"]


def test_model_validation_errors_are_unwrapped(tmp_path, capsys):
    args = ["simulate", "--model", "two-region", "--m", "3", "--k", "0.1", "--eps", "0.1"]
    assert main([*args, "--out", str(tmp_path)]) == 2
    assert error_line(capsys)["error"] == "inadmissible"


def test_missing_model(tmp_path, capsys):
    assert main(["simulate", "--eps", "0.1", "--out", str(tmp_path)]) == 2
    assert error_line(capsys)["error"] == "invalid-config"


def test_version(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["--version"])
    assert exc_info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_config_file_with_overrides(tmp_path):
    """Test flags override values loaded from --config."""
    config = ExperimentConfig(command="wayinout", kind=ModelKind.TWO_REGION, params={"m": 1.0, "k": 0.1, "epsilon": 0.25}, z_grid=[-2.0, -1.0])
    path = tmp_path / "config.json"
    path.write_text(config.model_dump_json())

    args = build_parser().parse_args(["wayinout", "--config", str(path), "--eps", "0.1", "--delta", "0.5"])
    loaded = config_from_args(args)
    assert loaded.params == {"m": 1.0, "k": 0.1, "epsilon": 0.1}
    assert loaded.delta == 0.5
    assert loaded.z_grid == [-2.0, -1.0]
    assert loaded.kind is ModelKind.TWO_REGION


def test_config_round_trip():
    config = ExperimentConfig(command="delay-sweep", kind=ModelKind.DK, params={"I": 2.0, "epsilon": 1e-3}, eps_grid=[1e-3, 1e-4, 1e-5])
    assert ExperimentConfig.model_validate_json(config.model_dump_json()) == config


def test_grid_required_by_command():
    with pytest.raises(ValueError, match="needs its grid"):
        ExperimentConfig(command="precision-table", kind=ModelKind.THREE_REGION, params={})


def test_partial_initial_state(tmp_path, capsys):
    assert main(["simulate", *TWO_REGION, "--x0", "0.1", "--out", str(tmp_path)]) == 2
    assert error_line(capsys)["error"] == "pwl-error"
