"""
Tests for config parsing, result files and the command-line entry point.
"""
import json

import numpy as np
import pandas as pd
import pytest

from src.cli.main import main
from src.core.errors import ErrorCode, ValidationFailure
from src.infrastructure.config.loader import parse_config, read_document
from src.infrastructure.persistence.report_repo import FileResultSink, jsonable


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_parse_log_config(log_config):
    """Test parsing resolves grid and simulation defaults."""
    loaded = parse_config(log_config)
    assert loaded.model.states == ("low", "high")
    assert loaded.grid.K == 2000
    assert loaded.threads == 1
    assert loaded.problem.utility.label()
    echo = loaded.config.echo()
    assert echo["schema"] == 1
    assert echo["simulation"]["n_jumps"] == 100
    assert echo["grid"]["dt"] == pytest.approx(5e-3)


def test_exp_gamma_is_resolved_from_utility(exp_config):
    """Test exp.gamma falls back to the exponential utility's gamma."""
    loaded = parse_config(exp_config)
    assert loaded.config.exp.gamma == 1.0


def test_missing_cost_points_at_c(log_config):
    """Test a missing cost is a schema error at /c."""
    del log_config["c"]
    with pytest.raises(ValidationFailure) as exc:
        parse_config(log_config)
    assert exc.value.code == ErrorCode.SCHEMA_ERROR
    assert exc.value.details["pointer"] == "/c"


def test_bad_step_points_at_grid(log_config):
    """Test a negative step is a schema error at /grid/dt."""
    log_config["grid"]["dt"] = -1.0
    with pytest.raises(ValidationFailure) as exc:
        parse_config(log_config)
    assert exc.value.details["pointer"] == "/grid/dt"


def test_unknown_key_is_rejected(log_config):
    """Test unknown keys are rejected with their pointer."""
    log_config["solver"] = {"tolerance": 1e-3}
    with pytest.raises(ValidationFailure) as exc:
        parse_config(log_config)
    assert exc.value.details["pointer"] == "/solver/tolerance"


def test_model_defect_travels_as_cause(log_config):
    """Test generator defects are reported as the cause of a validation error."""
    log_config["Q"] = [[-1.0, 0.5], [1.0, -1.0]]
    with pytest.raises(ValidationFailure) as exc:
        parse_config(log_config)
    assert exc.value.code == ErrorCode.VALIDATION_ERROR
    assert exc.value.details["cause"] == "ROW_SUM_NONZERO"


def test_model_keys_required():
    """Test a config without Q/g or alpha is rejected."""
    with pytest.raises(ValidationFailure) as exc:
        parse_config({"schema": 1, "c": 1.0})
    assert exc.value.code == ErrorCode.SCHEMA_ERROR


def test_house_config():
    """Test an alpha vector builds the house model."""
    loaded = parse_config({"schema": 1, "alpha": [1.0, 1.0, 1.0], "c": 0.2,
                           "utility": {"family": "logarithmic"}, "threads": 2})
    assert loaded.house is not None
    assert loaded.model.states == ("1", "2", "3")
    assert loaded.threads == 2


def test_read_document_rejects_bad_json(tmp_path):
    """Test malformed JSON reports its line."""
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ValidationFailure) as exc:
        read_document(path)
    assert exc.value.code == ErrorCode.SCHEMA_ERROR
    assert exc.value.details["line"] == 1


def test_jsonable_spells_out_non_finite():
    """Test non-finite numbers and numpy scalars become JSON-safe."""
    assert jsonable({"a": np.inf, "b": -np.inf, "c": np.nan, "d": np.int64(3), "e": np.bool_(True)}) == \
        {"a": "inf", "b": "-inf", "c": "nan", "d": 3, "e": True}


def test_file_sink_writes_csv_and_json(tmp_path):
    """Test the file sink writes CSV and JSON artifacts."""
    sink = FileResultSink(tmp_path / "out")
    path = sink.write_table("t", pd.DataFrame({"x": [1.0, np.inf]}))
    assert open(path).read().splitlines() == ["x", "1", "inf"]
    report = sink.write_report("report", {"v": np.inf})
    assert json.loads(open(report).read()) == {"v": "inf"}


def test_cli_solve_infinite(log_config, write_config, tmp_path):
    """Test solve-infinite from the command line."""
    out = tmp_path / "out"
    assert main(["solve-infinite", str(write_config(log_config)), "--out", str(out)]) == 0
    table = pd.read_csv(out / "values.csv")
    assert list(table.columns) == ["t", "state", "value", "h_star"]
    first = table[(table.state == "low") & (table.t == 0.0)]
    assert first.h_star.iloc[0] == pytest.approx(9.9, abs=0.02)
    report = _report(out)
    assert report["exit_code"] == 0
    assert report["result"]["h_star_t0"]["high"] == 0.0


def test_cli_solve_exp_writes_inf(exp_config, write_config, tmp_path):
    """Test solve-exp writes inf for never-stop states."""
    out = tmp_path / "out"
    assert main(["solve-exp", str(write_config(exp_config)), "--out", str(out)]) == 0
    text = (out / "exp.csv").read_text()
    assert "inf" in text
    report = _report(out)
    assert report["result"]["stop_set"] == ["1"]
    assert report["result"]["W"]["0"] == pytest.approx(-1.5 / np.e)


def test_cli_flagged_model_stops_everywhere(write_config, tmp_path):
    """Test a drift-flagged model reports stopping everywhere."""
    doc = {"schema": 1, "Q": [[-1.0, 1.0], [1.0, -1.0]], "g": [0.0, 1.0], "c": 1.0,
           "utility": {"family": "exponential", "gamma": 2.0}, "threads": 1}
    out = tmp_path / "out"
    assert main(["solve-exp", str(write_config(doc)), "--out", str(out)]) == 0
    assert _report(out)["result"]["stop_set"] == "all"


def test_cli_not_comparable(log_config, write_config, tmp_path):
    """Test unordered utilities exit 1 with the config echoed."""
    del log_config["utility"]
    log_config["compare"] = {"u": {"family": "power", "p": 0.5}, "w": {"family": "logarithmic"}}
    out = tmp_path / "out"
    assert main(["compare-risk", str(write_config(log_config)), "--out", str(out)]) == 1
    report = _report(out)
    assert report["error"]["code"] == "NOT_COMPARABLE"
    assert report["config"]["compare"]["u"]["family"] == "power"


def test_cli_no_convergence(log_config, write_config, tmp_path):
    """Test an iteration cap exits 2."""
    log_config["solver"] = {"max_iter": 1}
    out = tmp_path / "out"
    assert main(["solve-infinite", str(write_config(log_config)), "--out", str(out)]) == 2
    assert _report(out)["error"]["code"] == "NO_CONVERGENCE"


def test_cli_schema_error_without_config_echo(write_config, tmp_path):
    """Test schema errors are reported without a config echo."""
    out = tmp_path / "out"
    assert main(["validate", str(write_config({"schema": 1, "Q": [[0.0]]})), "--out", str(out)]) == 1
    report = _report(out)
    assert report["error"]["code"] == "SCHEMA_ERROR"
    assert "config" not in report


def test_cli_seed_is_echoed(exp_config, write_config, tmp_path):
    """Test --seed overrides and is echoed."""
    out = tmp_path / "out"
    exp_config["simulation"]["n_paths"] = 2000
    assert main(["simulate", str(write_config(exp_config)), "--out", str(out), "--seed", "42"]) == 0
    report = _report(out)
    assert report["config"]["simulation"]["seed"] == 42
    assert report["result"]["estimate"]["seed"] == 42


def test_cli_rejects_unknown_command(log_config, write_config):
    """Test argparse rejects an unknown command."""
    with pytest.raises(SystemExit):
        main(["optimize", str(write_config(log_config))])


@pytest.mark.parametrize("command,section,ref", [
    ("simulate", "simulation", "bogus"),
    ("tail-check", "simulation", 7),
    ("compare-risk", "compare", "nowhere"),
])
def test_cli_bad_state_reference_writes_report(exp_config, write_config, tmp_path, command, section, ref):
    """Test that an unknown state name or out-of-range index exits 1 with a pointer in the report."""
    if section == "compare":
        exp_config["compare"] = {"u": {"family": "exponential", "gamma": 2.0},
                                 "w": {"family": "exponential", "gamma": 1.0}}
    exp_config[section]["i0"] = ref
    out = tmp_path / "out"
    assert main([command, str(write_config(exp_config)), "--out", str(out)]) == 1
    error = _report(out)["error"]
    assert error["code"] == "SCHEMA_ERROR"
    assert error["details"]["pointer"] == f"/{section}/i0"


def test_excluded_state_must_exist(exp_config):
    """Test that look-ahead exclusions are checked against the model's states."""
    exp_config["ola"] = {"exclude": [0, 5]}
    with pytest.raises(ValidationFailure) as exc:
        parse_config(exp_config)
    assert exc.value.details["pointer"] == "/ola/exclude/1"
