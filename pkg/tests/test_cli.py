import json
import subprocess
import sys

import numpy as np
import pytest

from entdistill import cli, qstate
from entdistill.cli import (
    EXIT_INVALID_INPUT,
    EXIT_NO_CONVERGENCE,
    EXIT_NOT_DISTILLABLE,
    EXIT_OK,
    RunConfig,
    csv_to_rows,
    dumps_report,
    read_report,
    rows_to_csv,
    run,
)


def test_exact_bell(tmp_path):
    out = tmp_path / "bell.json"
    report, code = run(["exact", "--fixture", "bell", "--out", str(out)])
    assert code == EXIT_OK
    assert report["concurrence_initial"] == pytest.approx(1.0)
    assert report["oracle_concurrence"] == pytest.approx(1.0)
    assert report["lorentz"]["s3"] == pytest.approx(-1.0)
    assert json.loads(out.read_text()) == json.loads(dumps_report(report))


def test_exact_trace_for_rho_eps_lambda(tmp_path):
    out = tmp_path / "trace.csv"
    report, code = run(
        ["exact", "--fixture", "rho_eps_lambda", "--params", "0.5", "0.8",
         "--threshold", "1e-3", "--format", "csv", "--out", str(out)]
    )
    assert code == EXIT_OK
    rows = read_report(out, "csv")
    assert len(rows) == report["distillation"]["iterations"] + 1
    assert rows[0]["v_a"] == pytest.approx(0.48)
    assert rows[-1]["concurrence"] == pytest.approx(0.44, abs=1e-3)
    assert rows[0]["side"] is None and rows[1]["side"] == "A"


def test_exact_asymptotic(capsys):
    report, code = run(["exact", "--fixture", "asymptotic_fig2b", "--max-iters", "30"])
    assert code == EXIT_NO_CONVERGENCE
    assert report["status"] == "asymptotic"
    assert len(report["rows"]) == 31


def test_exact_not_distillable(tmp_path):
    path = tmp_path / "uu.json"
    qstate.save_state(qstate.projector(qstate.KET_UU), path)
    report, code = run(["exact", "--state", str(path)])
    assert code == EXIT_NOT_DISTILLABLE
    assert report["status"] == "not_distillable"


def test_invalid_inputs(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"matrix_re": np.diag([1.2, -0.2, 0, 0]).tolist()}))
    assert run(["exact", "--state", str(path)])[1] == EXIT_INVALID_INPUT
    assert "invalid input" in capsys.readouterr().err
    assert run(["exact", "--state", str(tmp_path / "missing.json")])[1] == EXIT_INVALID_INPUT
    assert run(["exact"])[1] == EXIT_INVALID_INPUT
    assert run(["exact", "--fixture", "rho_prime", "--params", "2"])[1] == EXIT_INVALID_INPUT
    assert run(["estimate", "--fixture", "bell", "--shots-q", "0"])[1] == EXIT_INVALID_INPUT
    assert run(["table1", "--only", "nope"])[1] == EXIT_INVALID_INPUT
    with pytest.raises(SystemExit):
        run(["exact", "--fixture", "bell", "--state", str(path)])


def test_run_config_invariants():
    with pytest.raises(ValueError):
        RunConfig(mode="exact", fixture="bell", state_file="x.json")
    with pytest.raises(ValueError):
        RunConfig(mode="shots", fixture="bell")
    with pytest.raises(ValueError):
        RunConfig(mode="exact").load()


def test_oracle_and_state_file(tmp_path):
    path = tmp_path / "w.json"
    qstate.save_state(qstate.werner(), path)
    report, code = run(["oracle", "--state", str(path)])
    assert code == EXIT_OK
    assert report["concurrence"] == pytest.approx(0.5)
    assert report["state"] == "w"


def test_estimate_report(tmp_path):
    path = tmp_path / "custom.json"
    qstate.save_state(qstate.random_state(4), path)
    report, code = run(["estimate", "--state", str(path), "--seed", "3"])
    assert code == EXIT_OK
    row = report["rows"][0]
    assert row["total"] == row["copies_distill"] + row["copies_quant"]
    assert report["seed"] == 3
    assert report["config"]["plan"]["shots_per_q_setting"] == 100


def test_estimate_tiny_plan_reports_error():
    report, _ = run(["estimate", "--fixture", "bell", "--shots-q", "10", "--shots-lambda", "20"])
    assert report["rows"][0]["stderr"] > 0.02


def test_sweep_summaries():
    report, code = run(["sweep", "--n-states", "20"])
    assert code == EXIT_OK
    assert report["summary"]["max_deviation"] < 1e-6
    report, _ = run(["sweep", "--n-states", "20", "--rank", "1"])
    assert report["summary"]["max_complementarity_residual"] < 1e-9
    report, _ = run(["sweep", "--n-states", "20", "--rank", "product"])
    assert report["summary"]["max_lambda"] < 1e-9
    assert all(r["C_pipeline"] == pytest.approx(0, abs=1e-9) for r in report["rows"])


def test_table1_single_row():
    report, code = run(["table1", "--only", "bell"])
    assert code == EXIT_OK
    assert len(report["rows"]) == 1
    row = report["rows"][0]
    assert row["ref_total"] == 3900
    assert 3900 / 2 <= row["total"] <= 2 * 3900


def test_table1_row_seed_independent_of_filter():
    # the seed of a row does not depend on which other rows run
    full = cli.table1_rows()
    only = cli.table1_rows("werner")
    assert only[0] == full[1]


@pytest.mark.parametrize(
    "argv",
    [
        ["exact", "--fixture", "rho_eps_lambda", "--params", "0.5", "0.8"],
        ["estimate", "--fixture", "werner", "--seed", "5"],
        ["sweep", "--n-states", "5"],
        ["oracle", "--fixture", "asymptotic_fig2b"],
    ],
)
def test_reruns_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(argv + ["--out", str(a)])
    run(argv + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_json_round_trip(tmp_path):
    out = tmp_path / "r.json"
    report, _ = run(["estimate", "--fixture", "bell", "--out", str(out)])
    assert read_report(out, "json") == json.loads(dumps_report(report))


def test_csv_round_trip():
    rows = [{"a": 1, "b": 0.25, "c": None, "d": "A", "e": True}, {"a": 2, "b": -1e-9, "c": 3, "d": "B", "e": False}]
    assert csv_to_rows(rows_to_csv(rows)) == rows
    report, _ = run(["sweep", "--n-states", "3"])
    assert csv_to_rows(rows_to_csv(report["rows"])) == json.loads(dumps_report(report))["rows"]


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "entdistill.cli", "oracle", "--fixture", "werner"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == EXIT_OK
    assert json.loads(proc.stdout)["concurrence"] == pytest.approx(0.5)
