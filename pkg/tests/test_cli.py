import csv
import json

import numpy as np
import pytest

from hypolab import cli
from hypolab.runner import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    emit,
    report_csv,
    report_json,
    run,
)


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_config_validation_itemized():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"group": "heisenberg3", "experiment": "kp", "p": 1.0, "t_grid": [],
                                    "N": 0})
    text = " ".join(exc.value.problems)
    assert "p:" in text and "t_grid" in text and "N:" in text


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"group": "abelian:2", "experiment": "simulate", "bogus": 1})


def test_overrides_apply_to_scalars():
    cfg = ExperimentConfig.from_dict({"group": "abelian:2", "experiment": "simulate", "seed": 1},
                                     {"seed": 5, "output": "x"})
    assert cfg.seed == 5 and cfg.output == "x"


def test_empty_report_header_only(tmp_path):
    rep = ExperimentReport({"experiment": "simulate", "group": "abelian:2", "seed": 0})
    assert report_csv(rep) == ",".join(CSV_COLUMNS) + "\n"
    paths = emit(rep, "csv", tmp_path / "empty")
    assert [p.name for p in paths] == ["empty.csv"]


def test_json_round_trip(tmp_path):
    rep = run({"group": "heisenberg3", "experiment": "covariance", "t_grid": [1.0], "n": 16, "N": 50,
               "seed": 2})
    doc = json.loads(report_json(rep))
    back = ExperimentReport.from_dict(doc)
    assert back.to_dict() == json.loads(report_json(rep))
    assert report_csv(back) == report_csv(rep)


def test_covariance_experiment_exit_zero(tmp_path):
    cfg = write(tmp_path, {"group": "heisenberg3", "experiment": "covariance", "t_grid": [0.5, 1.0],
                           "n": 32, "N": 100, "seed": 1})
    assert cli.main(["covariance", "--config", cfg, "--out", str(tmp_path / "cov")]) == 0
    rows = list(csv.DictReader((tmp_path / "cov.csv").open()))
    resid = [float(r["value"]) for r in rows if r["quantity"] == "closed_form_residual"]
    assert len(resid) == 2 and max(resid) <= 1e-12
    assert (tmp_path / "cov.png").exists()


def test_schema_error_exit_nonzero(tmp_path, capsys):
    cfg = write(tmp_path, {"group": "abelian:2", "experiment": "kp", "p": 1.0})
    assert cli.main(["kp", "--config", cfg, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "p: must exceed 1" in capsys.readouterr().err


def test_spec_resolution_error(tmp_path):
    cfg = write(tmp_path, {"group": "nonsense", "experiment": "simulate"})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == cli.EXIT_SPEC


def test_kp_rows_per_t(tmp_path):
    cfg = write(tmp_path, {"group": "abelian:2", "experiment": "kp", "t_grid": [0.5, 1.0, 2.0], "n": 4,
                           "N": 2000, "seed": 3, "options": {"N_search": 1000, "restarts": 1, "iters": 60}})
    assert cli.main(["kp", "--config", cfg, "--out", str(tmp_path / "kp"), "--no-figure"]) == 0
    rows = list(csv.DictReader((tmp_path / "kp.csv").open()))
    assert [float(r["t"]) for r in rows] == [0.5, 1.0, 2.0]
    assert all(r["quantity"] == "K_hat" and r["seed"] for r in rows)


def test_csv_byte_identical_across_threads(tmp_path, monkeypatch):
    doc = {"group": "free:2:3", "experiment": "simulate", "t_grid": [1.0], "n": 8, "N": 300, "seed": 4}
    cfg = write(tmp_path, doc)
    monkeypatch.setenv("HYPOLAB_THREADS", "1")
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--no-figure"])
    monkeypatch.setenv("HYPOLAB_THREADS", "4")
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--no-figure"])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_algebra_check_and_seed_override(tmp_path):
    cfg = write(tmp_path, {"group": "free:2:3", "experiment": "algebra-check", "seed": 0})
    assert cli.main(["algebra-check", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "alg"),
                     "--format", "json", "--no-figure"]) == 0
    doc = json.loads((tmp_path / "alg.json").read_text())
    assert doc["config"]["seed"] == 9
    assert all(c["passed"] for c in doc["checks"])


def test_failed_check_sets_exit_one(tmp_path, monkeypatch):
    from hypolab import runner

    def broken(cfg, spec, rep):
        rep.add("x", 1.0)
        rep.check("forced", False, "row x")

    monkeypatch.setitem(runner.DISPATCH, "simulate", broken)
    cfg = write(tmp_path, {"group": "abelian:2", "experiment": "simulate"})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "f"), "--no-figure"]) == cli.EXIT_CHECK


def test_duality_rows(tmp_path):
    rep = run({"group": "heisenberg3", "experiment": "duality", "t_grid": [1.0], "n": 8, "N": 400, "seed": 1})
    assert rep.ok
    gaps = {r.quantity: r for r in rep.rows}
    for name in ("duality_gap_lifted", "duality_gap_dh"):
        assert np.isfinite(gaps[name].value)
