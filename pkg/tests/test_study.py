"""Tests for the solve, optimize and study runners and their output files."""

import csv
import json
import math

import pytest

from cmd.curvectrl import config, study
from cmd.curvectrl.exceptions import ConfigError


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def _serial(monkeypatch):
    monkeypatch.delenv("CURVECTRL_THREADS", raising=False)


def test_compute_rates():
    assert study.compute_rates([0.4, 0.2], [0.4, 0.1]) == [None, pytest.approx(2.0)]
    assert study.compute_rates([0.4, 0.2, 0.1], [1.0, 0.0, 0.0]) == [None, None, None]
    assert study.compute_rates([0.4, 0.2], [math.nan, 1.0]) == [None, None]


@pytest.mark.parametrize(
    "value, text",
    [(None, ""), (3, "3"), (True, "1"), (0.1, "0.10000000000000001"), (math.nan, "nan")],
)
def test_format_value(value, text):
    assert study.format_value(value) == text


def test_solve_single_step_point_source(tmp_path):
    cfg = config.parse_config(
        {
            "domain": {"n": 2},
            "time": {"M": 1, "T": 0.1},
            "curve": {"kind": "fixed"},
            "control": {"q_expr": "1"},
        }
    )
    out = study.run_solve(cfg, tmp_path / "run")
    rows = _rows(out / "solution.csv")
    assert list(rows[0]) == ["m", "t_m", "q_m", "u_at_curve", "u_norm_m"]
    assert float(rows[0]["u_at_curve"]) == pytest.approx(4.0 / 21.0, rel=1e-12)
    assert float(rows[0]["q_m"]) == 1.0
    assert (out / "config.yaml").exists()
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["command"] == "solve"
    assert metadata["defaults_origin"] == "constructed"


def test_solve_without_control_is_zero(tmp_path):
    cfg = config.parse_config({"domain": {"n": 4}, "time": {"M": 5}})
    rows = _rows(study.run_solve(cfg, tmp_path) / "solution.csv")
    assert "q_m" not in rows[0]
    assert all(float(r["u_at_curve"]) == 0.0 and float(r["u_norm_m"]) == 0.0 for r in rows)


def test_solve_with_desired_state_adds_adjoint_column(tmp_path):
    cfg = config.parse_config(
        {"domain": {"n": 4}, "time": {"M": 4}, "control": {"q_expr": "1"}, "data": {"uhat_expr": "1"}}
    )
    rows = _rows(study.run_solve(cfg, tmp_path) / "solution.csv")
    assert "z_at_curve" in rows[0]


def test_optimize_writes_control_and_diagnostics(tmp_path):
    cfg = config.parse_config(
        {
            "domain": {"n": 4},
            "time": {"M": 6},
            "control": {"alpha": 0.01, "qa": -0.3, "qb": 0.3},
            "data": {"uhat_expr": "sin(pi*x)*sin(pi*y)*sin(2*pi*t)"},
            "solver": {"tol": 1e-10},
        }
    )
    out = study.run_optimize(cfg, tmp_path)
    rows = _rows(out / "control.csv")
    assert list(rows[0]) == ["m", "t_m", "q_m", "z_at_curve", "gradient"]
    assert len(rows) == 6
    assert all(-0.3 <= float(r["q_m"]) <= 0.3 for r in rows)
    diagnostics = json.loads((out / "diagnostics.json").read_text())
    assert diagnostics["converged"] is True
    assert diagnostics["solver"] == "pdas"
    assert diagnostics["optimality_residual"] <= 1e-8


def test_study_needs_two_levels(tmp_path):
    cfg = config.parse_config({"domain": {"levels": 1}})
    with pytest.raises(ConfigError):
        study.run_study(cfg, tmp_path)


def _state_study():
    return config.parse_config(
        {
            "domain": {"n": 2, "levels": 2},
            "time": {"M": 2},
            "reference": {"extra_levels": 1},
            "control": {"q_expr": "1 + t"},
            "output": {"timings": False},
            "study": {"mode": "state"},
        }
    )


def test_state_study_writes_eoc_table(tmp_path):
    out = study.run_study(_state_study(), tmp_path)
    with open(out / "eoc.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == study.EOC_COLUMNS
    rows = _rows(out / "eoc.csv")
    assert [int(r["level"]) for r in rows] == [0, 1]
    assert [int(r["M"]) for r in rows] == [2, 8]
    assert rows[0]["eoc_state"] == ""
    assert rows[1]["eoc_state"] != ""
    assert all(float(r["err_state_l2l2"]) > 0.0 for r in rows)
    assert all(r["wall_ms"] == "0" or float(r["wall_ms"]) == 0.0 for r in rows)
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["reference_level"] == 2
    assert [lv["n"] for lv in metadata["levels"]] == [2, 4]


def test_study_reruns_are_byte_identical(tmp_path):
    cfg = _state_study()
    first = study.run_study(cfg, tmp_path / "a")
    second = study.run_study(cfg, tmp_path / "b")
    for name in ["eoc.csv", "metadata.json", "config.yaml"]:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_threaded_study_matches_serial(tmp_path, monkeypatch):
    cfg = _state_study()
    serial = study.run_study(cfg, tmp_path / "serial")
    monkeypatch.setenv("CURVECTRL_THREADS", "3")
    threaded = study.run_study(cfg, tmp_path / "threaded")
    assert (serial / "eoc.csv").read_bytes() == (threaded / "eoc.csv").read_bytes()


def test_control_study_records_solver_runs(tmp_path):
    cfg = config.parse_config(
        {
            "domain": {"n": 2, "levels": 2},
            "time": {"M": 2},
            "reference": {"extra_levels": 1},
            "control": {"alpha": 0.1, "qa": -1.0, "qb": 1.0},
            "data": {"uhat_expr": "sin(pi*x)*sin(pi*y)"},
        }
    )
    out = study.run_study(cfg, tmp_path)
    rows = _rows(out / "eoc.csv")
    assert all(float(r["err_control"]) >= 0.0 for r in rows)
    metadata = json.loads((out / "metadata.json").read_text())
    assert len(metadata["solver"]) == 3
    assert all(run["converged"] for run in metadata["solver"])


def test_forward_study_against_exact_solution(tmp_path):
    cfg = config.parse_config(
        {
            "domain": {"n": 4, "levels": 3},
            "time": {"M": 16, "coupling": "h2"},
            "data": {
                "f_expr": "(1 + 2*pi^2*t)*sin(pi*x)*sin(pi*y)",
                "exact_expr": "t*sin(pi*x)*sin(pi*y)",
            },
            "study": {"mode": "forward"},
        }
    )
    out = study.run_study(cfg, tmp_path)
    rows = _rows(out / "eoc.csv")
    assert rows[0]["err_control"] == "nan"
    assert 1.7 <= float(rows[-1]["eoc_state"]) <= 2.3
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["reference_level"] is None


def _control_study(curve, n=4, extra_levels=2, timings=True):
    return config.parse_config(
        {
            "domain": {"n": n, "levels": 2},
            "time": {"M": 4, "coupling": "h2"},
            "reference": {"extra_levels": extra_levels},
            "curve": curve,
            "control": {"alpha": 1.0, "qa": -0.5, "qb": 0.5},
            "data": {"uhat_expr": "sin(pi*x)*sin(pi*y)*sin(2*pi*t)"},
            "solver": {"tol": 1e-9},
            "output": {"timings": timings},
        }
    )


@pytest.mark.parametrize("curve", [{"kind": "circle"}, {"kind": "fixed"}], ids=["circle", "fixed"])
def test_control_study_converges_at_second_order(tmp_path, curve):
    out = study.run_study(_control_study(curve), tmp_path)
    rows = _rows(out / "eoc.csv")
    assert rows[0]["eoc_control"] == ""
    assert 1.4 <= float(rows[-1]["eoc_control"]) <= 2.8
    metadata = json.loads((out / "metadata.json").read_text())
    assert all(run["converged"] and run["residual"] <= 1e-8 for run in metadata["solver"])


def test_state_study_l2l1_rate(tmp_path):
    cfg = config.parse_config(
        {
            "domain": {"n": 4, "levels": 2},
            "time": {"M": 4, "coupling": "h2"},
            "reference": {"extra_levels": 2},
            "curve": {"kind": "circle"},
            "control": {"q_expr": "1 + sin(2*pi*t)"},
            "study": {"mode": "state"},
        }
    )
    rows = _rows(study.run_study(cfg, tmp_path) / "eoc.csv")
    assert 1.4 <= float(rows[-1]["eoc_state_l2l1"]) <= 2.8
    assert float(rows[-1]["err_state_l2l1"]) < float(rows[0]["err_state_l2l1"])


def test_fixed_curve_control_study_reruns_are_byte_identical(tmp_path):
    cfg = _control_study({"kind": "fixed"}, n=2, extra_levels=1, timings=False)
    first = study.run_study(cfg, tmp_path / "a")
    second = study.run_study(cfg, tmp_path / "b")
    for name in ["eoc.csv", "metadata.json", "config.yaml"]:
        assert (first / name).read_bytes() == (second / name).read_bytes()
