import csv
import io
import json

import pytest

from conftest import small_config
from mlsim.cli import main
from mlsim.harness import (
    SweepSpec,
    apply_axis,
    report_csv,
    run_monte_carlo,
    run_once,
    run_sweep,
    sweep_csv,
    write_traces,
)
from mlsim.metrics import CLASSES, METRICS
from mlsim.policy import MlPolicy
from mlsim.scenario import ScenarioConfig, dump_config


def test_run_length_and_determinism():
    cfg = small_config()
    a, b = run_once(cfg, 0), run_once(cfg, 0)
    assert a.n_steps == 100
    assert a.checksum() == b.checksum()
    assert run_once(cfg, 1).checksum() != a.checksum()


def test_no_vehicles_keeps_floor_toll():
    cfg = ScenarioConfig().replace(n_vehicles=0, t_end=7.5)
    r = run_once(cfg, 0)
    assert (r.tolls == cfg.toll.pi_min).all()
    assert r.tolls.shape == (6, cfg.geometry.n_groups)
    assert r.reports["ALL"].total_vehicle_travel_time == 0.0


def test_traces_do_not_change_results(tmp_path):
    cfg = small_config()
    plain = run_once(cfg, 0)
    traced = run_once(cfg, 0, traces=True)
    assert plain.checksum() == traced.checksum()
    assert traced.n_total.shape == (100, 3, 75)
    # the traced density at step s+1 reflects the moves made in step s
    assert traced.n_total.sum(axis=(1, 2)).max() > 0
    write_traces(traced, cfg, tmp_path)
    headers = {
        "density.csv": "step,lane,cell,n,n_cav,k,q,v",
        "trajectories.csv": "vehicle,step,lane,cell",
        "tolls.csv": "horizon,group,toll_per_cell",
        "lane_changes.csv": "step,vehicle,from_lane,to_lane,forced",
    }
    for name, header in headers.items():
        assert (tmp_path / name).read_text().splitlines()[0] == header


def test_monte_carlo_serial_equals_parallel():
    cfg = small_config(n_iterations=3)
    serial = report_csv(run_monte_carlo(cfg, workers=1))
    parallel = report_csv(run_monte_carlo(cfg, workers=2))
    assert serial == parallel
    out_of_order = run_monte_carlo(cfg, workers=1, iterations=[2, 0, 1])
    assert report_csv(out_of_order) == serial


def test_report_layout():
    mc = run_monte_carlo(small_config(n_iterations=2))
    rows = list(csv.reader(io.StringIO(report_csv(mc))))
    assert rows[0] == ["policy", "class", "iteration", *METRICS]
    assert len(rows) == 1 + len(CLASSES) * (2 + 5)
    assert {r[2] for r in rows[1:]} == {"0", "1", "mean", "median", "sd", "p2.5", "p97.5"}
    assert mc.mean("ALL", "Avg travel time (h)") > 0


def test_policy_sweep_blocks():
    spec = SweepSpec("policy", [p.value for p in MlPolicy], small_config(n_iterations=2, n_vehicles=100))
    results = run_sweep(spec)
    assert len(results) == 8
    rows = list(csv.reader(io.StringIO(sweep_csv("policy", results))))
    assert rows[0] == ["axis", "value", "policy", "class", "metric", "mean", "sd", "p2.5", "p97.5"]
    assert len(rows) == 1 + 8 * len(CLASSES) * len(METRICS)


def test_apply_axis():
    base = ScenarioConfig()
    assert apply_axis(base, "cav_mpr", 0.1).cav_mpr == 0.1
    assert apply_axis(base, "hocav_mpr", 0.3).hocav_rate == 0.3
    assert apply_axis(base, "locav_toll_factor", 0.5).locav_toll_factor == 0.5
    assert apply_axis(base, "policy", "EU3").policy is MlPolicy.EU3
    with pytest.raises(ValueError):
        apply_axis(base, "speed", 1)
    with pytest.raises(ValueError):
        apply_axis(base, "cav_mpr", 1.5)


# ---------------------------------------------------------------- CLI


def write_config(tmp_path, **changes):
    path = tmp_path / "cfg.yaml"
    path.write_text(dump_config(small_config(**changes)))
    return path


def test_cli_simulate(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg), "--policy", "AU1", "--iterations", "2", "--out", str(out), "--traces"])
    assert code == 0
    rows = list(csv.reader((out / "summary.csv").open()))
    assert rows[1][0] == "AU1"
    assert (out / "tolls.csv").exists()


def test_cli_sweep_stdout(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--axis", "locav_toll_factor", "--values", "0,1", "--iterations", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("axis,value")
    assert len(lines) == 1 + 2 * len(CLASSES) * len(METRICS)


def test_cli_fd_table(capsys):
    assert main(["fd-table", "--fractions", "3", "--k-max", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "cav_fraction,k,q,v"
    assert len(lines) == 1 + 3 * 2


def test_cli_analyze(capsys):
    assert main(["analyze-conversion", "--per-trip", "23.1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["dkcr_dnA"] == pytest.approx(1.86, abs=0.02)
    assert doc["annual"] == pytest.approx(11550.0)
    assert set(doc) >= {"shifted_term", "remaining_term", "total"}


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--policy", "XX"],
        ["simulate", "--config", "/nonexistent.yaml"],
        ["analyze-conversion", "--gpl-density", "5"],
        ["sweep", "--axis", "cav_mpr", "--values", "2.0"],
    ],
)
def test_cli_errors_are_machine_readable(argv, capsys):
    assert main(argv) != 0
    err = capsys.readouterr().err.strip().splitlines()[-1]
    doc = json.loads(err)
    assert set(doc) == {"error", "message"}


def test_cli_usage_error_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code != 0
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "UsageError"
