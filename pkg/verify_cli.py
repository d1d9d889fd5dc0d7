import sys
import os
import json

import pandas as pd
import pytest

# Add current dir to path
sys.path.append(os.getcwd())

from app.cli import EXIT_CONFIG, EXIT_OK, EXIT_PROPERTY, main


def write_config(path, payload: dict) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def test_gap_check_writes_csv(tmp_path, capsys):
    out = tmp_path / "gap.csv"
    assert main(["gap-check", "--trials", "3", "--M", "2", "4", "--out", str(out)]) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["seed", "M", "rMimo", "cutset", "gap"]
    assert len(frame) == 6
    assert "max_gap=" in capsys.readouterr().out


def test_stability_check_prints_cliques(capsys):
    assert main(["stability-check", "--config", "configs/stability_example.json"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "vertices=6" in out
    assert "inner_bound=" in out


def test_solve_ref_writes_report(tmp_path):
    out = tmp_path / "opt.json"
    assert main(["solve-ref", "--config", "configs/tiny_table.json", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["converged"]
    assert len(report["alpha"]) == 3


def test_simulate_writes_outputs(tmp_path):
    config = write_config(
        tmp_path / "sim.json",
        {
            "network": {"n": 3, "M": 2, "cell_radius_m": 100.0, "cluster_std_m": 5.0, "seed": 4},
            "frames": 20,
            "ewma_window": 10,
            "grid_points": 4,
            "burn_in": 10,
        },
    )
    out = tmp_path / "run"
    code = main(["--threads", "1", "simulate", "--config", config, "--out", str(out), "--baseline", "--trace"])
    assert code == EXIT_OK
    for name in (
        "throughput_cdf.csv",
        "relay_cdf.csv",
        "stream_hist.csv",
        "baseline_throughput_cdf.csv",
        "summary.json",
        "trace.jsonl",
    ):
        assert (out / name).exists(), name
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 20
    first = json.loads(lines[0])
    assert set(first) == {"drop", "t", "schedule", "f_value", "eligible_pair_count"}
    cdf = pd.read_csv(out / "throughput_cdf.csv")
    assert list(cdf.columns) == ["value", "cdf"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cooperative"]["drift_ok"]


def test_scaling_writes_table(tmp_path):
    out = tmp_path / "scaling.csv"
    assert main(["--threads", "1", "scaling", "--n", "3", "5", "--trials", "2", "--out", str(out)]) == EXIT_OK
    assert pd.read_csv(out)["n"].tolist() == [3, 5]


def test_bad_config_exits_with_config_code(tmp_path):
    config = write_config(tmp_path / "bad.json", {"frames": 0})
    assert main(["simulate", "--config", config, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve-ref", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gap-check", "--no-such-flag"])
    assert exc.value.code == 2


def test_optimality_cert_prints_trajectory(capsys):
    # 50 frames is too short to certify; only the report shape is checked
    code = main(["optimality-cert", "--config", "configs/tiny_table.json", "--frames", "50"])
    assert code in (EXIT_OK, EXIT_PROPERTY)
    out = capsys.readouterr().out
    assert "OPT'=" in out
    assert "t=      50" in out
