import csv
import json

import pytest

from mavfl.cli import main

CONFIG = """\
seed: 1
rounds: 6
model_bits: 5.0e+6
log_trajectory: true
task:
  kind: quadratic
  samples_per_vehicle: 80
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(CONFIG)
    return p


def _header(path):
    with path.open() as fh:
        return next(csv.reader(fh))


def test_run_writes_all_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(cfg_file), "--out", str(out)]) == 0
    assert _header(out / "metrics.csv") == ["round", "p_r", "global_loss", "global_accuracy",
                                            "cumulative_delay_s", "selected_ids", "survivor_ids"]
    assert _header(out / "delays.csv") == ["round", "vehicle_id", "bw_hz", "rate_bps", "t_comm_s", "t_comp_s",
                                           "round_duration_s"]
    assert _header(out / "selection.csv") == ["round", "policy", "candidate_count", "chosen_ids", "ucb_index",
                                              "round_utility"]
    assert _header(out / "trajectory.csv") == ["step", "time_s", "vehicle_id", "position_m", "velocity_mps",
                                               "zone"]
    assert _header(out / "curves.csv")[:2] == ["policy", "seed"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 6 and summary["policy"] == "DUCB"
    assert len((out / "metrics.csv").read_text().splitlines()) == 7


def test_overrides_applied(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(cfg_file), "--out", str(out), "--policy", "CBS", "--rounds", "3",
                 "--velocity-kmh", "80", "--k0", "2", "--seed", "9", "--task", "logistic"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert (s["policy"], s["rounds"], s["velocity_kmh"], s["seed"]) == ("CBS", 3, 80.0, 9)
    with (out / "metrics.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(len(r["selected_ids"].split()) <= 2 for r in rows)


def test_run_is_byte_identical(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(cfg_file), "--out", str(a)])
    main(["run", str(cfg_file), "--out", str(b)])
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


@pytest.mark.parametrize("text", ["rounds: -1\n", "bogus: 1\n", "selection: {k0: 0}\n", "rounds: [\n"])
def test_config_errors_exit_2(tmp_path, text, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    assert main(["run", str(p)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2


def test_bad_policy_override_exit_2(cfg_file):
    assert main(["run", str(cfg_file), "--policy", "greedy"]) == 2
    assert main(["sweep", str(cfg_file), "--policies", "DUCB,greedy"]) == 2


def test_sweep_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", str(cfg_file), "--seeds", "2", "--policies", "DUCB,CBS", "--out", str(out)]) == 0
    rows = (out / "curves.csv").read_text().splitlines()
    # 2 seeds x 6 rounds per policy
    assert len(rows) == 1 + 2 * 2 * 6
    report = json.loads((out / "summary.json").read_text())
    assert set(report["policies"]) == {"DUCB", "CBS"} and report["seeds"] == [1, 2]
    assert (out / "runs" / "CBS_seed2" / "metrics.csv").exists()


def test_theory_command(cfg_file, tmp_path):
    out = tmp_path / "t"
    assert main(["theory", str(cfg_file), "--out", str(out), "--trials", "10000"]) == 0
    rep = json.loads((out / "theory.json").read_text())
    assert rep["drift_bound"]["holds"] and rep["rate_bound"]["holds"]
