import csv
import json
import subprocess
import sys

import pytest

from dcbm.cli import main


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_stability_grid_has_27_rows(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("stability: {alpha: 0.075, kp: [1, 5, 10], ki: [0, 0.3, 1], kd: [0, 1, 2]}\n")
    assert main(["stability", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "stability.csv")
    assert len(r) == 27
    assert {x["stable"] for x in r} <= {"True", "False"}


def test_simulate_twice_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--runs", "10", "--seed", "42", "--horizon", "20", "--out", str(out)]) == 0
    for name in ("series.csv", "metrics.csv", "aggregate.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len(rows(a / "metrics.csv")) == 10


def test_simulate_json(tmp_path):
    assert main(["simulate", "--runs", "2", "--horizon", "5", "--format", "json", "--out", str(tmp_path)]) == 0
    reports = json.loads((tmp_path / "reports.json").read_text())
    assert [r["run_index"] for r in reports] == [0, 1]


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_bad_key_exits_2_and_names_it(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("pool: {fee: 0.1}\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "pool.fee" in capsys.readouterr().err


def test_unknown_flag_prints_usage():
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--bogus"])
    assert e.value.code == 2


def test_runtime_error_exits_3(tmp_path, monkeypatch, capsys):
    import dcbm.cli as cli
    from dcbm.errors import SolvencyViolation

    def boom(*a, **k):
        raise SolvencyViolation("epoch 3: policy spend outside [0, T + R]")

    monkeypatch.setattr(cli, "run_batch", boom)
    assert main(["simulate", "--runs", "2", "--out", str(tmp_path)]) == 3
    assert "epoch 3" in capsys.readouterr().err


def test_replay_too_short_is_a_config_error(tmp_path):
    data = tmp_path / "p.csv"
    data.write_text("timestamp,price\n2024-01-01T00:00:00,1.0\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"replay: {{path: {data.name}}}\nhorizon: 5\nruns: 1\n")
    assert main(["replay", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_replay(tmp_path):
    data = tmp_path / "p.csv"
    lines = ["timestamp,price"] + [f"2024-01-01T00:{m:02d}:00,{1 + 0.01 * (m % 3)}" for m in range(12)]
    data.write_text("\n".join(lines) + "\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"replay: {{path: {data.name}}}\nhorizon: 50\nruns: 2\n")
    assert main(["replay", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "series.csv")
    assert len(r) == 2 * 11


def test_ablate_attack_tune(tmp_path):
    assert main(["ablate", "--runs", "5", "--out", str(tmp_path)]) == 0
    assert {x["config"] for x in rows(tmp_path / "ablation.csv")} == {"P", "PI", "PD", "PID"}
    cfg = tmp_path / "c.yaml"
    cfg.write_text("horizon: 40\nattack: {kind: fgsm_flash, eps: 0.01, warmup: 10}\n"
                   "tuning: {kp: [5, 15], ki: [0.3], kd: [1], runs: 2, horizon: 30, warmup: 5}\n")
    assert main(["attack", "--config", str(cfg), "--runs", "5", "--out", str(tmp_path)]) == 0
    att = rows(tmp_path / "attack.csv")
    assert [x["defense"] for x in att] == ["threshold", "dcbm", "dcbm_cert"]
    assert all(float(x["asr"]) + float(x["robustness"]) == 1.0 for x in att)
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "tuning.csv")) == 2


def test_console_script_module():
    r = subprocess.run([sys.executable, "-m", "dcbm.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
