import json
import subprocess
import sys

import pytest

from glbandit.cli import main


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def sim_config(tmp_path):
    return _write(tmp_path / "sim.json", {
        "schema_version": 1, "n_arms": 3, "dim": 2, "horizon": 50, "repetitions": 1,
        "tuning_repetitions": 1,
        "policies": {"ddrts": [0.1], "ts_glm": [0.1], "glm_ucb": [0.1]},
    })


@pytest.fixture
def log_file(tmp_path):
    cfg = _write(tmp_path / "gen.json", {"schema_version": 1, "n_arms": 4, "dim": 3})
    path = tmp_path / "log.jsonl"
    assert main(["gen-log", "--config", cfg, "--n-events", "500", "--out", str(path), "--seed", "2"]) == 0
    return path


def test_missing_config_is_usage_error(capsys):
    assert main(["simulate", "--config", "/nonexistent/cfg.json"]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["simulate"]) == 2


def test_unknown_key_is_rejected(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"schema_version": 1, "horizn": 10})
    assert main(["simulate", "--config", cfg]) == 2
    assert "horizn" in capsys.readouterr().err


def test_schema_version_required(tmp_path):
    cfg = _write(tmp_path / "c.json", {"horizon": 10})
    assert main(["simulate", "--config", cfg]) == 2


def test_unknown_policy_option(tmp_path):
    cfg = _write(tmp_path / "c.json", {"schema_version": 1,
                                       "policy_options": {"ddrts": {"lamda": 1.0}}})
    assert main(["simulate", "--config", cfg]) == 2


def test_dry_run_prints_resolved_config(sim_config, tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["simulate", "--config", sim_config, "--dry-run", "--seed", "9", "--out", str(out)]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["seed"] == 9 and resolved["horizon"] == 50
    assert not out.exists()


def test_simulate_writes_parseable_artifacts(sim_config, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", sim_config, "--out", str(out), "--jobs", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["policies"]) == {"ddrts", "ts_glm", "glm_ucb"}
    rows = (out / "ddrts_seed0.csv").read_text().splitlines()
    assert rows[0].startswith("t,regret,cum_regret") and len(rows) == 51


def test_simulate_byte_identical(sim_config, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", sim_config, "--out", str(out), "--seed", "5", "--jobs", "1"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_replay_logged_policy_recovers_click_rate(log_file, tmp_path, capsys):
    cfg = _write(tmp_path / "r.json", {"schema_version": 1, "policy": "logged"})
    assert main(["replay", "--config", cfg, "--log", str(log_file)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["matched"] == res["events"] == 500
    assert res["ctr"] == pytest.approx(res["log_click_rate"])


def test_replay_policy_csv_deterministic(log_file, tmp_path):
    cfg = _write(tmp_path / "r.json", {"schema_version": 1, "policy": "ts_glm", "params": {"v": 0.1}})
    texts = []
    for name in ("a", "b"):
        assert main(["replay", "--config", cfg, "--log", str(log_file), "--seed", "3",
                     "--out", str(tmp_path / name)]) == 0
        texts.append((tmp_path / name / "replay.csv").read_bytes())
    assert texts[0] == texts[1]
    assert texts[0].startswith(b"event,arm,reward,matched,clicks\n")


def test_replay_empty_log(tmp_path, capsys):
    cfg = _write(tmp_path / "r.json", {"schema_version": 1, "policy": "uniform"})
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["replay", "--config", cfg, "--log", str(empty)]) == 1
    assert "no events" in capsys.readouterr().err


def test_replay_malformed_line(tmp_path, capsys):
    cfg = _write(tmp_path / "r.json", {"schema_version": 1, "policy": "uniform"})
    good = json.dumps({"t": 1, "contexts": [[0.1, 0.2], [0.0, 0.1]], "arm": 1, "reward": 0})
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join([good] * 16 + ["{oops"] + [good]) + "\n")
    assert main(["replay", "--config", cfg, "--log", str(path)]) == 1
    assert "line 17" in capsys.readouterr().err


def test_replay_unknown_policy_param(log_file, tmp_path):
    cfg = _write(tmp_path / "r.json", {"schema_version": 1, "policy": "ts_glm", "params": {"alpha": 1}})
    assert main(["replay", "--config", cfg, "--log", str(log_file)]) == 2


def test_diagnose_uniform_ball(tmp_path, capsys):
    cfg = _write(tmp_path / "d.json", {"schema_version": 1, "distribution": "uniform_ball", "dim": 5})
    assert main(["diagnose", "--config", cfg, "--n-samples", "100000", "--seed", "1"]) == 0
    first = capsys.readouterr().out
    value = json.loads(first)["min_eigenvalue"]
    assert abs(value - 1 / 7) <= 0.1 / 7
    assert main(["diagnose", "--config", cfg, "--n-samples", "100000", "--seed", "1"]) == 0
    assert capsys.readouterr().out == first


def test_diagnose_zero_samples(tmp_path):
    cfg = _write(tmp_path / "d.json", {"schema_version": 1, "distribution": "uniform_ball", "dim": 5})
    assert main(["diagnose", "--config", cfg, "--n-samples", "0"]) == 2


def test_gen_log_deterministic(tmp_path):
    cfg = _write(tmp_path / "g.json", {"schema_version": 1, "n_arms": 3, "dim": 2,
                                       "beta_star": [1.0, -1.0]})
    for name in ("a", "b"):
        assert main(["gen-log", "--config", cfg, "--n-events", "50", "--seed", "4",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_gen_log_bad_beta_dimension(tmp_path):
    cfg = _write(tmp_path / "g.json", {"schema_version": 1, "n_arms": 3, "dim": 2,
                                       "beta_star": [1.0]})
    assert main(["gen-log", "--config", cfg, "--n-events", "5", "--out", str(tmp_path / "x")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "glbandit", "diagnose"], capture_output=True,
                          text=True, env={"GLB_LOG_LEVEL": "debug", "PATH": ""})
    assert proc.returncode == 2
    assert "--config is required" in proc.stderr
