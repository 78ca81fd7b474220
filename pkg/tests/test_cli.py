"""CLI: settings precedence, config parsing, subcommand round trips."""

import json
import types

import pytest

from mixserve.cli import (
    DEFAULTS,
    main,
    parse_config_file,
    resolve_settings,
)
from mixserve.errors import InputError
from mixserve.latency import MlpPredictor
from mixserve.workload import read_trace


def _args(**kw):
    ns = types.SimpleNamespace()
    for key in DEFAULTS:
        setattr(ns, key, None)
    ns.config = None
    for k, v in kw.items():
        setattr(ns, k, v)
    return ns


def test_defaults_pass_through():
    s = resolve_settings(_args())
    assert s == DEFAULTS


def test_config_file_overrides_defaults(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("qps = 2.5\npolicy=fcfs\nuse_cache = false  # trailing comment\n\n# full comment\n")
    s = resolve_settings(_args(config=str(cfg)))
    assert s["qps"] == 2.5
    assert s["policy"] == "fcfs"
    assert s["use_cache"] is False
    assert s["workers"] == DEFAULTS["workers"]


def test_env_overrides_config_and_flags_override_env(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("qps=2.0\nworkers=3\n")
    monkeypatch.setenv("MIXSERVE_QPS", "4.0")
    monkeypatch.setenv("MIXSERVE_SEED", "11")
    s = resolve_settings(_args(config=str(cfg)))
    assert s["qps"] == 4.0  # env beats config
    assert s["workers"] == 3  # config survives where env is silent
    assert s["seed"] == 11
    s2 = resolve_settings(_args(config=str(cfg), qps=9.0))
    assert s2["qps"] == 9.0  # flag beats env


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n")
    with pytest.raises(InputError):
        parse_config_file(bad)
    bad.write_text("qps\n")
    with pytest.raises(InputError):
        parse_config_file(bad)
    bad.write_text("qps=abc\n")
    with pytest.raises(InputError):
        parse_config_file(bad)
    bad.write_text("use_cache=maybe\n")
    with pytest.raises(InputError):
        parse_config_file(bad)


def test_verify_subcommand_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert "FAIL" not in out


def test_bench_subcommand(tmp_path, capsys):
    assert main(["bench", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "1high+1low+1med" in out
    assert (tmp_path / "bench.csv").exists()


def test_simulate_writes_all_artifacts(tmp_path, capsys):
    rc = main([
        "simulate", "--out-dir", str(tmp_path / "run"),
        "--n-requests", "12", "--qps", "1.0", "--seed", "3", "--policy", "slo_aware",
    ])
    assert rc == 0
    run = tmp_path / "run"
    for name in ("trace.jsonl", "events.jsonl", "summary.csv", "metrics.json"):
        assert (run / name).exists(), name
    header = (run / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("request_id,resolution_class,arrival_ms")
    blob = json.loads((run / "metrics.json").read_text())
    assert blob["summary"]["n_requests"] == 12
    assert blob["settings"]["qps"] == 1.0


def test_simulate_byte_deterministic(tmp_path):
    argv = lambda d: [
        "simulate", "--out-dir", str(d), "--n-requests", "10",
        "--qps", "1.3", "--seed", "7",
    ]
    assert main(argv(tmp_path / "a")) == 0
    assert main(argv(tmp_path / "b")) == 0
    for name in ("trace.jsonl", "events.jsonl", "summary.csv", "metrics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_accepts_existing_trace(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path / "gen"), "--n-requests", "6"]) == 0
    rc = main([
        "simulate", "--out-dir", str(tmp_path / "replay"),
        "--trace", str(tmp_path / "gen" / "trace.jsonl"),
    ])
    assert rc == 0
    gen = read_trace(tmp_path / "gen" / "trace.jsonl")
    assert len(gen) == 6
    a = json.loads((tmp_path / "gen" / "metrics.json").read_text())["summary"]
    b = json.loads((tmp_path / "replay" / "metrics.json").read_text())["summary"]
    assert a == b


def test_report_aggregates_runs(tmp_path, capsys):
    runs = tmp_path / "runs"
    for qps, policy in [(1.5, "fcfs"), (0.5, "slo_aware")]:
        main([
            "simulate", "--out-dir", str(runs / f"q{qps}-{policy}"),
            "--n-requests", "8", "--qps", str(qps), "--policy", policy,
        ])
    assert main(["report", "--runs", str(runs)]) == 0
    lines = (runs / "report.csv").read_text().splitlines()
    assert lines[0].startswith("run,qps,policy")
    assert len(lines) == 3
    assert lines[1].split(",")[1] == "0.5"  # sorted by qps


def test_report_without_runs_errors(tmp_path, capsys):
    assert main(["report", "--runs", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_train_predictor_round_trip(tmp_path, capsys):
    out = tmp_path / "pred.json"
    rc = main(["train-predictor", "--out", str(out)])
    assert rc == 0
    assert "held-out mean relative error" in capsys.readouterr().out
    m = MlpPredictor.load(out)
    assert m.predict_step_latency({"low": 3}) > 0


def test_numeric_plane_through_cli(tmp_path, monkeypatch):
    monkeypatch.setenv("MIXSERVE_WEIGHT_LOW", "1.0")
    monkeypatch.setenv("MIXSERVE_WEIGHT_MED", "0.0")
    monkeypatch.setenv("MIXSERVE_WEIGHT_HIGH", "0.0")
    rc = main([
        "simulate", "--out-dir", str(tmp_path / "num"), "--plane", "numeric",
        "--n-requests", "3", "--steps", "2", "--qps", "5.0",
    ])
    assert rc == 0
    blob = json.loads((tmp_path / "num" / "metrics.json").read_text())
    assert "cache" in blob["summary"]
