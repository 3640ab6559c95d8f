import json
from pathlib import Path

import pytest

from avcsim.cli import main
from avcsim.data import bundle_path, case_path


def run_cli(*argv):
    return main(list(argv))


def test_pf_on_bundled_case(tmp_path, capsys):
    injections = {
        "p_load": {"18": 0.09, "25": 0.42},
        "q_load": {"18": 0.04, "25": 0.2},
        "p_pv": {"13": 0.5},
        "q_pv": {"13": 0.1},
    }
    inj_file = tmp_path / "inj.json"
    inj_file.write_text(json.dumps(injections))
    code = run_cli("pf", "--case", str(case_path("case33")), "--injections", str(inj_file))
    out = capsys.readouterr().out
    assert code == 0
    assert "converged: True" in out
    assert "total_loss" in out
    assert out.count("\n") > 33  # one row per bus


def test_pf_diverged_is_runtime_failure(tmp_path, capsys):
    inj_file = tmp_path / "inj.json"
    inj_file.write_text(json.dumps({"p_load": {"18": 500.0}}))
    code = run_cli("pf", "--case", str(case_path("case33")), "--injections", str(inj_file))
    assert code == 2


def test_pf_bad_case_is_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    inj = tmp_path / "inj.json"
    inj.write_text("{}")
    code = run_cli("pf", "--case", str(bad), "--injections", str(inj))
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_records_and_summary(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code = run_cli(
        "run",
        "--case", str(case_path("case33")),
        "--profiles", str(bundle_path("profiles33")),
        "--controller", "none",
        "--barrier", "l1",
        "--episodes", "2",
        "--seed", "5",
        "--episode-length", "6",
        "--out", str(out_dir),
    )
    assert code == 0
    records = sorted(out_dir.glob("episode_*.jsonl"))
    assert len(records) == 2
    assert (out_dir / "summary.csv").is_file()
    text = (out_dir / "summary.csv").read_text()
    assert text.startswith("method,barrier,episodes,")
    assert "none,l1,2," in text


def test_run_determinism_byte_identical(tmp_path):
    args = lambda out: [
        "run",
        "--case", str(case_path("case33")),
        "--profiles", str(bundle_path("profiles33")),
        "--controller", "random",
        "--episodes", "2",
        "--seed", "9",
        "--episode-length", "5",
        "--out", str(out),
    ]
    assert run_cli(*args(tmp_path / "a")) == 0
    assert run_cli(*args(tmp_path / "b")) == 0
    files_a = sorted((tmp_path / "a").glob("*"))
    files_b = sorted((tmp_path / "b").glob("*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes()


def test_report_recomputes_from_records(tmp_path, capsys):
    out_dir = tmp_path / "out"
    run_cli(
        "run",
        "--case", str(case_path("case33")),
        "--profiles", str(bundle_path("profiles33")),
        "--controller", "none",
        "--episodes", "1",
        "--seed", "3",
        "--episode-length", "6",
        "--out", str(out_dir),
    )
    capsys.readouterr()
    code = run_cli("report", "--records", str(out_dir), "--format", "csv")
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("method,barrier,episodes,")

    code = run_cli("report", "--records", str(out_dir), "--format", "table")
    out = capsys.readouterr().out
    assert code == 0
    assert "CR:" in out


def test_report_empty_dir_fails(tmp_path):
    assert run_cli("report", "--records", str(tmp_path)) == 1


def test_config_file_with_flag_override(tmp_path, capsys):
    config = {
        "case": str(case_path("case33")),
        "profiles": str(bundle_path("profiles33")),
        "controller": "none",
        "episodes": 1,
        "episode_length": 4,
        "seed": 2,
    }
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(config))
    out_dir = tmp_path / "out"
    code = run_cli(
        "run", "--config", str(cfg), "--controller", "droop", "--out", str(out_dir)
    )
    assert code == 0
    summary = (out_dir / "summary.csv").read_text()
    assert "droop,l1,1," in summary  # flag overrode the config's controller


def test_config_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"caes": "typo"}))
    assert run_cli("run", "--config", str(cfg)) == 1


def test_run_requires_case_and_profiles():
    assert run_cli("run", "--controller", "none") == 1


def test_pf_trace_prints_iterations(tmp_path, capsys):
    inj = tmp_path / "inj.json"
    inj.write_text(json.dumps({"p_load": {"18": 0.09}}))
    code = run_cli(
        "pf", "--case", str(case_path("case33")), "--injections", str(inj), "--trace"
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "max|mismatch|" in out
    assert "iter  1" in out


def test_droop_parameters_from_config(tmp_path, capsys):
    # a huge dead-band disables droop: QL must be exactly zero
    config = {
        "case": str(case_path("case33")),
        "profiles": str(bundle_path("profiles33")),
        "controller": "droop",
        "droop_deadband": 0.5,
        "episodes": 1,
        "episode_length": 5,
    }
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(config))
    out_dir = tmp_path / "out"
    assert run_cli("run", "--config", str(cfg), "--out", str(out_dir)) == 0
    summary = (out_dir / "summary.csv").read_text().splitlines()
    header = summary[0].split(",")
    row = summary[1].split(",")
    assert float(row[header.index("ql")]) == 0.0
