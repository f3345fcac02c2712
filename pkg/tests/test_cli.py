import csv
import io
import json

import pytest

from qsmn.cli import main
from qsmn.sim.metrics import METRICS_COLUMNS


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_outputs(capsys, tmp_path, scenario_dir):
    code, out, _ = run_cli(capsys, "run", "--config", str(scenario_dir / "minimal.yaml"),
                           "--out", str(tmp_path))
    assert code == 0
    for name in ("metrics.csv", "trace.jsonl", "audit.csv"):
        assert (tmp_path / name).stat().st_size > 0
    rows = list(csv.reader(io.StringIO((tmp_path / "metrics.csv").read_text())))
    assert tuple(rows[0]) == METRICS_COLUMNS
    assert rows[-1][0] == "TOTAL"
    for line in (tmp_path / "trace.jsonl").read_text().splitlines():
        json.loads(line)
    assert "delivered 5" in out


def test_missing_config_exit_2(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--config", str(tmp_path / "nope.yaml"))
    assert code == 2 and "not found" in err


def test_invalid_config_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nnetwork:\n  base_stations: [a, a]\n  ues: [u]\n")
    code, _, err = run_cli(capsys, "validate", str(bad))
    assert code == 2 and f"{bad}:3:" in err


def test_usage_error_exit_2(capsys):
    assert main(["run", "--placement", "9"]) == 2
    capsys.readouterr()


def test_unwritable_out_exit_3(capsys, tmp_path, scenario_dir):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run_cli(capsys, "run", "--config", str(scenario_dir / "minimal.yaml"),
                           "--out", str(blocker / "sub"))
    assert code == 3 and "io error" in err


def test_env_var_sets_default_out(capsys, tmp_path, scenario_dir, monkeypatch):
    monkeypatch.setenv("QSMN_OUT", str(tmp_path / "envout"))
    assert main(["run", "--config", str(scenario_dir / "minimal.yaml")]) == 0
    assert (tmp_path / "envout" / "metrics.csv").exists()
    capsys.readouterr()


def test_seed_override_changes_trace_not_schema(capsys, tmp_path, scenario_dir):
    cfg = str(scenario_dir / "minimal.yaml")
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"])
    capsys.readouterr()
    a, b = (tmp_path / "a" / "trace.jsonl").read_text(), (tmp_path / "b" / "trace.jsonl").read_text()
    assert a != b
    head = lambda p: (p / "metrics.csv").read_text().splitlines()[0]  # noqa: E731
    assert head(tmp_path / "a") == head(tmp_path / "b")


def test_stdout_deterministic(capsys, tmp_path, scenario_dir):
    cfg = str(scenario_dir / "mobility_4bs.yaml")
    _, first, _ = run_cli(capsys, "run", "--config", cfg, "--out", str(tmp_path))
    _, second, _ = run_cli(capsys, "run", "--config", cfg, "--out", str(tmp_path))
    assert first == second


def test_compare_placements_summary(capsys, tmp_path, scenario_dir):
    code, out, _ = run_cli(capsys, "compare-placements", "--config",
                           str(scenario_dir / "mobility_4bs.yaml"), "--out", str(tmp_path))
    assert code == 0
    assert "option 1 rekeys = 3, handovers = 3 (equal)" in out
    assert "counts-based" in out and "energy-table-based" in out
    rows = list(csv.DictReader(io.StringIO((tmp_path / "comparison.csv").read_text())))
    assert [r["placement"] for r in rows] == ["1", "2", "3", "all"]


def test_compare_static_ue_differs_only_in_backbone_keys(capsys, tmp_path, scenario_dir):
    run_cli(capsys, "compare-placements", "--config", str(scenario_dir / "minimal.yaml"),
            "--out", str(tmp_path))
    rows = {r["placement"]: r for r in
            csv.DictReader(io.StringIO((tmp_path / "comparison.csv").read_text()))}
    assert {r["handshakes"] for r in rows.values()} == {"1"}
    assert {r["rekeys"] for r in rows.values()} == {"0"}
    assert {r["messages_delivered"] for r in rows.values()} == {"5"}
    assert rows["1"]["keys_consumed_bs_core"] == rows["1"]["keys_consumed_core_dn"] == "0"
    assert rows["2"]["keys_consumed_bs_core"] == "5" and rows["3"]["keys_consumed_core_dn"] == "5"


def test_handshake_trace_matches_golden(capsys, golden):
    code, out, _ = run_cli(capsys, "handshake-trace", "-v")
    assert code == 0
    names = [line.split("  [")[0] for line in out.splitlines() if "  [" in line]
    assert names == ["AUTH Request", "Authentication Challenge", "Authentication Response",
                     "Key Forward"]
    hexes = [line.split()[1] for line in out.splitlines() if line.startswith("  hex ")]
    expected = [line.split()[1] for line in golden("handshake_transcript.txt").splitlines()
                if not line.startswith("session_key_id")]
    assert hexes[:3] == expected
    key_id = golden("handshake_transcript.txt").splitlines()[-1].split()[1]
    assert f"session_key_id {key_id}" in out


def test_handshake_trace_tamper_signature(capsys):
    code, out, _ = run_cli(capsys, "handshake-trace", "--tamper", "signature")
    assert code == 1
    assert out.strip().splitlines()[-1] == "result: Failed (bad signature)"


def test_handshake_trace_tamper_response(capsys):
    code, out, _ = run_cli(capsys, "handshake-trace", "--tamper", "response")
    assert code == 1 and "Failed" in out.splitlines()[-1]


def test_handshake_trace_hybrid_shows_combiner(capsys):
    code, out, _ = run_cli(capsys, "handshake-trace", "--hybrid")
    assert code == 0
    assert "hybrid_combine(dh, ss)" in out


def test_qkd_demo(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "qkd-demo", "--rounds", "2", "--out", str(tmp_path))
    assert code == 0 and "aborted 0/2" in out
    assert (tmp_path / "qkd_round0.csv").read_text().startswith("pulse_index,")
    code, out, _ = run_cli(capsys, "qkd-demo", "--rounds", "2", "--tamper", "qkd",
                           "--out", str(tmp_path))
    assert code == 0 and "aborted 2/2" in out


def test_qkd_demo_rejects_air_tamper(capsys, tmp_path):
    code, _, err = run_cli(capsys, "qkd-demo", "--tamper", "signature", "--out", str(tmp_path))
    assert code == 2


def test_validate_every_shipped_config(capsys, scenario_dir):
    paths = sorted(str(p) for p in scenario_dir.glob("*.yaml"))
    code, out, _ = run_cli(capsys, "validate", *paths)
    assert code == 0 and out.count("ok ") == len(paths)


@pytest.mark.parametrize("flag", ["signature", "qkd"])
def test_run_with_tamper(capsys, tmp_path, scenario_dir, flag):
    code, out, _ = run_cli(capsys, "run", "--config", str(scenario_dir / "minimal.yaml"),
                           "--out", str(tmp_path), "--tamper", flag)
    assert code == 0
    if flag == "signature":
        assert "failed 1" in out
    else:
        assert "compromised links: bs1~core" in out
