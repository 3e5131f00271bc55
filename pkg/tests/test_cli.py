from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time

import pytest

from grilink.cli import mock_config, run
from grilink.mockgri import WorldTransport, generate_world


def _json_lines(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


@pytest.fixture(scope="module")
def small_world():
    return generate_world(21, n_awards=150, n_dois=450)


@pytest.fixture
def workspace(tmp_path, small_world):
    small_world.write_inputs(tmp_path / "inputs")
    (tmp_path / "config.json").write_text(json.dumps(mock_config("http://mock")), encoding="utf-8")
    return tmp_path


def test_normalize_writes_tab_separated_lines(tmp_path, capsys):
    src = tmp_path / "dois.txt"
    src.write_text("https://doi.org/10.1002/ABC\nOE.26.025534\n\n")
    assert run(["normalize", str(src)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == [
        "https://doi.org/10.1002/ABC\t10.1002/abc\tstrip_resolver_prefix,lowercase",
        "OE.26.025534\tNotADoi\tlowercase",
        "\tEmptyInput\t",
    ]


def test_extract_lists_award_ids(tmp_path, capsys):
    src = tmp_path / "grants.txt"
    src.write_text("NSF:ABC-1234567; 1839012\n12345678\n")
    assert run(["extract", str(src)]) == 0
    assert capsys.readouterr().out.splitlines() == ["NSF:ABC-1234567; 1839012\t1234567;1839012", "12345678\t"]


def test_probe_pairs_on_recorded_mock(tmp_path, capsys, reference_server, reference_world):
    pairs = tmp_path / "pairs.tsv"
    rows = ["award_id\tdoi"] + [key.replace("|", "\t") for key in sorted(reference_world.page_lengths)]
    pairs.write_text("\n".join(rows) + "\n")
    code = run(["probe", "--pairs", str(pairs), "--base-url", reference_server.url + "/par", "--thresholds=paper",
                "--checkpoint", str(tmp_path / "ck.jsonl"), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 0
    assert captured.out.strip() == "linked=5 not_linked=6 ambiguous=0 failed=0"
    assert (tmp_path / "out/batch_report.csv").exists()
    assert any(entry.get("stage") == "probe" for entry in _json_lines(captured.err))


def test_probe_pairs_skips_unusable_rows(tmp_path, capsys, reference_world):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("award_id,doi\n2038246,not a doi\n12,10.1234/x\n2038246,10.1029/2023gl104417\n")
    code = run(["probe", "--pairs", str(pairs), "--base-url", "http://mock/par"], inner=WorldTransport(reference_world))
    assert code == 0
    assert capsys.readouterr().out.strip() == "linked=1 not_linked=0 ambiguous=0 failed=0"


def test_all_dry_run_writes_nothing(workspace, capsys):
    before = sorted(p.relative_to(workspace) for p in workspace.rglob("*"))
    assert run(["all", "--config", str(workspace / "config.json"), "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "1. harvest" in out and "5. render" in out
    assert sorted(p.relative_to(workspace) for p in workspace.rglob("*")) == before


def test_usage_errors_exit_2(capsys):
    assert run([]) == 2
    assert run(["all"]) == 2
    assert run(["bogus"]) == 2
    assert run(["probe", "--pairs", "x.csv"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err


def test_operational_errors_exit_1(tmp_path, capsys):
    assert run(["all", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "c.json").write_text(json.dumps({"inputs": {"awards": "nope.xml", "par": "nope.csv"}}))
    assert run(["ingest", "--config", str(tmp_path / "c.json")]) == 1
    (tmp_path / "empty.csv").write_text("")
    assert run(["probe", "--pairs", str(tmp_path / "empty.csv"), "--base-url", "http://mock"]) == 1
    errors = [e for e in _json_lines(capsys.readouterr().err) if e.get("status") == "error"]
    assert len(errors) == 3


def test_unknown_config_key_is_an_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"inptus": {}}))
    assert run(["ingest", "--config", str(tmp_path / "c.json")]) == 1


def test_stages_run_in_isolation_and_match_ground_truth(workspace, small_world, capsys):
    config = str(workspace / "config.json")
    transport = WorldTransport(small_world)
    for stage in ("harvest", "ingest", "probe", "analyze", "render"):
        assert run([stage, "--config", config], inner=transport) == 0, stage
    out = workspace / "out"
    analytics = json.loads((out / "analysis/analytics.json").read_text())
    truth = small_world.ground_truth
    assert analytics["coverage_summary"]["counts"] == truth["category_counts"]
    assert analytics["doi_coverage"]["found_in_par"] == truth["linked_chorus_pairs"]
    assert analytics["doi_coverage"]["total"] == truth["chorus_pairs_in_universe"]
    manifest = json.loads((out / "analysis/manifest.json").read_text())
    assert {"coverage_summary.csv", "doi_coverage.csv"} <= {f["file"] for f in manifest["files"]}
    assert sorted(p.suffix for p in (out / "charts").iterdir()) == [".svg"] * len(list((out / "charts").iterdir()))

    stage_logs = [e for e in _json_lines(capsys.readouterr().err) if e.get("status") == "done"]
    assert [e["stage"] for e in stage_logs] == ["harvest", "ingest", "probe", "analyze", "render"]

    # rerunning one stage leaves its outputs unchanged
    before = (out / "analysis/coverage_summary.csv").read_bytes()
    assert run(["analyze", "--config", config]) == 0
    assert (out / "analysis/coverage_summary.csv").read_bytes() == before


def test_resumed_probe_sends_no_new_requests(workspace, small_world, capsys):
    config = str(workspace / "config.json")
    transport = WorldTransport(small_world)
    for stage in ("harvest", "ingest", "probe"):
        assert run([stage, "--config", config], inner=transport) == 0
    first = capsys.readouterr().out.strip().splitlines()[-1]
    sent = len(transport.mock.request_log)
    assert run(["probe", "--config", config], inner=transport) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == first
    assert len(transport.mock.request_log) == sent


def test_generate_world_command(tmp_path, capsys):
    code = run(["generate-world", "--seed", "4", "--awards", "60", "--dois", "150", "--out", str(tmp_path / "w"),
                "--mix", '{"ChorusOnly": 36, "ParOnly": 14, "Both": 6, "NoReference": 44}'])
    assert code == 0
    config = json.loads((tmp_path / "w/config.json").read_text())
    assert config["services"]["par"]["base_url"] == "http://127.0.0.1:8765/par"
    assert (tmp_path / "w/inputs/awards.xml").exists() and (tmp_path / "w/inputs/par_export.csv").exists()
    world = json.loads((tmp_path / "w/world.json").read_text())
    assert world["ground_truth"]["category_counts"] == {"ChorusOnly": 22, "Both": 4, "ParOnly": 8, "NoReference": 26}


def test_generate_world_bad_mix(tmp_path):
    assert run(["generate-world", "--seed", "1", "--out", str(tmp_path), "--mix", '{"ChorusOnly": 5}']) == 1


def test_serve_mock_stops_on_sigterm(tmp_path):
    env = {**os.environ, "PYTHONUNBUFFERED": "1"}
    proc = subprocess.Popen(
        [sys.executable, "-m", "grilink.cli", "serve-mock", "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
    )
    try:
        line = proc.stdout.readline()
        assert line.startswith("serving reference_tables at http://127.0.0.1:")
        time.sleep(0.1)
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
