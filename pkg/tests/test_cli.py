import json
import math
import subprocess
import sys

import pytest

from conftest import EXPECTED_CSV, MINI
from forge_replay import Replay
from forkentropy import forge
from forkentropy.cli import main, parse_row_spec, RowSpecError


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_matrix(path, rows):
    lines = [json.dumps({"fork_id": f"f{i}", "cells": cells}) for i, cells in enumerate(rows)]
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_what_if(out):
    return dict(line.split(None, 1) for line in out.strip().splitlines())


def test_compute_fixture(tmp_path, capsys):
    code, out, _ = run(capsys, "compute", "--dataset", MINI, "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "metrics.csv").read_bytes() == EXPECTED_CSV.read_bytes()
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 7
    assert (tmp_path / "figures" / "acme__widget.entropy.svg").read_text().startswith("<?xml")
    lint = json.loads((tmp_path / "lint.json").read_text())
    assert [f["rule"] for f in lint["acme/widget"]] == ["active_forks", "issues"]
    assert (tmp_path / "snapshots" / "acme__widget.ndjson").exists()


def test_compute_independent_of_jobs(tmp_path, capsys):
    for jobs in (1, 4):
        assert run(capsys, "compute", "--dataset", MINI, "--out", tmp_path / f"j{jobs}", "--jobs", jobs)[0] == 0
    for rel in ("metrics.csv", "metrics.ndjson", "metrics.manifest.json", "lint.json",
                "snapshots/acme__widget.ndjson", "figures/acme__widget.entropy.svg"):
        assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j4" / rel).read_bytes(), rel


def test_entropy_two_rows(tmp_path, capsys):
    m = write_matrix(tmp_path / "m.ndjson", [{"a.txt": 1}, {"a.txt": 2}])
    code, out, _ = run(capsys, "entropy", "--matrix", m)
    assert code == 0 and out.strip() == "0.3160602794"
    code, out, _ = run(capsys, "entropy", "--matrix", m, "--json", "--gamma", "2")
    assert json.loads(out)["value"] == pytest.approx(2 * (1 - math.exp(-2)) / 4)


def test_missing_dataset(tmp_path, capsys):
    code, out, err = run(capsys, "compute", "--dataset", tmp_path / "nope", "--out", tmp_path / "o")
    assert code == 2
    payload = json.loads(err.strip())
    assert payload["kind"] == "dataset_not_found"
    assert set(payload) == {"kind", "message", "context"}
    assert len(err.strip().splitlines()) == 1


class TestWhatIf:
    def test_duplicate_row_redundant(self, tmp_path, capsys):
        m = write_matrix(tmp_path / "m.ndjson", [{"a": 1}, {"a": 1}, {"a": 3}])
        code, out, _ = run(capsys, "what-if", "--matrix", m, "--row", "a=1")
        r = parse_what_if(out)
        assert code == 0 and r["label"] == "redundant" and float(r["delta"]) < 0

    def test_disjoint_row_distinctive(self, tmp_path, capsys):
        m = write_matrix(tmp_path / "m.ndjson", [{"a": 1}, {"a": 1}])
        r = parse_what_if(run(capsys, "what-if", "--matrix", m, "--row", "b=1")[1])
        assert r["label"] == "distinctive" and float(r["delta"]) > 0
        assert float(r["entropy_before"]) == 0.0

    def test_boundary_row(self, tmp_path, capsys):
        m = write_matrix(tmp_path / "m.ndjson", [{"a": 1}, {"a": 3}])
        code, out, _ = run(capsys, "what-if", "--matrix", m, "--row", "a=2", "--gamma", repr(math.log(5 / 3)), "--json")
        r = json.loads(out)
        assert abs(r["delta"]) < 1e-12
        assert r["approximate_delta"] > 0
        assert r["mean_distance"] == pytest.approx(0.4) and r["entropy_before"] == pytest.approx(0.32)

    def test_bad_row_spec(self, tmp_path, capsys):
        m = write_matrix(tmp_path / "m.ndjson", [{"a": 1}])
        code, _, err = run(capsys, "what-if", "--matrix", m, "--row", "a=x")
        assert code == 2 and json.loads(err)["kind"] == "malformed_row_spec"


def test_row_spec_parsing():
    assert parse_row_spec("src/a.c=3, README=1,src/a.c=2") == {"src/a.c": 5, "README": 1}
    for bad in ("", "a", "=3", "a=-1", "a=0"):
        with pytest.raises(RowSpecError):
            parse_row_spec(bad)


def test_print_config_defaults(capsys):
    code, out, _ = run(capsys, "compute", "--print-config")
    cfg = json.loads(out)
    assert code == 0
    assert (cfg["gamma"], cfg["hot_window_days"], cfg["outlier_fraction"], cfg["granularity"]) == (1.0, 90, 0.01, "month")
    assert (cfg["min_active_forks"], cfg["min_issues"], cfg["role_cutoff"]) == (100, 100, "interval_end")


def test_config_file_and_flag_precedence(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"gamma": 2.0, "hot_window_days": 30, "jobs": 3}))
    cfg = json.loads(run(capsys, "compute", "--config", tmp_path / "c.json", "--gamma", "0.5", "--print-config")[1])
    assert (cfg["gamma"], cfg["hot_window_days"], cfg["jobs"]) == (0.5, 30, 3)


@pytest.mark.parametrize("flag, value", [("--gamma", "0"), ("--hot-window-days", "-3"), ("--outlier-fraction", "1.5")])
def test_invalid_knobs(flag, value, capsys):
    code, _, err = run(capsys, "compute", flag, value, "--print-config")
    assert code == 2 and json.loads(err)["kind"] == "invalid_config"


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", "--dataset", MINI)
    summary = json.loads(out)["acme/widget"]
    assert code == 0 and summary["counts"]["commits"] == 23


def test_export_and_report(tmp_path, capsys):
    run(capsys, "compute", "--dataset", MINI, "--out", tmp_path, "--no-figures")
    code, _, _ = run(capsys, "export", "--metrics", tmp_path / "metrics.ndjson", "--out", tmp_path / "reg")
    assert code == 0
    rows = (tmp_path / "reg" / "regression.csv").read_text().splitlines()
    assert len(rows) == 6  # header plus the five months with a fork population
    assert (tmp_path / "reg" / "correlations.csv").read_text().startswith("scope,predictor,outcome,n,rho")
    code, _, _ = run(capsys, "report", "--metrics", tmp_path / "metrics.ndjson", "--out", tmp_path / "rep")
    assert code == 0
    assert (tmp_path / "rep" / "figures" / "acme__widget.outcomes.svg").exists()


def test_fetch_subcommand(tmp_path, capsys, monkeypatch):
    replay = Replay()
    real = forge.fetch
    monkeypatch.setattr(forge, "fetch", lambda plan, out: real(plan, out, replay.transport()))
    code, out, _ = run(capsys, "fetch", "--repo", "octo/tiny", "--api-base-url", replay.base_url, "--out", tmp_path)
    assert code == 0 and json.loads(out)["counts"]["forks"] == 2
    code, out, _ = run(capsys, "validate", "--dataset", tmp_path)
    assert json.loads(out)["octo/tiny"]["cache"]["clean"] is True


def test_fetch_budget_exit_code(tmp_path, capsys, monkeypatch):
    replay = Replay()
    real = forge.fetch
    monkeypatch.setattr(forge, "fetch", lambda plan, out: real(plan, out, replay.transport()))
    code, _, err = run(capsys, "fetch", "--repo", "octo/tiny", "--api-base-url", replay.base_url,
                       "--out", tmp_path, "--max-requests", "3")
    assert code == 3 and json.loads(err)["kind"] == "partial_fetch"


def test_module_entry_point(tmp_path):
    m = write_matrix(tmp_path / "m.ndjson", [{"a.txt": 1}, {"a.txt": 2}])
    proc = subprocess.run([sys.executable, "-m", "forkentropy", "entropy", "--matrix", str(m)],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.strip() == "0.3160602794"


def test_missing_matrix_file_is_invalid_input(tmp_path, capsys):
    code, _, err = run(capsys, "entropy", "--matrix", tmp_path / "absent.ndjson")
    assert code == 2
    assert json.loads(err)["kind"] == "io_failure"


def test_export_rejects_missing_and_malformed_metrics(tmp_path, capsys):
    code, _, err = run(capsys, "export", "--metrics", tmp_path / "absent.ndjson", "--out", tmp_path)
    assert code == 2 and json.loads(err)["kind"] == "io_failure"
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"project_id": "a/b"}\nnot json\n')
    code, _, err = run(capsys, "export", "--metrics", bad, "--out", tmp_path)
    assert code == 2 and json.loads(err)["kind"] == "malformed_record"
