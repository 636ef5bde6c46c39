from __future__ import annotations

import csv
import json
import os

import pytest

from th2t.evaluation import EvalReport, PartitionStat
from th2t.reporting import (
    ReportError,
    compare_reports,
    compute_reduction_speedup,
    emit_report,
    load_report_file,
)


def _report(run_id, accuracy, mean_tokens, mean_latency, digest="d", histogram=None):
    return EvalReport(
        run_id=run_id,
        prompt_mode="default",
        n_problems=100,
        n_failures=0,
        accuracy=accuracy,
        mean_tokens=mean_tokens,
        mean_latency_seconds=mean_latency,
        cognition_rate=None,
        reflection_stats=PartitionStat(overall=1.0, correct=0.5, incorrect=None),
        loop_ratio=PartitionStat(overall=0.0, correct=0.0, incorrect=None),
        length_histogram=histogram or [{"low": 0, "high": 512, "count": 100}],
        token_counter="provider",
        problems_digest=digest,
    )


# published raw cells for one model/benchmark pair, used as arithmetic fixtures
BASE = _report("baseline", accuracy=0.9151, mean_tokens=1057.5, mean_latency=20.29)
TREATED = _report("treated", accuracy=0.9287, mean_tokens=275.0, mean_latency=3.88)


def test_reduction_and_speedup_to_three_significant_figures():
    metrics = compute_reduction_speedup(BASE, TREATED)
    assert metrics["len_reduction"] == pytest.approx(0.740, abs=5e-4)
    assert metrics["speedup"] == pytest.approx(5.23, abs=5e-3)
    assert metrics["acc_gain"] == pytest.approx(0.0136, abs=5e-5)


def test_identity_comparison():
    metrics = compute_reduction_speedup(BASE, BASE)
    assert metrics["len_reduction"] == 0.0
    assert metrics["speedup"] == 1.0
    assert metrics["acc_gain"] == 0.0


def test_zero_baseline_is_an_error():
    zero_len = _report("z", 0.5, 0.0, 1.0)
    with pytest.raises(ReportError):
        compute_reduction_speedup(zero_len, TREATED)
    zero_latency = _report("z", 0.5, 10.0, 0.0)
    with pytest.raises(ReportError):
        compute_reduction_speedup(zero_latency, TREATED)


def test_mismatched_problem_sets_rejected():
    other = _report("other", 0.9, 100.0, 1.0, digest="different")
    with pytest.raises(ReportError, match="different problem sets"):
        compute_reduction_speedup(BASE, other)


def test_emit_report_files(tmp_path):
    comparison = compare_reports(BASE, TREATED)
    paths = emit_report([BASE, TREATED], [comparison], tmp_path)
    for path in paths.values():
        assert path.exists()

    with paths["csv"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["run_id"] for r in rows] == ["baseline", "treated"]
    assert float(rows[0]["mean_tokens"]) == 1057.5
    assert rows[0]["reflection_incorrect"] == ""  # absent partition stays blank

    with paths["histogram"].open() as fh:
        hist_rows = list(csv.DictReader(fh))
    assert hist_rows[0] == {"run_id": "baseline", "bucket_low": "0", "bucket_high": "512", "count": "100"}

    summary = paths["summary"].read_text()
    assert "baseline" in summary and "5.23x" in summary


def test_report_json_round_trip(tmp_path):
    comparison = compare_reports(BASE, TREATED)
    paths = emit_report([BASE, TREATED], [comparison], tmp_path)
    reports, comparisons = load_report_file(paths["json"])
    assert reports == [BASE, TREATED]
    assert comparisons == [comparison]


def test_single_run_report_without_comparisons(tmp_path):
    paths = emit_report([BASE], [], tmp_path)
    payload = json.loads(paths["json"].read_text())
    assert len(payload["reports"]) == 1
    assert payload["comparisons"] == []
    assert "comparisons" not in paths["summary"].read_text()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory write bits")
def test_unwritable_directory_is_fatal(tmp_path):
    target = tmp_path / "readonly"
    target.mkdir()
    target.chmod(0o500)
    try:
        with pytest.raises(ReportError):
            emit_report([BASE], [], target)
    finally:
        target.chmod(0o700)


def test_emit_report_to_file_path_is_fatal(tmp_path):
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("occupied")
    with pytest.raises(ReportError):
        emit_report([BASE], [], blocker)
