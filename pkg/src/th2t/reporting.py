"""Comparison arithmetic (length reduction, latency speedup, accuracy gain)
and machine/human-readable report emission."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .evaluation import EvalReport


class ReportError(Exception):
    pass


def compute_reduction_speedup(base: EvalReport, treated: EvalReport) -> dict:
    """Derived comparison cells between a baseline run and a treated run."""
    if (
        base.problems_digest
        and treated.problems_digest
        and base.problems_digest != treated.problems_digest
    ):
        raise ReportError("reports cover different problem sets")
    if base.mean_tokens == 0:
        raise ReportError("baseline mean token length is zero")
    if base.mean_latency_seconds == 0 or treated.mean_latency_seconds == 0:
        raise ReportError("latency must be non-zero to compute a speedup")
    return {
        "len_reduction": 1.0 - treated.mean_tokens / base.mean_tokens,
        "speedup": base.mean_latency_seconds / treated.mean_latency_seconds,
        "acc_gain": treated.accuracy - base.accuracy,
    }


def compare_reports(base: EvalReport, treated: EvalReport) -> dict:
    metrics = compute_reduction_speedup(base, treated)
    return {"base": base.run_id, "treated": treated.run_id, **metrics}


_CSV_COLUMNS = [
    "run_id",
    "prompt_mode",
    "n_problems",
    "n_failures",
    "accuracy",
    "mean_tokens",
    "mean_latency_seconds",
    "cognition_rate",
    "reflection_overall",
    "reflection_correct",
    "reflection_incorrect",
    "loop_overall",
    "loop_correct",
    "loop_incorrect",
    "token_counter",
]


def _csv_row(report: EvalReport) -> dict:
    return {
        "run_id": report.run_id,
        "prompt_mode": report.prompt_mode,
        "n_problems": report.n_problems,
        "n_failures": report.n_failures,
        "accuracy": report.accuracy,
        "mean_tokens": report.mean_tokens,
        "mean_latency_seconds": report.mean_latency_seconds,
        "cognition_rate": "" if report.cognition_rate is None else report.cognition_rate,
        "reflection_overall": _blank(report.reflection_stats.overall),
        "reflection_correct": _blank(report.reflection_stats.correct),
        "reflection_incorrect": _blank(report.reflection_stats.incorrect),
        "loop_overall": _blank(report.loop_ratio.overall),
        "loop_correct": _blank(report.loop_ratio.correct),
        "loop_incorrect": _blank(report.loop_ratio.incorrect),
        "token_counter": report.token_counter,
    }


def _blank(value: float | None):
    return "" if value is None else value


def _summary_lines(reports: Sequence[EvalReport], comparisons: Sequence[dict]) -> list[str]:
    lines = [
        f"{'run':<24}{'mode':<26}{'acc':>8}{'len':>10}{'latency':>10}{'cognition':>11}",
        "-" * 89,
    ]
    for r in reports:
        cognition = f"{r.cognition_rate:.3f}" if r.cognition_rate is not None else "-"
        lines.append(
            f"{r.run_id:<24}{r.prompt_mode:<26}{r.accuracy:>8.4f}"
            f"{r.mean_tokens:>10.1f}{r.mean_latency_seconds:>10.2f}{cognition:>11}"
        )
    if comparisons:
        lines.append("")
        lines.append("comparisons (treated vs base):")
        for c in comparisons:
            lines.append(
                f"  {c['base']} -> {c['treated']}: "
                f"acc {c['acc_gain']:+.2%}, len {-c['len_reduction']:+.1%}, "
                f"speedup {c['speedup']:.2f}x"
            )
    return lines


def emit_report(
    reports: Sequence[EvalReport],
    comparisons: Sequence[dict],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write report.json, report.csv, histogram.csv, and a text summary."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ReportError(f"output directory {out_dir} is not writable: {exc}") from exc

    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
        "histogram": out_dir / "histogram.csv",
        "summary": out_dir / "summary.txt",
    }

    payload = {
        "reports": [r.to_dict() for r in reports],
        "comparisons": list(comparisons),
    }
    paths["json"].write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    with paths["csv"].open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(_csv_row(report))

    with paths["histogram"].open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "bucket_low", "bucket_high", "count"])
        for report in reports:
            for bucket in report.length_histogram:
                writer.writerow([report.run_id, bucket["low"], bucket["high"], bucket["count"]])

    paths["summary"].write_text("\n".join(_summary_lines(reports, comparisons)) + "\n", encoding="utf-8")
    return paths


def load_report_file(path: str | Path) -> tuple[list[EvalReport], list[dict]]:
    """Inverse of emit_report for report.json."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    reports = [EvalReport.from_dict(r) for r in data["reports"]]
    return reports, data.get("comparisons", [])
