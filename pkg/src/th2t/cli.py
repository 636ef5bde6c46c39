"""Command-line pipeline: one verb per stage.

Exit codes: 0 success, 1 completed with partial per-item failures, 2 fatal.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import Config, ConfigError, load_config
from .corpus import IngestError, ingest_dataset, split_by_difficulty, write_problems
from .evaluation import EvalReport, EvaluationError, evaluate_run
from .gateway import Gateway, GatewayError
from .reporting import ReportError, compare_reports, emit_report
from .stage1 import (
    STAGE1_FILENAME,
    DatasetBuildError,
    build_pools,
    build_stage1_dataset,
    overlap_ratio,
    read_dataset,
    read_pool,
    write_dataset,
    write_pool,
)
from .stage2 import MODE_LLM, MODE_RULE, compose_stage2

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2

STAGE2_FILENAME = "sft_stage2.jsonl"

_FATAL = (ConfigError, IngestError, DatasetBuildError, GatewayError, EvaluationError, ReportError, OSError, ValueError)

logger = logging.getLogger(__name__)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--cache-dir", type=click.Path(), default=None, help="Response cache directory.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--parallelism", type=int, default=4, show_default=True)
@click.option("--mock", is_flag=True, default=False, help="Use the fixture transport from the config.")
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config_path, cache_dir, seed, parallelism, mock, verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path,
        cache_dir=cache_dir,
        seed=seed,
        parallelism=parallelism,
        mock=mock,
    )


def _load_config(ctx) -> Config:
    return load_config(ctx.obj["config_path"])


def _gateway(ctx, config: Config) -> Gateway:
    return Gateway.from_config(config, cache_dir=ctx.obj["cache_dir"], mock=ctx.obj["mock"])


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_FATAL)


@main.command()
@click.argument("path", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write normalized problems here.")
def ingest(path, fmt, out):
    """Validate and normalize a problems file."""
    try:
        problems = ingest_dataset(path, fmt)
        if out:
            write_problems(problems.problems, out)
    except _FATAL as exc:
        _fail(str(exc))
    click.echo(f"kept {len(problems)} problem(s), skipped {problems.skipped}")
    for diag in problems.diagnostics:
        click.echo(f"  {diag}", err=True)
    sys.exit(EXIT_PARTIAL if problems.skipped else EXIT_OK)


@main.command()
@click.option("--problems", "problems_path", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="train", show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def collect(ctx, problems_path, split, out_dir):
    """Query both models on the training corpus and write correct-response pools."""
    try:
        config = _load_config(ctx)
        gateway = _gateway(ctx, config)
        problem_set = ingest_dataset(problems_path)
        selected = problem_set.by_split(split)
        q0, q1 = split_by_difficulty(selected, "train")
        if not q0 or not q1:
            _fail(f"need both easy and hard problems; got {len(q0)} easy / {len(q1)} hard")
        p0s, p0l, p1l = build_pools(q0, q1, gateway, config, parallelism=ctx.obj["parallelism"])

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        problems_by_id = {p.id: p for p in selected}
        write_pool(p0s, problems_by_id, out / "short_cot_q0.jsonl")
        write_pool(p0l, problems_by_id, out / "long_cot_q0.jsonl")
        write_pool(p1l, problems_by_id, out / "long_cot_q1.jsonl")

        try:
            overlap = overlap_ratio(p0s, p0l)
        except ValueError:
            overlap = None
        failures = {**p0s.failures, **p0l.failures, **p1l.failures}
        manifest = {
            "easy_problems": len(q0),
            "hard_problems": len(q1),
            "pools": {
                "short_cot_q0": {
                    "file": "short_cot_q0.jsonl",
                    "collected": len(p0s.entries),
                    "correct": len(p0s.correct_ids),
                    "rejected_ids": sorted(set(p0s.entries) - p0s.correct_ids),
                },
                "long_cot_q0": {
                    "file": "long_cot_q0.jsonl",
                    "collected": len(p0l.entries),
                    "correct": len(p0l.correct_ids),
                    "rejected_ids": sorted(set(p0l.entries) - p0l.correct_ids),
                },
                "long_cot_q1": {
                    "file": "long_cot_q1.jsonl",
                    "collected": len(p1l.entries),
                    "correct": len(p1l.correct_ids),
                    "rejected_ids": sorted(set(p1l.entries) - p1l.correct_ids),
                },
            },
            "draft_correct_total": len(p0s.correct_ids) + len(p1l.correct_ids),
            "overlap_ratio": overlap,
            "needs_review_ids": sorted(p0s.needs_review_ids | p0l.needs_review_ids | p1l.needs_review_ids),
            "generation_failures": {pid: failures[pid] for pid in sorted(failures)},
        }
        (out / "pools_manifest.json").write_text(
            json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except _FATAL as exc:
        _fail(str(exc))
    click.echo(
        f"pools: short_cot {len(p0s.correct_ids)}/{len(q0)} correct, "
        f"long_cot easy {len(p0l.correct_ids)}/{len(q0)}, "
        f"long_cot hard {len(p1l.correct_ids)}/{len(q1)}"
        + (f", overlap {overlap:.3f}" if overlap is not None else "")
    )
    sys.exit(EXIT_PARTIAL if failures else EXIT_OK)


@main.command("build-stage1")
@click.option("--pools-dir", type=click.Path(), required=True)
@click.option("--target-size", type=int, required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def build_stage1(ctx, pools_dir, target_size, out_dir):
    """Assemble the balanced difficulty dataset from collected pools."""
    try:
        config = _load_config(ctx)
        pools = Path(pools_dir)
        p0s, easy_problems = read_pool(pools / "short_cot_q0.jsonl", "short_cot", config)
        p1l, hard_problems = read_pool(pools / "long_cot_q1.jsonl", "long_cot", config)
        problems = {**easy_problems, **hard_problems}
        dataset = build_stage1_dataset(
            p0s, p1l, problems, target_size=target_size, seed=ctx.obj["seed"], config=config
        )
        path = write_dataset(dataset, out_dir, STAGE1_FILENAME, stage=1)
    except _FATAL as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(dataset.samples)} samples to {path}")
    sys.exit(EXIT_OK)


@main.command("build-stage2")
@click.option("--stage1-dir", type=click.Path(), required=True)
@click.option("--problems", "problems_path", type=click.Path(), required=True,
              help="Problems file for reference answers (emission re-check).")
@click.option("--judge-mode", type=click.Choice([MODE_RULE, MODE_LLM]), default=MODE_RULE, show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def build_stage2(ctx, stage1_dir, problems_path, judge_mode, out_dir):
    """Refine the hard half: judge chunks, truncate redundancy, simulate loops."""
    try:
        config = _load_config(ctx)
        problem_set = ingest_dataset(problems_path)
        problems = {p.id: p for p in problem_set}
        stage1 = read_dataset(Path(stage1_dir) / STAGE1_FILENAME, problems)
        gateway = _gateway(ctx, config) if judge_mode == MODE_LLM else None
        dataset = compose_stage2(
            stage1, seed=ctx.obj["seed"], judge_mode=judge_mode, gateway=gateway, config=config
        )
        path = write_dataset(dataset, out_dir, STAGE2_FILENAME, stage=2)
    except _FATAL as exc:
        _fail(str(exc))
    counts = dataset.manifest["counts"]
    click.echo(
        f"wrote {len(dataset.samples)} samples to {path} "
        f"(easy {counts['easy']}, untouched {counts['hard_untouched']}, "
        f"redundancy {counts['redundancy_truncated']}, loop {counts['loop_simulated']})"
    )
    for warning in dataset.manifest["warnings"]:
        click.echo(f"  warning: {warning}", err=True)
    sys.exit(EXIT_OK)


@main.command()
@click.option("--problems", "problems_path", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--mode", type=click.Choice(["default", "d_prompt", "nothinking", "forced_prefix_matched", "forced_prefix_unmatched"]), default="default", show_default=True)
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--run-id", default=None)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def evaluate(ctx, problems_path, split, mode, max_new_tokens, run_id, out_dir):
    """Run a benchmark under a prompt mode and score the traces."""
    try:
        config = _load_config(ctx)
        gateway = _gateway(ctx, config)
        problem_set = ingest_dataset(problems_path)
        selected = problem_set.by_split(split)
        graded, report = evaluate_run(
            selected,
            gateway,
            prompt_mode=mode,
            max_new_tokens=max_new_tokens,
            config=config,
            parallelism=ctx.obj["parallelism"],
            run_id=run_id or f"{mode}-{split}",
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "traces.jsonl").open("w", encoding="utf-8") as fh:
            for g in graded:
                fh.write(
                    json.dumps(
                        {
                            "problem_id": g.problem_id,
                            "raw": g.trace.raw,
                            "correct": g.correct,
                            "token_count": g.token_count,
                            "token_counter": g.token_counter,
                            "latency_seconds": g.trace.latency_seconds,
                            "reached_max_length": g.trace.reached_max_length,
                            "gold_label": g.gold_label,
                            "prompt_mode": mode,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except _FATAL as exc:
        _fail(str(exc))
    click.echo(
        f"{report.run_id}: acc {report.accuracy:.4f}, mean tokens {report.mean_tokens:.1f}, "
        f"mean latency {report.mean_latency_seconds:.2f}s "
        f"({report.n_failures} failure(s) of {report.n_problems})"
    )
    sys.exit(EXIT_PARTIAL if report.n_failures else EXIT_OK)


def _load_run_report(path: str) -> EvalReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return EvalReport.from_dict(data)


@main.command()
@click.option("--base", "base_path", type=click.Path(), required=True)
@click.option("--treated", "treated_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), default=None)
def compare(base_path, treated_path, out):
    """Derive reduction/speedup/accuracy-gain between two evaluation runs."""
    try:
        base = _load_run_report(base_path)
        treated = _load_run_report(treated_path)
        comparison = compare_reports(base, treated)
        if out:
            Path(out).write_text(json.dumps(comparison, indent=2) + "\n", encoding="utf-8")
    except _FATAL as exc:
        _fail(str(exc))
    click.echo(
        f"{comparison['base']} -> {comparison['treated']}: "
        f"len reduction {comparison['len_reduction']:.1%}, "
        f"speedup {comparison['speedup']:.2f}x, "
        f"acc gain {comparison['acc_gain']:+.4f}"
    )
    sys.exit(EXIT_OK)


@main.command()
@click.argument("runs", nargs=-1, required=True, type=click.Path())
@click.option("--out-dir", type=click.Path(), required=True)
def report(runs, out_dir):
    """Aggregate run reports into report.json/csv, histogram.csv, summary.txt.

    The first run is the comparison baseline for the rest.
    """
    try:
        reports = [_load_run_report(path) for path in runs]
        comparisons = [compare_reports(reports[0], other) for other in reports[1:]]
        paths = emit_report(reports, comparisons, out_dir)
    except _FATAL as exc:
        _fail(str(exc))
    click.echo("\n".join(str(p) for p in paths.values()))
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
