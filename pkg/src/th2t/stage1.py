"""Stage-1 dataset construction: correct-response pools, difficulty-split
drafts, hypnosis injection, and 1:1 balanced emission."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .answers import extract_final_answer, grade_answer, is_correct
from .config import Config
from .corpus import EASY, HARD, Problem, assign_difficulty
from .gateway import Gateway, GenerationRequest
from .traces import HYP_CLOSE, HYP_OPEN, Trace, parse_trace, wrap_think

logger = logging.getLogger(__name__)

VARIANT_NONE = "none"
VARIANT_REDUNDANCY = "redundancy_truncated"
VARIANT_LOOP = "loop_simulated"

STAGE1_FILENAME = "sft_stage1.jsonl"
MANIFEST_FILENAME = "manifest.json"


class DatasetBuildError(Exception):
    pass


@dataclass
class ResponsePool:
    model_role: str
    entries: dict[str, Trace] = field(default_factory=dict)
    correct_ids: set[str] = field(default_factory=set)
    needs_review_ids: set[str] = field(default_factory=set)
    failures: dict[str, str] = field(default_factory=dict)


@dataclass
class SftSample:
    problem_id: str
    question: str
    response: str
    difficulty: str  # easy | hard
    provenance: str  # short_cot | long_cot
    stage2_variant: str = VARIANT_NONE
    reference_answer: str = ""
    determinator_mode: str | None = None
    truncation_index: int | None = None


@dataclass
class SftDataset:
    samples: list[SftSample]
    manifest: dict


def final_answer_statement(answer: str) -> str:
    """Canonical conclusion sentence carrying a known-correct answer."""
    return f"The final answer is \\boxed{{{answer}}}."


def _solve_prompt(problem: Problem, config: Config) -> str:
    return config.solve_template.format(question=problem.question)


def _grade_trace(raw_text: str, problem: Problem) -> tuple[bool, bool]:
    verdict = grade_answer(extract_final_answer(raw_text), problem.reference_answer)
    return verdict.correct, verdict.needs_review


def _collect_pool(
    model_role: str,
    problems: list[Problem],
    gateway: Gateway,
    config: Config,
    parallelism: int,
) -> ResponsePool:
    pool = ResponsePool(model_role=model_role)
    requests = [
        GenerationRequest(
            model_role=model_role,
            system_prompt=config.system_prompt,
            user_prompt=_solve_prompt(p, config),
            max_new_tokens=config.max_new_tokens,
        )
        for p in problems
    ]
    results = gateway.collect_batch(requests, parallelism=parallelism)
    for problem, result in zip(problems, results):
        if not result.ok:
            pool.failures[problem.id] = result.error or "unknown failure"
            logger.warning("generation failed for %s (%s): %s", problem.id, model_role, result.error)
            continue
        trace = parse_trace(
            result.text,
            problem_id=problem.id,
            reached_max_length=result.reached_max_length,
            latency_seconds=result.latency_seconds,
            keywords=config.reflective_keywords,
        )
        pool.entries[problem.id] = trace
        correct, needs_review = _grade_trace(result.text, problem)
        if correct:
            pool.correct_ids.add(problem.id)
        if needs_review:
            pool.needs_review_ids.add(problem.id)
    return pool


def build_pools(
    q0: list[Problem],
    q1: list[Problem],
    gateway: Gateway,
    config: Config | None = None,
    parallelism: int = 4,
) -> tuple[ResponsePool, ResponsePool, ResponsePool]:
    """Query the short-CoT model on the easy set and the long-CoT model on
    both sets, keeping correctness-filtered pools of parsed traces."""
    cfg = config or Config()
    for problem in q0:
        if assign_difficulty(problem, "train") != EASY:
            raise ValueError(f"problem '{problem.id}' in the easy set is not easy under the train policy")
    for problem in q1:
        if assign_difficulty(problem, "train") != HARD:
            raise ValueError(f"problem '{problem.id}' in the hard set is not hard under the train policy")

    p0s = _collect_pool("short_cot", q0, gateway, cfg, parallelism)
    p0l = _collect_pool("long_cot", q0, gateway, cfg, parallelism)
    p1l = _collect_pool("long_cot", q1, gateway, cfg, parallelism)
    return p0s, p0l, p1l


def overlap_ratio(p0s: ResponsePool, p0l: ResponsePool) -> float:
    """Share of the long-CoT model's correct easy answers that the short-CoT
    model also got right."""
    if not p0l.correct_ids:
        raise ValueError("long-CoT pool has no correct answers; overlap undefined")
    return len(p0s.correct_ids & p0l.correct_ids) / len(p0l.correct_ids)


def inject_difficulty_hypnosis(sample: SftSample, config: Config | None = None) -> SftSample:
    """Prefix the response with the difficulty trigger matching its label."""
    cfg = config or Config()
    parsed = parse_trace(sample.response, keywords=cfg.reflective_keywords)
    if parsed.hypnosis is not None:
        raise DatasetBuildError(f"sample '{sample.problem_id}' already carries a hypnosis prefix")
    body = cfg.hypnosis_easy if sample.difficulty == EASY else cfg.hypnosis_hard
    return replace(sample, response=f"{HYP_OPEN}{body}{HYP_CLOSE}{sample.response}")


def pool_digest(pool: ResponsePool) -> str:
    """Content digest over a pool's traces and correctness set."""
    canonical = json.dumps(
        {
            "model_role": pool.model_role,
            "entries": sorted(
                (pid, hashlib.sha256(trace.raw.encode("utf-8")).hexdigest())
                for pid, trace in pool.entries.items()
            ),
            "correct_ids": sorted(pool.correct_ids),
        },
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_stage1_dataset(
    p0s: ResponsePool,
    p1l: ResponsePool,
    problems: dict[str, Problem],
    target_size: int,
    seed: int,
    config: Config | None = None,
) -> SftDataset:
    """Draw a balanced easy/hard dataset from the correct-response pools.

    Easy samples wrap the short-CoT answer in the think-tag layout so both
    halves share one schema; hard samples keep the long-CoT response as-is.
    Every sample gets the difficulty hypnosis and is re-graded at emission.
    """
    cfg = config or Config()
    if not p0s.correct_ids or not p1l.correct_ids:
        raise DatasetBuildError("both pools must contain correct responses")
    quota = target_size // 2
    if quota < 1:
        raise DatasetBuildError("target_size must be at least 2")

    easy_candidates = sorted(p0s.correct_ids)
    hard_candidates = sorted(pid for pid in p1l.correct_ids if p1l.entries[pid].has_think)
    max_balanced = 2 * min(len(easy_candidates), len(hard_candidates))
    if quota > len(easy_candidates) or quota > len(hard_candidates):
        raise DatasetBuildError(
            f"requested {target_size} samples but max balanced size is {max_balanced}"
        )

    rng = random.Random(seed)
    easy_pick = rng.sample(easy_candidates, quota)
    hard_pick = rng.sample(hard_candidates, quota)

    samples: list[SftSample] = []
    for pid in easy_pick:
        problem = problems[pid]
        trace = p0s.entries[pid]
        answer = extract_final_answer(trace.raw)
        response = wrap_think(trace.raw.strip(), final_answer_statement(answer.raw))
        samples.append(
            SftSample(
                problem_id=pid,
                question=problem.question,
                response=response,
                difficulty=EASY,
                provenance="short_cot",
                reference_answer=problem.reference_answer,
            )
        )
    for pid in hard_pick:
        problem = problems[pid]
        trace = p1l.entries[pid]
        samples.append(
            SftSample(
                problem_id=pid,
                question=problem.question,
                response=trace.raw,
                difficulty=HARD,
                provenance="long_cot",
                reference_answer=problem.reference_answer,
            )
        )

    samples = [inject_difficulty_hypnosis(s, cfg) for s in samples]
    for sample in samples:
        if not is_correct(extract_final_answer(sample.response), sample.reference_answer):
            raise DatasetBuildError(
                f"sample '{sample.problem_id}' failed the correctness re-check at emission"
            )

    manifest = {
        "stage": 1,
        "seed": seed,
        "target_size": target_size,
        "easy_count": quota,
        "hard_count": quota,
        "source_digests": {
            "short_cot_pool": pool_digest(p0s),
            "long_cot_pool": pool_digest(p1l),
        },
    }
    return SftDataset(samples=samples, manifest=manifest)


def sample_record(sample: SftSample, stage: int) -> dict:
    record = {
        "problem_id": sample.problem_id,
        "messages": [
            {"role": "user", "content": sample.question},
            {"role": "assistant", "content": sample.response},
        ],
        "difficulty": sample.difficulty,
        "provenance": sample.provenance,
    }
    if stage == 2:
        record["stage2_variant"] = sample.stage2_variant
        record["determinator_mode"] = sample.determinator_mode
        record["m"] = sample.truncation_index
    return record


def write_dataset(dataset: SftDataset, out_dir: str | Path, filename: str, stage: int) -> Path:
    """Emit the dataset JSONL plus its manifest; returns the dataset path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(sample_record(s, stage), ensure_ascii=False) for s in dataset.samples
    ]
    payload = ("\n".join(lines) + "\n") if lines else ""
    data_path = out_dir / filename
    data_path.write_text(payload, encoding="utf-8")

    manifest = dict(dataset.manifest)
    manifest["file"] = filename
    manifest["sample_count"] = len(dataset.samples)
    manifest["dataset_sha256"] = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    (out_dir / MANIFEST_FILENAME).write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    dataset.manifest = manifest
    return data_path


def read_dataset(path: str | Path, problems: dict[str, Problem] | None = None) -> SftDataset:
    """Load an emitted dataset; references are joined back from ``problems``."""
    path = Path(path)
    samples: list[SftSample] = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            question = record["messages"][0]["content"]
            response = record["messages"][1]["content"]
            reference = ""
            if problems and record["problem_id"] in problems:
                reference = problems[record["problem_id"]].reference_answer
            samples.append(
                SftSample(
                    problem_id=record["problem_id"],
                    question=question,
                    response=response,
                    difficulty=record["difficulty"],
                    provenance=record["provenance"],
                    stage2_variant=record.get("stage2_variant", VARIANT_NONE),
                    reference_answer=reference,
                    determinator_mode=record.get("determinator_mode"),
                    truncation_index=record.get("m"),
                )
            )
    manifest = {}
    manifest_path = path.parent / MANIFEST_FILENAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    return SftDataset(samples=samples, manifest=manifest)


def write_pool(
    pool: ResponsePool, problems: dict[str, Problem], path: str | Path
) -> None:
    """Emit correct traces only; rejected and failed ids go to the manifest,
    never their content."""
    path = Path(path)
    records = []
    for pid in sorted(pool.correct_ids):
        trace = pool.entries[pid]
        problem = problems[pid]
        records.append(
            {
                "problem_id": pid,
                "question": problem.question,
                "reference_answer": problem.reference_answer,
                "source": problem.source,
                "split": problem.split,
                "response": trace.raw,
                "latency_seconds": trace.latency_seconds,
                "reached_max_length": trace.reached_max_length,
            }
        )
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_pool(path: str | Path, model_role: str, config: Config | None = None) -> tuple[ResponsePool, dict[str, Problem]]:
    cfg = config or Config()
    pool = ResponsePool(model_role=model_role)
    problems: dict[str, Problem] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            pid = record["problem_id"]
            problems[pid] = Problem(
                id=pid,
                source=record.get("source", "custom"),
                question=record["question"],
                reference_answer=record["reference_answer"],
                split=record.get("split", "train"),
            )
            pool.entries[pid] = parse_trace(
                record["response"],
                problem_id=pid,
                reached_max_length=record.get("reached_max_length", False),
                latency_seconds=record.get("latency_seconds", 0.0),
                keywords=cfg.reflective_keywords,
            )
            pool.correct_ids.add(pid)
    return pool, problems
