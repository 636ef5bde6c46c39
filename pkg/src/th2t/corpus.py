"""Benchmark problem ingestion and easy/hard difficulty bucketing."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

SOURCES = ("gsm8k", "math", "aime", "omnimath", "custom")
SPLITS = ("train", "test")

EASY = "easy"
HARD = "hard"
EXCLUDED = "excluded"

#: sources whose records must carry a native difficulty level
_LEVEL_REQUIRED = {"math", "omnimath"}


class IngestError(Exception):
    """Raised when an input file cannot be read at all."""


class DifficultyError(Exception):
    """Raised when a problem lacks the level field its source requires."""


@dataclass(frozen=True)
class Problem:
    id: str
    source: str
    question: str
    reference_answer: str
    raw_level: float | None = None
    split: str = "train"


@dataclass
class ProblemSet:
    problems: list[Problem] = field(default_factory=list)
    skipped: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def by_split(self, split: str) -> list[Problem]:
        return [p for p in self.problems if p.split == split]


def _validate_record(record: dict, seen_ids: set[str]) -> Problem | str:
    """Turn one raw record into a Problem, or return a diagnostic string."""
    pid = str(record.get("id", "")).strip()
    if not pid:
        return "record missing 'id'"
    if pid in seen_ids:
        return f"duplicate id '{pid}'"
    source = str(record.get("source", "")).strip()
    if source not in SOURCES:
        return f"record '{pid}': unknown source '{source}'"
    question = str(record.get("question", "") or "")
    if not question.strip():
        return f"record '{pid}': empty question"
    answer = record.get("answer", record.get("reference_answer"))
    if answer is None or not str(answer).strip():
        return f"record '{pid}': missing 'answer'"
    level = record.get("level", record.get("raw_level"))
    raw_level: float | None = None
    if level is not None and str(level) != "":
        try:
            raw_level = float(level)
        except (TypeError, ValueError):
            return f"record '{pid}': non-numeric level '{level}'"
    if source in _LEVEL_REQUIRED and raw_level is None:
        return f"record '{pid}': source '{source}' requires a level"
    if source == "math" and not 1 <= raw_level <= 5:
        return f"record '{pid}': math level {raw_level} outside 1-5"
    split = str(record.get("split", "train") or "train")
    if split not in SPLITS:
        return f"record '{pid}': unknown split '{split}'"
    return Problem(
        id=pid,
        source=source,
        question=question,
        reference_answer=str(answer),
        raw_level=raw_level,
        split=split,
    )


def _iter_records(path: Path, fmt: str):
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, f"line {lineno}: invalid JSON ({exc.msg})"
    elif fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, dict(row)
    else:
        raise IngestError(f"unsupported format '{fmt}'")


def ingest_dataset(path: str | Path, fmt: str = "jsonl") -> ProblemSet:
    """Load problems from a JSONL or CSV file.

    Malformed records are skipped with a diagnostic; an unreadable file is
    fatal.  An empty file yields an empty set with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    try:
        result = ProblemSet()
        seen: set[str] = set()
        for lineno, record in _iter_records(path, fmt):
            if isinstance(record, str):
                result.skipped += 1
                result.diagnostics.append(record)
                continue
            parsed = _validate_record(record, seen)
            if isinstance(parsed, str):
                result.skipped += 1
                result.diagnostics.append(f"line {lineno}: {parsed}")
                continue
            seen.add(parsed.id)
            result.problems.append(parsed)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    if not result.problems and not result.skipped:
        result.diagnostics.append(f"{path} contains no records")
        logger.warning("%s contains no records", path)
    for diag in result.diagnostics:
        logger.info("ingest: skipped %s", diag)
    return result


def assign_difficulty(problem: Problem, policy: str) -> str:
    """Map a problem to easy/hard/excluded under the train or eval policy.

    Pure function of (source, raw_level, policy).  Sources that require a
    level raise DifficultyError when it is absent.
    """
    if policy not in ("train", "eval"):
        raise ValueError(f"unknown policy '{policy}'")
    source = problem.source
    if source in _LEVEL_REQUIRED and problem.raw_level is None:
        raise DifficultyError(f"problem '{problem.id}' ({source}) has no difficulty level")

    if source == "gsm8k":
        return EASY
    if source == "aime":
        return HARD
    if source == "math":
        level = int(math.floor(problem.raw_level))
        if policy == "train":
            return HARD if 3 <= level <= 5 else EXCLUDED
        # Under the eval policy level 3 carries no gold easy/hard label; it is
        # excluded from cognition scoring and treated as hard elsewhere.
        if level <= 2:
            return EASY
        if level >= 4:
            return HARD
        return EXCLUDED
    if source == "omnimath":
        # Published difficulties are fractional; floor before the range test.
        level = int(math.floor(problem.raw_level))
        if 1 <= level <= 2:
            return EASY
        if 4 <= level <= 5:
            return HARD
        return EXCLUDED
    # custom problems carry no difficulty convention
    return EXCLUDED


def split_by_difficulty(problems: list[Problem], policy: str) -> tuple[list[Problem], list[Problem]]:
    """Partition problems into (easy, hard), dropping excluded ones."""
    easy: list[Problem] = []
    hard: list[Problem] = []
    for problem in problems:
        label = assign_difficulty(problem, policy)
        if label == EASY:
            easy.append(problem)
        elif label == HARD:
            hard.append(problem)
    return easy, hard


def write_problems(problems: list[Problem], path: str | Path) -> None:
    """Write problems in the canonical problems.jsonl schema."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in problems:
            record = {
                "id": p.id,
                "source": p.source,
                "question": p.question,
                "answer": p.reference_answer,
                "split": p.split,
            }
            if p.raw_level is not None:
                record["level"] = p.raw_level
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
