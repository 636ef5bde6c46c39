"""Shared fixture factories: synthetic corpora and canned mock responses."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from th2t.corpus import Problem


def easy_problem(i: int, split: str = "train") -> Problem:
    a, b = 3 + i, 10 + 2 * i
    return Problem(
        id=f"easy-{i:03d}",
        source="gsm8k",
        question=f"Tom has {a} apples and buys {b} more. How many apples does Tom have now?",
        reference_answer=str(a + b),
        split=split,
    )


def hard_problem(j: int, split: str = "train") -> Problem:
    a, b = 5 + j, 7 + j
    return Problem(
        id=f"hard-{j:03d}",
        source="math",
        question=f"Compute ({a} + {b}) * 2.",
        reference_answer=str((a + b) * 2),
        raw_level=float(3 + (j % 3)),
        split=split,
    )


def short_cot_response(problem: Problem, wrong: bool = False) -> str:
    a, b = _easy_terms(problem)
    total = a + b + (1 if wrong else 0)
    return (
        f"Tom starts with {a} apples and buys {b} more, "
        f"so he has {a} + {b} = {a + b}.\n\nThe answer is \\boxed{{{total}}}."
    )


def long_cot_easy_response(problem: Problem) -> str:
    a, b = _easy_terms(problem)
    s = a + b
    return (
        f"<think>\nWe add the two amounts: {a} + {b} = {s}.\n\n"
        f"Wait, recheck: {a} + {b} = {s}, same as before.\n\n"
        f"So the total is {s}.\n</think>\n\n"
        f"The final answer is \\boxed{{{s}}}."
    )


def long_cot_hard_response(problem: Problem, wrong: bool = False) -> str:
    a, b = _hard_terms(problem)
    s = a + b
    t = 2 * s + (1 if wrong else 0)
    return (
        f"<think>\nWe need to evaluate the expression step by step. "
        f"First compute {a} + {b} = {s}.\n\n"
        f"Now double the value: {s} * 2 = {2 * s}.\n\n"
        f"Wait, recheck: {a} + {b} = {s}, same as before.\n\n"
        f"Alternatively, doubling still gives {2 * s}.\n\n"
        f"But the value {2 * s} stands.\n\n"
        f"So the result is {2 * s}.\n</think>\n\n"
        f"The final answer is \\boxed{{{t}}}."
    )


def _easy_terms(problem: Problem) -> tuple[int, int]:
    i = int(problem.id.split("-")[1])
    return 3 + i, 10 + 2 * i


def _hard_terms(problem: Problem) -> tuple[int, int]:
    j = int(problem.id.split("-")[1])
    return 5 + j, 7 + j


@dataclass
class FixtureCorpus:
    problems_path: Path
    responses_path: Path
    config_path: Path
    easy: list[Problem]
    hard: list[Problem]

    @property
    def problems(self) -> list[Problem]:
        return self.easy + self.hard


def write_problems_file(problems: list[Problem], path: Path) -> None:
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
            fh.write(json.dumps(record) + "\n")


def make_fixture_corpus(
    root: Path,
    n_easy: int = 30,
    n_hard: int = 30,
    poisoned_easy: frozenset[int] = frozenset(),
    poisoned_hard: frozenset[int] = frozenset(),
) -> FixtureCorpus:
    """Write a problems file, canned mock responses, and a config using them."""
    easy = [easy_problem(i) for i in range(n_easy)]
    hard = [hard_problem(j) for j in range(n_hard)]

    problems_path = root / "problems.jsonl"
    write_problems_file(easy + hard, problems_path)

    responses_path = root / "mock_responses.jsonl"
    with responses_path.open("w", encoding="utf-8") as fh:
        for i, p in enumerate(easy):
            fh.write(json.dumps({
                "role": "short_cot",
                "match": p.question,
                "text": short_cot_response(p, wrong=i in poisoned_easy),
                "completion_tokens": 40 + i,
                "latency_seconds": 0.5,
            }) + "\n")
            fh.write(json.dumps({
                "role": "long_cot",
                "match": p.question,
                "text": long_cot_easy_response(p),
                "completion_tokens": 90 + i,
                "latency_seconds": 2.0,
            }) + "\n")
        for j, p in enumerate(hard):
            fh.write(json.dumps({
                "role": "long_cot",
                "match": p.question,
                "text": long_cot_hard_response(p, wrong=j in poisoned_hard),
                "completion_tokens": 200 + j,
                "latency_seconds": 6.0,
            }) + "\n")

    config_path = root / "config.yaml"
    config_path.write_text(f"mock_responses: {json.dumps(str(responses_path))}\n", encoding="utf-8")
    return FixtureCorpus(
        problems_path=problems_path,
        responses_path=responses_path,
        config_path=config_path,
        easy=easy,
        hard=hard,
    )


@pytest.fixture
def fixture_corpus(tmp_path: Path) -> FixtureCorpus:
    return make_fixture_corpus(tmp_path)
