"""Benchmark evaluation: prompt modes, grading, and reasoning-trace metrics
(accuracy, token length, latency, difficulty cognition, reflection counts,
terminal-loop ratios, length histograms)."""

from __future__ import annotations

import hashlib
import logging
import re
import statistics
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .answers import extract_final_answer, is_correct
from .config import Config
from .corpus import EXCLUDED, Problem, assign_difficulty
from .gateway import Gateway, GenerationRequest
from .traces import CAT_EASY, CAT_HARD, REFLECTIVE, Trace, detect_terminal_loop, parse_trace

logger = logging.getLogger(__name__)

PROMPT_MODES = (
    "default",
    "d_prompt",
    "nothinking",
    "forced_prefix_matched",
    "forced_prefix_unmatched",
)

COUNTER_PROVIDER = "provider"
COUNTER_APPROXIMATE = "approximate"
COUNTER_MIXED = "mixed"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class EvaluationError(Exception):
    pass


def approx_token_count(text: str) -> int:
    """Fallback token counter: words and punctuation marks.

    Only used when the provider reports no usage; reports label which counter
    produced their numbers so the two are never silently mixed.
    """
    return len(_TOKEN_RE.findall(text))


@dataclass
class GradedTrace:
    problem_id: str
    trace: Trace
    correct: bool
    token_count: int
    token_counter: str
    gold_label: str  # easy | hard | excluded


@dataclass(frozen=True)
class PartitionStat:
    overall: float | None = None
    correct: float | None = None
    incorrect: float | None = None


@dataclass
class EvalReport:
    run_id: str
    prompt_mode: str
    n_problems: int
    n_failures: int
    accuracy: float
    mean_tokens: float
    mean_latency_seconds: float
    cognition_rate: float | None
    reflection_stats: PartitionStat
    loop_ratio: PartitionStat
    length_histogram: list[dict] = field(default_factory=list)
    token_counter: str = COUNTER_APPROXIMATE
    problems_digest: str = ""
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        data["reflection_stats"] = PartitionStat(**data["reflection_stats"])
        data["loop_ratio"] = PartitionStat(**data["loop_ratio"])
        return cls(**data)


def _gold_label(problem: Problem) -> str:
    return assign_difficulty(problem, "eval")


def _prefix_for(problem: Problem, mode: str, config: Config) -> str | None:
    if mode == "nothinking":
        return config.nothinking_prefix
    if mode in ("forced_prefix_matched", "forced_prefix_unmatched"):
        gold = _gold_label(problem)
        # problems without a gold cognition label are treated as hard here
        is_hard = gold != "easy"
        matched = mode == "forced_prefix_matched"
        use_hard = is_hard if matched else not is_hard
        return config.forced_prefix_hard if use_hard else config.forced_prefix_easy
    return None


def build_request(problem: Problem, mode: str, config: Config, max_new_tokens: int | None = None) -> GenerationRequest:
    if mode not in PROMPT_MODES:
        raise ValueError(f"unknown prompt mode '{mode}'")
    user_prompt = config.solve_template.format(question=problem.question)
    if mode == "d_prompt":
        user_prompt = f"{config.d_prompt_preamble}\n\n{user_prompt}"
    if max_new_tokens is None:
        max_new_tokens = (
            config.aime_max_new_tokens if problem.source == "aime" else config.max_new_tokens
        )
    return GenerationRequest(
        model_role="long_cot",
        system_prompt=config.system_prompt,
        user_prompt=user_prompt,
        assistant_prefix=_prefix_for(problem, mode, config),
        max_new_tokens=max_new_tokens,
    )


def problems_digest(problems: Sequence[Problem]) -> str:
    canonical = "\n".join(sorted(p.id for p in problems))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def evaluate_run(
    problems: Sequence[Problem],
    gateway: Gateway,
    prompt_mode: str = "default",
    max_new_tokens: int | None = None,
    config: Config | None = None,
    parallelism: int = 4,
    run_id: str = "",
) -> tuple[list[GradedTrace], EvalReport]:
    """Generate one trace per problem under a prompt mode and score the run.

    Per-item generation failures are excluded from the metrics and listed in
    the report.  Greedy decoding throughout; the generation budget defaults
    to 8192 tokens (16384 for AIME problems).
    """
    cfg = config or Config()
    if not problems:
        raise EvaluationError("problem set must be non-empty")
    requests = [build_request(p, prompt_mode, cfg, max_new_tokens) for p in problems]
    results = gateway.collect_batch(requests, parallelism=parallelism)

    graded: list[GradedTrace] = []
    failures: list[dict] = []
    for problem, request, result in zip(problems, requests, results):
        if not result.ok:
            failures.append({"problem_id": problem.id, "error": result.error})
            continue
        full_text = (request.assistant_prefix or "") + result.text
        trace = parse_trace(
            full_text,
            problem_id=problem.id,
            reached_max_length=result.reached_max_length,
            latency_seconds=result.latency_seconds,
            keywords=cfg.reflective_keywords,
        )
        correct = is_correct(extract_final_answer(full_text), problem.reference_answer)
        if result.completion_tokens is not None:
            tokens, counter = result.completion_tokens, COUNTER_PROVIDER
        else:
            tokens, counter = approx_token_count(result.text), COUNTER_APPROXIMATE
        graded.append(
            GradedTrace(
                problem_id=problem.id,
                trace=trace,
                correct=correct,
                token_count=tokens,
                token_counter=counter,
                gold_label=_gold_label(problem),
            )
        )

    if not graded:
        raise EvaluationError(f"all {len(problems)} generations failed; no metrics to report")

    counters = {g.token_counter for g in graded}
    token_counter = counters.pop() if len(counters) == 1 else COUNTER_MIXED

    golds = {g.problem_id: g.gold_label for g in graded if g.gold_label != EXCLUDED}
    cognition = difficulty_cognition_rate([g.trace for g in graded], golds, cfg) if golds else None

    report = EvalReport(
        run_id=run_id or prompt_mode,
        prompt_mode=prompt_mode,
        n_problems=len(problems),
        n_failures=len(failures),
        accuracy=sum(1 for g in graded if g.correct) / len(graded),
        mean_tokens=statistics.fmean(g.token_count for g in graded),
        mean_latency_seconds=statistics.fmean(g.trace.latency_seconds for g in graded),
        cognition_rate=cognition,
        reflection_stats=reflection_stats(graded),
        loop_ratio=loop_stats(graded, window=cfg.loop_window, min_repeats=cfg.loop_min_repeats),
        length_histogram=length_histogram(graded, cfg.histogram_bucket_width),
        token_counter=token_counter,
        problems_digest=problems_digest(problems),
        failures=failures,
    )
    return graded, report


def _hypnosis_cognition(trace: Trace, config: Config) -> str:
    """Map a trace's hypnosis to an easy/hard cognition claim via synonyms."""
    if trace.hypnosis is None:
        return "unknown"
    if trace.hypnosis.category in (CAT_EASY, CAT_HARD):
        return "easy" if trace.hypnosis.category == CAT_EASY else "hard"
    body = trace.hypnosis.body.lower()
    easy_hit = any(re.search(rf"(?<!\w){re.escape(s.lower())}(?!\w)", body) for s in config.cognition_easy_synonyms)
    hard_hit = any(re.search(rf"(?<!\w){re.escape(s.lower())}(?!\w)", body) for s in config.cognition_hard_synonyms)
    if easy_hit and not hard_hit:
        return "easy"
    if hard_hit and not easy_hit:
        return "hard"
    return "unknown"


def difficulty_cognition_rate(
    traces: Sequence[Trace],
    gold_labels: dict[str, str],
    config: Config | None = None,
) -> float | None:
    """Share of gold-labelled traces whose hypnosis names the right difficulty.

    A missing hypnosis or an unrecognized category counts as a miss.  Returns
    None when no trace carries a gold label.
    """
    cfg = config or Config()
    total = 0
    matches = 0
    for trace in traces:
        gold = gold_labels.get(trace.problem_id)
        if gold not in ("easy", "hard"):
            continue
        total += 1
        if _hypnosis_cognition(trace, cfg) == gold:
            matches += 1
    if total == 0:
        return None
    return matches / total


def _partition_means(values_by_correct: list[tuple[bool, float]]) -> PartitionStat:
    overall = [v for _, v in values_by_correct]
    correct = [v for ok, v in values_by_correct if ok]
    incorrect = [v for ok, v in values_by_correct if not ok]
    return PartitionStat(
        overall=statistics.fmean(overall) if overall else None,
        correct=statistics.fmean(correct) if correct else None,
        incorrect=statistics.fmean(incorrect) if incorrect else None,
    )


def reflection_stats(graded: Sequence[GradedTrace]) -> PartitionStat:
    """Mean number of reflective chunks per trace, split by correctness.

    Empty partitions report as absent, never as zero.
    """
    pairs = [
        (g.correct, float(sum(1 for c in g.trace.chunks if c.kind == REFLECTIVE)))
        for g in graded
    ]
    return _partition_means(pairs)


def loop_stats(
    graded: Sequence[GradedTrace], window: int = 10, min_repeats: int = 3
) -> PartitionStat:
    """Fraction of traces ending in a terminal loop, split by correctness."""
    pairs = [
        (g.correct, 1.0 if detect_terminal_loop(g.trace, window, min_repeats) else 0.0)
        for g in graded
    ]
    return _partition_means(pairs)


def length_histogram(graded: Sequence[GradedTrace], bucket_width: int = 512) -> list[dict]:
    """Token-length distribution as dense [low, high) buckets from zero."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    if not graded:
        return []
    top = max(g.token_count for g in graded) // bucket_width
    counts = [0] * (top + 1)
    for g in graded:
        counts[g.token_count // bucket_width] += 1
    return [
        {"low": i * bucket_width, "high": (i + 1) * bucket_width, "count": count}
        for i, count in enumerate(counts)
    ]


_PROBE_RE = re.compile(r"\b(Easy|Medium|Hard)\b", re.IGNORECASE)


def probe_difficulty(
    problems: Sequence[Problem],
    gateway: Gateway,
    config: Config | None = None,
    parallelism: int = 4,
) -> dict[str, int]:
    """Ask the model to rate each problem Easy/Medium/Hard; tally the claims.

    Used for the conflation check on original models, which tend to rate
    most problems Medium regardless of the benchmark.
    """
    cfg = config or Config()
    requests = [
        GenerationRequest(
            model_role="long_cot",
            system_prompt=cfg.system_prompt,
            user_prompt=cfg.difficulty_probe_template.format(question=p.question),
            max_new_tokens=cfg.max_new_tokens,
        )
        for p in problems
    ]
    results = gateway.collect_batch(requests, parallelism=parallelism)
    tally = {"easy": 0, "medium": 0, "hard": 0, "unparsed": 0}
    for result in results:
        if not result.ok:
            tally["unparsed"] += 1
            continue
        match = _PROBE_RE.search(result.text)
        if match is None:
            tally["unparsed"] += 1
        else:
            tally[match.group(1).lower()] += 1
    return tally
