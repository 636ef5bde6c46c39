"""Stage-2 refinement of the hard half: chunk judging, redundancy truncation
with an in-trace trigger, loop simulation, and the 50:25:25 composition."""

from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass, replace

from .answers import extract_final_answer, is_correct
from .config import Config
from .corpus import EASY, HARD
from .gateway import Gateway, GatewayError, GenerationRequest
from .stage1 import (
    VARIANT_LOOP,
    VARIANT_NONE,
    VARIANT_REDUNDANCY,
    SftDataset,
    SftSample,
    final_answer_statement,
)
from .traces import HYP_CLOSE, HYP_OPEN, REFLECTIVE, Trace, parse_trace, wrap_think

logger = logging.getLogger(__name__)

CONTRIBUTES = "contributes"
REDUNDANT = "redundant"
LOOP_CANDIDATE = "loop_candidate"

MODE_LLM = "llm_judge"
MODE_RULE = "rule_based"

JUDGE_RETRIES = 2

_NUM_RE = re.compile(r"\d+(?:\.\d+)?")
_EQ_TERM = r"[\w().^×·]+(?:\s*[+\-*/]\s*[\w().^×·]+)*"
_EQ_RE = re.compile(rf"{_EQ_TERM}(?:\s*=\s*{_EQ_TERM})+")
_VERDICT_TOKEN_RE = re.compile(r"\b(REDUNDANT|CONTRIBUTES|LOOP)\b")


class TruncationError(Exception):
    """Truncation request that would not produce a valid, shorter sample."""


@dataclass(frozen=True)
class DeterminatorVerdict:
    chunk_index: int
    verdict: str  # contributes | redundant | loop_candidate
    mode: str  # llm_judge | rule_based
    rationale: str = ""


def _numeric_tokens(text: str) -> set[str]:
    return set(_NUM_RE.findall(text))


def _equations(text: str) -> set[str]:
    found = set()
    for match in _EQ_RE.findall(text):
        normalized = re.sub(r"\s+", "", match).strip(".,;:")
        if "=" in normalized:
            found.add(normalized)
    return found


def _rule_based_verdict(trace: Trace, chunk_index: int) -> DeterminatorVerdict:
    chunk = trace.chunks[chunk_index]
    if chunk.kind != REFLECTIVE:
        return DeterminatorVerdict(chunk_index, CONTRIBUTES, MODE_RULE, "not a reflective chunk")
    prior = "\n\n".join(c.text for c in trace.chunks[:chunk_index])
    new_numbers = _numeric_tokens(chunk.text) - _numeric_tokens(prior)
    new_equations = _equations(chunk.text) - _equations(prior)
    if new_numbers or new_equations:
        introduced = sorted(new_numbers | new_equations)
        return DeterminatorVerdict(
            chunk_index, CONTRIBUTES, MODE_RULE, f"introduces new results: {introduced}"
        )
    return DeterminatorVerdict(
        chunk_index, REDUNDANT, MODE_RULE, "reflective chunk with no new numeric result"
    )


def _parse_judge_reply(text: str) -> str | None:
    match = _VERDICT_TOKEN_RE.search(text.upper())
    if match is None:
        return None
    return {"REDUNDANT": REDUNDANT, "CONTRIBUTES": CONTRIBUTES, "LOOP": LOOP_CANDIDATE}[match.group(1)]


def judge_chunk(
    trace: Trace,
    chunk_index: int,
    mode: str,
    gateway: Gateway | None = None,
    config: Config | None = None,
    question: str = "",
) -> DeterminatorVerdict:
    """Decide whether a chunk moves the reasoning forward or is expendable.

    The judge only ever sees the question and the chunks up to and including
    the candidate: redundancy must be decidable from the past.  Unparseable
    judge replies fail safe to ``contributes`` so ambiguity never truncates.
    """
    cfg = config or Config()
    if not 0 <= chunk_index < len(trace.chunks):
        raise IndexError(f"chunk index {chunk_index} out of range")
    if mode == MODE_RULE:
        return _rule_based_verdict(trace, chunk_index)
    if mode != MODE_LLM:
        raise ValueError(f"unknown judge mode '{mode}'")
    if gateway is None:
        raise ValueError("llm_judge mode requires a gateway")

    chunk = trace.chunks[chunk_index]
    context = "\n\n".join(c.text for c in trace.chunks[:chunk_index]) or "(nothing yet)"
    prompt = cfg.judge_template.format(question=question, context=context, chunk=chunk.text)
    request = GenerationRequest(
        model_role="judge",
        system_prompt="",
        user_prompt=prompt,
        max_new_tokens=cfg.judge_max_new_tokens,
    )
    reply_text = ""
    for attempt in range(1 + JUDGE_RETRIES):
        try:
            result = gateway.generate(request, refresh=attempt > 0)
        except GatewayError as exc:
            logger.warning("judge call failed (attempt %d): %s", attempt + 1, exc)
            continue
        reply_text = result.text
        verdict = _parse_judge_reply(result.text)
        if verdict is not None:
            return DeterminatorVerdict(chunk_index, verdict, MODE_LLM, result.text.strip())
    return DeterminatorVerdict(
        chunk_index,
        CONTRIBUTES,
        MODE_LLM,
        f"unparseable judge reply after {JUDGE_RETRIES} retries: {reply_text[:120]!r}",
    )


def _difficulty_prefix(trace: Trace) -> str:
    if trace.hypnosis is not None and not trace.hyp_inside_think:
        return trace.hypnosis.serialized
    return ""


def apply_redundancy_truncation(sample: SftSample, m: int, config: Config | None = None) -> SftSample:
    """Cut the thoughts at redundant chunk ``m`` and close with the
    redundancy trigger plus a conclusion stating the known-correct answer."""
    cfg = config or Config()
    if m < 1:
        raise TruncationError("m must be >= 1: truncating at 0 would delete all reasoning")
    trace = parse_trace(sample.response, keywords=cfg.reflective_keywords)
    if m >= len(trace.chunks):
        raise TruncationError(f"chunk {m} does not exist (trace has {len(trace.chunks)} chunks)")

    answer = extract_final_answer(sample.response)
    kept = [c.text for c in trace.chunks[:m]]
    marker = f"{HYP_OPEN}{cfg.hypnosis_redundancy}{HYP_CLOSE}"
    new_thoughts = "\n\n".join(kept + [marker])
    if len(new_thoughts.encode("utf-8")) >= len(trace.thoughts.encode("utf-8")):
        raise TruncationError(f"truncating at chunk {m} would not shorten the thoughts")

    response = _difficulty_prefix(trace) + wrap_think(
        new_thoughts, final_answer_statement(answer.raw)
    )
    return replace(
        sample,
        response=response,
        stage2_variant=VARIANT_REDUNDANCY,
        truncation_index=m,
    )


def simulate_loop(
    sample: SftSample, rng_seed: int, repeats: int = 3, config: Config | None = None
) -> SftSample:
    """Replay a mid-trace reflective chunk ``repeats`` times in a row and
    break out with the loop trigger.

    Candidates are reflective chunks in the middle 50% of positions, so the
    simulated loop neither deletes the opening reasoning nor defers the
    break past the point where shorter samples can form.  Ineligible samples
    come back unchanged.
    """
    cfg = config or Config()
    trace = parse_trace(sample.response, keywords=cfg.reflective_keywords)
    chunks = trace.chunks
    n = len(chunks)
    if n < 4:
        return sample
    lo, hi = n // 4, n - n // 4
    eligible = [c.index for c in chunks[lo:hi] if c.kind == REFLECTIVE]
    if not eligible:
        return sample

    m = random.Random(rng_seed).choice(eligible)
    answer = extract_final_answer(sample.response)
    kept = [c.text for c in chunks[: m + 1]] + [chunks[m].text] * (repeats - 1)
    marker = f"{HYP_OPEN}{cfg.hypnosis_loop_break}{HYP_CLOSE}"
    new_thoughts = "\n\n".join(kept + [marker])
    response = _difficulty_prefix(trace) + wrap_think(
        new_thoughts, final_answer_statement(answer.raw)
    )
    return replace(
        sample,
        response=response,
        stage2_variant=VARIANT_LOOP,
        truncation_index=m,
    )


def _derive_seed(seed: int, problem_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{problem_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _truncate_first_redundant(
    sample: SftSample,
    judge_mode: str,
    gateway: Gateway | None,
    cfg: Config,
) -> SftSample | None:
    trace = parse_trace(sample.response, keywords=cfg.reflective_keywords)
    for idx in range(1, len(trace.chunks)):
        verdict = judge_chunk(
            trace, idx, judge_mode, gateway=gateway, config=cfg, question=sample.question
        )
        if verdict.verdict != REDUNDANT:
            continue
        try:
            return apply_redundancy_truncation(sample, idx, cfg)
        except TruncationError:
            continue
    return None


def compose_stage2(
    stage1: SftDataset,
    seed: int,
    judge_mode: str = MODE_RULE,
    gateway: Gateway | None = None,
    config: Config | None = None,
) -> SftDataset:
    """Refine the hard half of a stage-1 dataset into the final mixture.

    Easy samples pass through untouched.  The hard half is split by a seeded
    shuffle into 50% untouched (generation continuity), 25% redundancy-
    truncated at the first redundant verdict, and 25% loop-simulated.  A
    sample that cannot be transformed falls back to untouched with a warning.
    """
    cfg = config or Config()
    easy = [s for s in stage1.samples if s.difficulty == EASY]
    hard = [s for s in stage1.samples if s.difficulty == HARD]

    rng = random.Random(seed)
    shuffled = list(hard)
    rng.shuffle(shuffled)
    n = len(shuffled)
    n_untouched = int(round(n * cfg.stage2_untouched_ratio))
    n_redundancy = int(round(n * cfg.stage2_redundancy_ratio))
    n_loop = n - n_untouched - n_redundancy
    if n_loop < 0:
        raise ValueError("stage-2 ratios sum to more than 1")

    warnings: list[str] = []
    transformations: list[dict] = []
    out_hard: list[SftSample] = []
    counts = {"hard_untouched": 0, "redundancy_truncated": 0, "loop_simulated": 0, "fallback_untouched": 0}

    def record(sample: SftSample, bucket: str) -> None:
        transformations.append(
            {
                "problem_id": sample.problem_id,
                "bucket": bucket,
                "stage2_variant": sample.stage2_variant,
                "m": sample.truncation_index,
                "determinator_mode": sample.determinator_mode,
            }
        )
        out_hard.append(sample)

    for sample in shuffled[:n_untouched]:
        counts["hard_untouched"] += 1
        record(sample, "untouched")

    for sample in shuffled[n_untouched:n_untouched + n_redundancy]:
        transformed = _truncate_first_redundant(sample, judge_mode, gateway, cfg)
        if transformed is None:
            warnings.append(f"no redundant chunk found in '{sample.problem_id}'; kept untouched")
            counts["fallback_untouched"] += 1
            record(sample, "redundancy")
            continue
        transformed = replace(transformed, determinator_mode=judge_mode)
        _recheck(transformed)
        counts["redundancy_truncated"] += 1
        record(transformed, "redundancy")

    for sample in shuffled[n_untouched + n_redundancy:]:
        simulated = simulate_loop(sample, _derive_seed(seed, sample.problem_id), cfg.loop_sim_repeats, cfg)
        if simulated.stage2_variant != VARIANT_LOOP:
            warnings.append(f"no eligible reflective chunk in '{sample.problem_id}'; kept untouched")
            counts["fallback_untouched"] += 1
            record(sample, "loop")
            continue
        simulated = replace(simulated, determinator_mode=judge_mode)
        _recheck(simulated)
        counts["loop_simulated"] += 1
        record(simulated, "loop")

    for message in warnings:
        logger.warning("stage2: %s", message)

    manifest = {
        "stage": 2,
        "seed": seed,
        "judge_mode": judge_mode,
        "quotas": {"untouched": n_untouched, "redundancy": n_redundancy, "loop": n_loop},
        "counts": {"easy": len(easy), **counts},
        "warnings": warnings,
        "source_digest": stage1.manifest.get("dataset_sha256"),
        "transformations": transformations,
    }
    return SftDataset(samples=easy + out_hard, manifest=manifest)


def _recheck(sample: SftSample) -> None:
    if not sample.reference_answer:
        return
    if not is_correct(extract_final_answer(sample.response), sample.reference_answer):
        raise TruncationError(
            f"transformed sample '{sample.problem_id}' no longer passes the answer check"
        )
