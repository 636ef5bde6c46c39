from __future__ import annotations

import pytest

from conftest import (
    easy_problem,
    hard_problem,
    long_cot_easy_response,
    long_cot_hard_response,
    short_cot_response,
)
from th2t.config import EASY_HYPNOSIS, HARD_HYPNOSIS, EndpointConfig
from th2t.gateway import Gateway, MockRule, MockTransport
from th2t.stage1 import (
    DatasetBuildError,
    ResponsePool,
    SftSample,
    build_pools,
    build_stage1_dataset,
    inject_difficulty_hypnosis,
    overlap_ratio,
    pool_digest,
    sample_record,
    write_dataset,
)
from th2t.traces import parse_trace, wrap_think

# --- hand-graded 6-item fixture oracle -------------------------------------
# Responses graded by hand before wiring the pipeline: the short-CoT model is
# wrong on easy-001 (off by one) and the long-CoT model is wrong on hard-002.
EASY = [easy_problem(i) for i in range(3)]
HARD = [hard_problem(j) for j in range(3)]
EXPECTED_P0S_CORRECT = {"easy-000", "easy-002"}
EXPECTED_P0L_CORRECT = {"easy-000", "easy-001", "easy-002"}
EXPECTED_P1L_CORRECT = {"hard-000", "hard-001"}


def _fixture_transport():
    rules = []
    for i, p in enumerate(EASY):
        rules.append(MockRule("short_cot", p.question, short_cot_response(p, wrong=(i == 1))))
        rules.append(MockRule("long_cot", p.question, long_cot_easy_response(p)))
    for j, p in enumerate(HARD):
        rules.append(MockRule("long_cot", p.question, long_cot_hard_response(p, wrong=(j == 2))))
    return MockTransport(rules=rules)


def _gateway(transport=None):
    endpoints = {role: EndpointConfig("mock://local", role) for role in ("short_cot", "long_cot", "judge")}
    return Gateway(endpoints=endpoints, transport=transport or _fixture_transport())


def test_build_pools_matches_hand_graded_oracle():
    p0s, p0l, p1l = build_pools(EASY, HARD, _gateway(), parallelism=2)
    assert p0s.correct_ids == EXPECTED_P0S_CORRECT
    assert p0l.correct_ids == EXPECTED_P0L_CORRECT
    assert p1l.correct_ids == EXPECTED_P1L_CORRECT
    # wrong-answer traces are still collected, just not correct
    assert "easy-001" in p0s.entries
    assert p0s.correct_ids <= set(p0s.entries)


def test_build_pools_rejects_mislabelled_sets():
    with pytest.raises(ValueError, match="not easy"):
        build_pools([hard_problem(0)], HARD, _gateway())
    with pytest.raises(ValueError, match="not hard"):
        build_pools(EASY, [easy_problem(9)], _gateway())


def test_build_pools_records_generation_failures():
    transport = _fixture_transport()
    # easy-000's question no longer has a short_cot fixture -> per-item failure
    transport.rules = [
        r for r in transport.rules if not (r.role == "short_cot" and r.match == EASY[0].question)
    ]
    p0s, _, _ = build_pools(EASY, HARD, _gateway(transport), parallelism=1)
    assert "easy-000" in p0s.failures
    assert "easy-000" not in p0s.correct_ids


def test_overlap_ratio_identity_and_disjoint():
    a = ResponsePool(model_role="short_cot", correct_ids={"x", "y"})
    b = ResponsePool(model_role="long_cot", correct_ids={"x", "y"})
    assert overlap_ratio(a, b) == 1.0
    assert overlap_ratio(ResponsePool("short_cot", correct_ids=set()), b) == 0.0


def test_overlap_ratio_partial():
    a = ResponsePool("short_cot", correct_ids={"x", "z"})
    b = ResponsePool("long_cot", correct_ids={"x", "y", "w", "v"})
    assert overlap_ratio(a, b) == 0.25


def test_overlap_ratio_empty_denominator():
    with pytest.raises(ValueError):
        overlap_ratio(ResponsePool("short_cot"), ResponsePool("long_cot"))


def _bare_sample(difficulty="easy"):
    return SftSample(
        problem_id="p",
        question="q",
        response=wrap_think("thinking", "The final answer is \\boxed{4}."),
        difficulty=difficulty,
        provenance="short_cot" if difficulty == "easy" else "long_cot",
        reference_answer="4",
    )


def test_inject_easy_hypnosis_exact():
    injected = inject_difficulty_hypnosis(_bare_sample("easy"))
    assert injected.response.startswith(f"<hypnosis>{EASY_HYPNOSIS}</hypnosis>")


def test_inject_hard_hypnosis_exact():
    injected = inject_difficulty_hypnosis(_bare_sample("hard"))
    assert injected.response.startswith(f"<hypnosis>{HARD_HYPNOSIS}</hypnosis>")


def test_double_injection_is_an_error():
    injected = inject_difficulty_hypnosis(_bare_sample())
    with pytest.raises(DatasetBuildError, match="already carries"):
        inject_difficulty_hypnosis(injected)


def _built_pools():
    return build_pools(EASY, HARD, _gateway(), parallelism=1)


def test_build_stage1_balances_and_injects():
    p0s, _, p1l = _built_pools()
    problems = {p.id: p for p in EASY + HARD}
    dataset = build_stage1_dataset(p0s, p1l, problems, target_size=4, seed=42)
    assert len(dataset.samples) == 4
    difficulties = [s.difficulty for s in dataset.samples]
    assert difficulties.count("easy") == 2
    assert difficulties.count("hard") == 2
    for sample in dataset.samples:
        trace = parse_trace(sample.response)
        assert trace.hypnosis is not None
        expected = EASY_HYPNOSIS if sample.difficulty == "easy" else HARD_HYPNOSIS
        assert trace.hypnosis.body == expected
        assert (sample.difficulty == "easy") == (sample.provenance == "short_cot")


def test_build_stage1_quota_error_reports_max():
    p0s, _, p1l = _built_pools()
    problems = {p.id: p for p in EASY + HARD}
    # only 2 correct easy available -> max balanced size 4
    with pytest.raises(DatasetBuildError, match="max balanced size is 4"):
        build_stage1_dataset(p0s, p1l, problems, target_size=10, seed=42)


def test_build_stage1_deterministic_in_seed():
    p0s, _, p1l = _built_pools()
    problems = {p.id: p for p in EASY + HARD}
    first = build_stage1_dataset(p0s, p1l, problems, target_size=4, seed=7)
    second = build_stage1_dataset(p0s, p1l, problems, target_size=4, seed=7)
    assert [s.problem_id for s in first.samples] == [s.problem_id for s in second.samples]
    assert [s.response for s in first.samples] == [s.response for s in second.samples]
    assert pool_digest(p0s) == pool_digest(p0s)


def test_stage1_record_schema():
    record = sample_record(inject_difficulty_hypnosis(_bare_sample()), stage=1)
    assert set(record) == {"problem_id", "messages", "difficulty", "provenance"}
    assert record["messages"][0]["role"] == "user"
    assert record["messages"][1]["role"] == "assistant"


def test_write_dataset_manifest_digest(tmp_path):
    p0s, _, p1l = _built_pools()
    problems = {p.id: p for p in EASY + HARD}
    dataset = build_stage1_dataset(p0s, p1l, problems, target_size=4, seed=42)
    path = write_dataset(dataset, tmp_path, "sft_stage1.jsonl", stage=1)
    manifest = dataset.manifest
    assert manifest["file"] == "sft_stage1.jsonl"
    assert manifest["sample_count"] == 4
    import hashlib
    assert manifest["dataset_sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
