"""Run configuration: endpoints, trigger strings, thresholds, prompt templates.

Every knob ships with a default so the pipeline runs out of the box; a YAML
config file overrides keys selectively.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

API_KEY_ENV = "TH2T_API_KEY"

# Canonical hypnosis bodies.  ASCII apostrophes throughout; parsers normalize
# curly quotes before comparing against these.
EASY_HYPNOSIS = "This is a simple question, let's think quickly."
HARD_HYPNOSIS = "It seems difficult, let's think thoroughly."
REDUNDANCY_HYPNOSIS = "Everything seems ok, let's move on."
LOOP_BREAK_HYPNOSIS = "Oh, I'm stuck in a loop. Time to break out."

DEFAULT_REFLECTIVE_KEYWORDS = ["Wait", "wait", "Alternatively", "alternatively", "But", "but"]

DEFAULT_SOLVE_TEMPLATE = (
    "{question}\n\nPlease reason step by step, and put your final answer within \\boxed{{}}."
)

DEFAULT_D_PROMPT_PREAMBLE = (
    "Before answering, judge how hard this problem is. If you find it easy, "
    "think quickly and keep your reasoning brief; if you find it difficult, "
    "think thoroughly."
)

DEFAULT_NOTHINKING_PREFIX = "<think></think>\n\n"

DEFAULT_JUDGE_TEMPLATE = (
    "You are reviewing one step of a worked solution.\n"
    "Problem:\n{question}\n\n"
    "Reasoning so far:\n{context}\n\n"
    "Candidate step:\n{chunk}\n\n"
    "Does the candidate step add a new deduction, value, or result that the "
    "reasoning so far does not already contain, or does it only re-verify or "
    "restate earlier work? The reasoning so far must already be sufficient to "
    "reach the final answer for the step to count as redundant.\n"
    "Answer with exactly one word: CONTRIBUTES or REDUNDANT."
)

DEFAULT_DIFFICULTY_PROBE_TEMPLATE = (
    "{question}\n\nBefore solving anything, rate how difficult this problem is "
    "for you. Answer with exactly one word: Easy, Medium, or Hard."
)

DEFAULT_EASY_SYNONYMS = ["simple", "easy", "quick", "quickly", "straightforward"]
DEFAULT_HARD_SYNONYMS = ["difficult", "tough", "thoroughly", "challenging", "hard", "complex"]


@dataclass(frozen=True)
class EndpointConfig:
    """One chat-completions endpoint: where to send requests for a model role."""

    base_url: str
    model: str

    def api_key(self) -> str:
        return os.environ.get(API_KEY_ENV, "")


@dataclass(frozen=True)
class Config:
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)

    hypnosis_easy: str = EASY_HYPNOSIS
    hypnosis_hard: str = HARD_HYPNOSIS
    hypnosis_redundancy: str = REDUNDANCY_HYPNOSIS
    hypnosis_loop_break: str = LOOP_BREAK_HYPNOSIS

    reflective_keywords: list[str] = field(default_factory=lambda: list(DEFAULT_REFLECTIVE_KEYWORDS))
    loop_window: int = 10
    loop_min_repeats: int = 3
    loop_sim_repeats: int = 3

    #: stage-2 split of the hard half: untouched / redundancy-truncated / loop-simulated
    stage2_untouched_ratio: float = 0.5
    stage2_redundancy_ratio: float = 0.25
    stage2_loop_ratio: float = 0.25

    max_new_tokens: int = 8192
    aime_max_new_tokens: int = 16384
    judge_max_new_tokens: int = 32

    system_prompt: str = ""
    solve_template: str = DEFAULT_SOLVE_TEMPLATE
    d_prompt_preamble: str = DEFAULT_D_PROMPT_PREAMBLE
    nothinking_prefix: str = DEFAULT_NOTHINKING_PREFIX
    forced_prefix_easy: str = EASY_HYPNOSIS
    forced_prefix_hard: str = HARD_HYPNOSIS
    judge_template: str = DEFAULT_JUDGE_TEMPLATE
    difficulty_probe_template: str = DEFAULT_DIFFICULTY_PROBE_TEMPLATE

    cognition_easy_synonyms: list[str] = field(default_factory=lambda: list(DEFAULT_EASY_SYNONYMS))
    cognition_hard_synonyms: list[str] = field(default_factory=lambda: list(DEFAULT_HARD_SYNONYMS))

    histogram_bucket_width: int = 512

    #: JSONL file of canned responses for the mock transport (--mock runs)
    mock_responses: str | None = None


class ConfigError(Exception):
    """Raised for unreadable or malformed config files."""


_SCALAR_KEYS = {
    "hypnosis_easy",
    "hypnosis_hard",
    "hypnosis_redundancy",
    "hypnosis_loop_break",
    "loop_window",
    "loop_min_repeats",
    "loop_sim_repeats",
    "stage2_untouched_ratio",
    "stage2_redundancy_ratio",
    "stage2_loop_ratio",
    "max_new_tokens",
    "aime_max_new_tokens",
    "judge_max_new_tokens",
    "system_prompt",
    "solve_template",
    "d_prompt_preamble",
    "nothinking_prefix",
    "forced_prefix_easy",
    "forced_prefix_hard",
    "judge_template",
    "difficulty_probe_template",
    "histogram_bucket_width",
    "mock_responses",
}

_LIST_KEYS = {"reflective_keywords", "cognition_easy_synonyms", "cognition_hard_synonyms"}


def load_config(path: str | Path | None = None) -> Config:
    """Build a Config from defaults, overridden by the YAML file at ``path``."""
    cfg = Config()
    if path is None:
        return cfg

    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level")

    updates: dict[str, Any] = {}
    endpoints = dict(cfg.endpoints)
    for key, value in data.items():
        if key == "endpoints":
            if not isinstance(value, dict):
                raise ConfigError("'endpoints' must map role -> {base_url, model}")
            for role, spec in value.items():
                if not isinstance(spec, dict) or "base_url" not in spec or "model" not in spec:
                    raise ConfigError(f"endpoint '{role}' needs base_url and model")
                endpoints[role] = EndpointConfig(base_url=spec["base_url"], model=spec["model"])
        elif key in _SCALAR_KEYS:
            updates[key] = value
        elif key in _LIST_KEYS:
            if not isinstance(value, list):
                raise ConfigError(f"'{key}' must be a list")
            updates[key] = [str(item) for item in value]
        else:
            raise ConfigError(f"unknown config key '{key}'")
    updates["endpoints"] = endpoints
    return replace(cfg, **updates)
