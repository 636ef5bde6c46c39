"""Response parsing into hypnosis / thoughts / conclusion, chunking, and loop detection.

Parsing is lossless: ``serialize(parse_trace(raw)) == raw`` byte-for-byte, and
the chunking keeps enough separator information to rebuild the thoughts
segment exactly even when empty segments are dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .config import (
    DEFAULT_REFLECTIVE_KEYWORDS,
    EASY_HYPNOSIS,
    HARD_HYPNOSIS,
    LOOP_BREAK_HYPNOSIS,
    REDUNDANCY_HYPNOSIS,
)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
HYP_OPEN = "<hypnosis>"
HYP_CLOSE = "</hypnosis>"
CHUNK_DELIM = "\n\n"

PLAIN = "plain"
REFLECTIVE = "reflective"

CAT_EASY = "difficulty_easy"
CAT_HARD = "difficulty_hard"
CAT_REDUNDANCY = "redundancy"
CAT_LOOP_BREAK = "loop_break"
CAT_UNKNOWN = "unknown"

_TRAILING_PUNCT = ".,;:!?…"


def _normalize_quotes(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'")


def hypnosis_category(body: str) -> str:
    """Classify a hypnosis body against the four canonical trigger strings.

    Comparison normalizes curly apostrophes to ASCII and trims padding; the
    stored body keeps its original bytes.
    """
    norm = _normalize_quotes(body).strip()
    if norm == EASY_HYPNOSIS:
        return CAT_EASY
    if norm == HARD_HYPNOSIS:
        return CAT_HARD
    if norm == REDUNDANCY_HYPNOSIS:
        return CAT_REDUNDANCY
    if norm == LOOP_BREAK_HYPNOSIS:
        return CAT_LOOP_BREAK
    return CAT_UNKNOWN


@dataclass(frozen=True)
class HypnosisTag:
    body: str
    category: str = ""

    def __post_init__(self) -> None:
        if not self.category:
            object.__setattr__(self, "category", hypnosis_category(self.body))

    @property
    def serialized(self) -> str:
        return f"{HYP_OPEN}{self.body}{HYP_CLOSE}"


@dataclass(frozen=True)
class Chunk:
    index: int
    text: str
    kind: str = PLAIN
    matched_keyword: str | None = None


@dataclass
class ChunkedThoughts:
    """Chunks plus the exact separator runs between them.

    ``seps`` has ``len(chunks) + 1`` entries; the original thoughts text is
    ``seps[0] + chunks[0].text + seps[1] + ... + seps[-1]``.
    """

    chunks: list[Chunk] = field(default_factory=list)
    seps: list[str] = field(default_factory=lambda: [""])

    def reassemble(self) -> str:
        out = [self.seps[0]]
        for chunk, sep in zip(self.chunks, self.seps[1:]):
            out.append(chunk.text)
            out.append(sep)
        return "".join(out)


def classify_reflective(chunk: Chunk, keywords: list[str]) -> Chunk:
    """Mark a chunk reflective when any keyword appears as a whole word.

    ``matched_keyword`` is the first keyword in list order that matches; the
    whole-word rule keeps 'Butter' from matching 'But'.
    """
    if not keywords:
        raise ValueError("keyword list must be non-empty")
    for keyword in keywords:
        pattern = rf"(?<!\w){re.escape(keyword)}(?!\w)"
        if re.search(pattern, chunk.text):
            return replace(chunk, kind=REFLECTIVE, matched_keyword=keyword)
    return replace(chunk, kind=PLAIN, matched_keyword=None)


def chunk_thoughts(thoughts: str, keywords: list[str] | None = None) -> ChunkedThoughts:
    """Split a thoughts segment on the double-newline delimiter.

    Empty segments are dropped from the chunk list but their delimiters are
    recorded in the separator runs, so reconstruction is byte-exact.  Chunk
    indices are dense from 0.
    """
    if keywords is None:
        keywords = DEFAULT_REFLECTIVE_KEYWORDS
    parts = thoughts.split(CHUNK_DELIM)
    chunks: list[Chunk] = []
    seps: list[str] = [""]
    for i, part in enumerate(parts):
        if i > 0:
            seps[-1] += CHUNK_DELIM
        if part:
            chunks.append(classify_reflective(Chunk(index=len(chunks), text=part), keywords))
            seps.append("")
    return ChunkedThoughts(chunks=chunks, seps=seps)


@dataclass
class Trace:
    problem_id: str
    raw: str
    hypnosis: HypnosisTag | None
    pre_think: str
    thoughts: str
    conclusion: str
    chunking: ChunkedThoughts
    has_think: bool
    closed: bool
    hyp_inside_think: bool
    malformed: bool
    reached_max_length: bool = False
    latency_seconds: float = 0.0

    @property
    def chunks(self) -> list[Chunk]:
        return self.chunking.chunks

    def serialize(self) -> str:
        return serialize_trace(self)


def parse_trace(
    raw: str,
    problem_id: str = "",
    reached_max_length: bool = False,
    latency_seconds: float = 0.0,
    keywords: list[str] | None = None,
) -> Trace:
    """Decompose a response into hypnosis, thoughts, and conclusion.

    Splits on the first think-open and the last think-close delimiter.  A
    hypnosis tag is recognized when it is the very first content of the
    response, or (for robustness) immediately after think-open.  Without
    delimiters the whole text is the conclusion; an unclosed think block is
    flagged malformed with everything after think-open as thoughts.
    """
    hypnosis: HypnosisTag | None = None
    hyp_inside = False
    pre_think = ""
    open_pos = raw.find(THINK_OPEN)

    if open_pos == -1:
        rest = raw
        if rest.startswith(HYP_OPEN):
            close = rest.find(HYP_CLOSE)
            if close != -1:
                hypnosis = HypnosisTag(body=rest[len(HYP_OPEN):close])
                rest = rest[close + len(HYP_CLOSE):]
        return Trace(
            problem_id=problem_id,
            raw=raw,
            hypnosis=hypnosis,
            pre_think="",
            thoughts="",
            conclusion=rest,
            chunking=chunk_thoughts("", keywords),
            has_think=False,
            closed=True,
            hyp_inside_think=False,
            malformed=False,
            reached_max_length=reached_max_length,
            latency_seconds=latency_seconds,
        )

    before = raw[:open_pos]
    if before.startswith(HYP_OPEN):
        close = before.find(HYP_CLOSE)
        if close != -1:
            hypnosis = HypnosisTag(body=before[len(HYP_OPEN):close])
            pre_think = before[close + len(HYP_CLOSE):]
        else:
            pre_think = before
    else:
        pre_think = before

    body_start = open_pos + len(THINK_OPEN)
    close_pos = raw.rfind(THINK_CLOSE)
    if close_pos < body_start:
        thoughts = raw[body_start:]
        conclusion = ""
        closed = False
        malformed = True
    else:
        thoughts = raw[body_start:close_pos]
        conclusion = raw[close_pos + len(THINK_CLOSE):]
        closed = True
        malformed = False

    if hypnosis is None and thoughts.startswith(HYP_OPEN):
        close = thoughts.find(HYP_CLOSE)
        if close != -1:
            hypnosis = HypnosisTag(body=thoughts[len(HYP_OPEN):close])
            thoughts = thoughts[close + len(HYP_CLOSE):]
            hyp_inside = True

    return Trace(
        problem_id=problem_id,
        raw=raw,
        hypnosis=hypnosis,
        pre_think=pre_think,
        thoughts=thoughts,
        conclusion=conclusion,
        chunking=chunk_thoughts(thoughts, keywords),
        has_think=True,
        closed=closed,
        hyp_inside_think=hyp_inside,
        malformed=malformed,
        reached_max_length=reached_max_length,
        latency_seconds=latency_seconds,
    )


def serialize_trace(trace: Trace) -> str:
    """Inverse of parse_trace; byte-exact for any parsed input."""
    parts: list[str] = []
    if trace.hypnosis is not None and not trace.hyp_inside_think:
        parts.append(trace.hypnosis.serialized)
    parts.append(trace.pre_think)
    if trace.has_think:
        parts.append(THINK_OPEN)
        if trace.hypnosis is not None and trace.hyp_inside_think:
            parts.append(trace.hypnosis.serialized)
        parts.append(trace.thoughts)
        if trace.closed:
            parts.append(THINK_CLOSE)
    parts.append(trace.conclusion)
    return "".join(parts)


def wrap_think(thoughts: str, conclusion: str) -> str:
    """Compose a response in the canonical think-tag layout."""
    return f"{THINK_OPEN}\n{thoughts}\n{THINK_CLOSE}\n\n{conclusion}"


def normalize_chunk_text(text: str) -> str:
    """Whitespace-collapsed, trailing-punctuation-stripped form for loop comparison."""
    return " ".join(text.split()).rstrip(_TRAILING_PUNCT)


def detect_terminal_loop(trace: Trace, window: int = 10, min_repeats: int = 3) -> bool:
    """True when a max-length trace ends in consecutively repeated chunks.

    Looks at the final ``window`` chunks for any normalized chunk text
    occurring at least ``min_repeats`` times in a row.  Traces that stopped
    before the generation limit never count as loops.
    """
    if min_repeats < 2 or window < min_repeats:
        raise ValueError("require window >= min_repeats >= 2")
    if not trace.reached_max_length:
        return False
    texts = [normalize_chunk_text(c.text) for c in trace.chunks[-window:]]
    run = 1
    for prev, cur in zip(texts, texts[1:]):
        if cur and cur == prev:
            run += 1
            if run >= min_repeats:
                return True
        else:
            run = 1
    return False
