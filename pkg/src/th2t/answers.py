"""Final-answer extraction and deterministic correctness grading.

Grading is intentionally conservative: a record is only marked correct when
the normalized forms match exactly or are exactly equal as rationals.  A
false positive would poison a training set; a false negative only shrinks it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

BOXED = "boxed"
CONCLUSION_TAIL = "conclusion_tail"
NONE = "none"

_THINK_CLOSE = "</think>"

_NUMBER_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?(?:\s*/\s*-?\d[\d,]*(?:\.\d+)?)?")
_FRAC_RE = re.compile(r"\\[dt]?frac\s*\{([^{}]*)\}\s*\{([^{}]*)\}")
_TEXT_RE = re.compile(r"\\text\s*\{([^{}]*)\}")
#: structure that plain normalization cannot decide: intervals, sets, algebra
_STRUCTURED_RE = re.compile(r"[\[\](){}|,=]|\\cup|\\cap|\\pm|\\in|\\infty|[a-zA-Z]\s*\^")


@dataclass(frozen=True)
class ExtractedAnswer:
    raw: str
    normalized: str
    extraction_source: str  # boxed | conclusion_tail | none


@dataclass(frozen=True)
class AnswerVerdict:
    correct: bool
    needs_review: bool = False


def _last_boxed(text: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}`` group, if any."""
    for start in reversed([m.start() for m in re.finditer(r"\\boxed", text)]):
        idx = start + len("\\boxed")
        while idx < len(text) and text[idx].isspace():
            idx += 1
        if idx >= len(text) or text[idx] != "{":
            continue
        depth = 1
        idx += 1
        begin = idx
        while idx < len(text):
            char = text[idx]
            if char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    return text[begin:idx]
            idx += 1
    return None


def _conclusion_segment(text: str) -> str:
    """Text after the last think-close delimiter, or the whole text."""
    pos = text.rfind(_THINK_CLOSE)
    if pos == -1:
        return text
    return text[pos + len(_THINK_CLOSE):]


def extract_final_answer(trace_text: str) -> ExtractedAnswer:
    """Pull the model's final answer out of a response.

    Prefers the last boxed group anywhere in the text; otherwise falls back
    to the last number-like token in the conclusion segment.  Absence is a
    value (source ``none``), never an error.
    """
    boxed = _last_boxed(trace_text)
    if boxed is not None and boxed.strip():
        return ExtractedAnswer(raw=boxed.strip(), normalized=normalize_answer(boxed), extraction_source=BOXED)
    tail = _conclusion_segment(trace_text)
    matches = _NUMBER_RE.findall(tail)
    if matches:
        raw = matches[-1].strip()
        return ExtractedAnswer(raw=raw, normalized=normalize_answer(raw), extraction_source=CONCLUSION_TAIL)
    return ExtractedAnswer(raw="", normalized="", extraction_source=NONE)


def normalize_answer(answer: str) -> str:
    """Reduce an answer string to a comparable canonical form."""
    s = answer.strip()
    s = s.replace("\u2019", "'").replace("\u2018", "'")
    s = s.replace("\\left", "").replace("\\right", "")
    s = s.replace("\\!", "").replace("\\,", "").replace("\\;", "")
    s = _TEXT_RE.sub(r"\1", s)
    s = _FRAC_RE.sub(r"(\1)/(\2)", s)
    while True:
        before = s
        s = s.strip().rstrip(".")
        if s.startswith("$") and s.endswith("$") and len(s) > 1:
            s = s[1:-1]
        if s == before:
            break
    s = re.sub(r"\s+", " ", s).strip()
    return s.casefold()


def _parse_rational(s: str) -> Fraction | None:
    """Exact rational value of a normalized answer, or None."""
    s = s.strip()
    if s.startswith("(") and s.endswith(")"):
        inner = s[1:-1]
        if "(" not in inner and ")" not in inner:
            s = inner
    if "/" in s:
        num, _, den = s.partition("/")
        num = num.strip().strip("()")
        den = den.strip().strip("()")
        try:
            return Fraction(num.replace(",", "")) / Fraction(den.replace(",", ""))
        except (ValueError, ZeroDivisionError):
            return None
    try:
        return Fraction(s.replace(",", ""))
    except ValueError:
        return None


def grade_answer(extracted: ExtractedAnswer, reference: str) -> AnswerVerdict:
    """Decide whether an extracted answer matches the reference.

    Equivalence is exact string match after normalization, or exact rational
    equality (``1/2`` == ``0.5``).  Structured answers (intervals, sets,
    algebraic expressions) that fail both routes come back incorrect with
    ``needs_review`` set.
    """
    if not reference or not reference.strip():
        raise ValueError("reference answer must be non-empty")
    if extracted.extraction_source == NONE or not extracted.raw:
        return AnswerVerdict(correct=False)

    lhs = extracted.normalized
    rhs = normalize_answer(reference)
    if lhs == rhs:
        return AnswerVerdict(correct=True)

    lhs_val = _parse_rational(lhs)
    rhs_val = _parse_rational(rhs)
    if lhs_val is not None and rhs_val is not None:
        return AnswerVerdict(correct=lhs_val == rhs_val)

    structured = bool(_STRUCTURED_RE.search(extracted.raw) or _STRUCTURED_RE.search(reference))
    return AnswerVerdict(correct=False, needs_review=structured)


def is_correct(extracted: ExtractedAnswer, reference: str) -> bool:
    return grade_answer(extracted, reference).correct
