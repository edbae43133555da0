"""Answer extraction and rule-based correctness grading.

The graders here produce the correctness labels everything downstream
consumes (accuracy, ROC-AUC, calibration). Extraction takes the last
``\\boxed{...}`` occurrence with balanced-brace matching; equivalence is
checked exactly as rationals where both sides parse, with a small relative
tolerance as the numeric fallback. Every grading decision carries a
human-readable trace so results stay auditable.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

ANSWER_NUMERIC = "numeric"
ANSWER_OPTION = "option"
ANSWER_STRING = "string"

_ANSWER_TYPES = (ANSWER_NUMERIC, ANSWER_OPTION, ANSWER_STRING)

_BOXED = re.compile(r"\\boxed\s*\{")
_TEXT_WRAPPER = re.compile(r"\\text\s*\{([^{}]*)\}")
_FRAC = re.compile(r"\\[dt]?frac\s*\{(-?[^{}]+)\}\s*\{(-?[^{}]+)\}")


@dataclass(frozen=True)
class QuestionRecord:
    """One benchmark item."""

    id: str
    text: str
    gold: str
    answer_type: str = ANSWER_NUMERIC
    dataset: str = "default"

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError(f"question {self.id}: gold answer must be non-empty")
        if self.answer_type not in _ANSWER_TYPES:
            raise ValueError(
                f"question {self.id}: answer_type must be one of {_ANSWER_TYPES}"
            )
        if self.answer_type == ANSWER_OPTION:
            letter = _normalize_option(self.gold)
            if letter is None:
                raise ValueError(
                    f"question {self.id}: option gold {self.gold!r} does not"
                    " normalize to a single letter A-E"
                )


@dataclass(frozen=True)
class GradedAnswer:
    """Outcome of grading one completion against the gold answer."""

    extracted: str | None
    correct: bool
    normalization_trace: str = ""


def load_dataset(path: str | Path) -> list[QuestionRecord]:
    """Read a JSON Lines dataset of question records."""
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                record = QuestionRecord(
                    id=str(row["id"]),
                    text=row["question"],
                    gold=str(row["answer"]),
                    answer_type=row.get("answer_type", ANSWER_NUMERIC),
                    dataset=row.get("dataset", "default"),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dataset line: {exc}") from exc
            if record.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate question id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def extract_boxed(text: str) -> str | None:
    """Contents of the last ``\\boxed{...}`` occurrence, or None.

    Brace matching is balanced, so nested expressions survive intact. Only
    the last occurrence is considered: models sometimes restate earlier
    candidates, and the final box is the committed answer. An unbalanced
    last occurrence yields None.
    """
    if not text:
        return None
    matches = list(_BOXED.finditer(text))
    if not matches:
        return None
    start = matches[-1].end()
    depth = 1
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:i]
    return None


def matched_brace_prefix(text: str) -> str | None:
    """Prefix of ``text`` up to the brace that closes an already-open group.

    Used for induced-answer continuations, which begin inside an opened
    ``\\boxed{``. Returns None when the group never closes.
    """
    depth = 1
    for i, ch in enumerate(text):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[:i]
    return None


def _strip_text_wrappers(s: str) -> str:
    prev = None
    while prev != s:
        prev = s
        s = _TEXT_WRAPPER.sub(r"\1", s)
    return s


def _clean_numeric(s: str) -> str:
    s = _strip_text_wrappers(s)
    s = _FRAC.sub(r"(\1)/(\2)", s)
    s = s.replace("$", "").replace("%", "").replace(",", "")
    s = s.replace("\\left", "").replace("\\right", "")
    s = s.replace("(", "").replace(")", "").replace(" ", "")
    return s.strip()


def parse_rational(s: str) -> Fraction | None:
    """Parse an answer string as an exact rational, or None.

    Handles integers, decimals, ``p/q``, ``\\frac{p}{q}`` (and ``\\dfrac``/
    ``\\tfrac``), leading sign, and the usual wrappers ($, %, ``\\text{}``,
    thousands commas, whitespace).
    """
    clean = _clean_numeric(s)
    if not clean:
        return None
    try:
        return Fraction(clean)
    except (ValueError, ZeroDivisionError):
        pass
    if clean.count("/") == 1:
        num, den = clean.split("/")
        try:
            return Fraction(Fraction(num), Fraction(den))
        except (ValueError, ZeroDivisionError):
            return None
    return None


def _parse_float(s: str) -> float | None:
    try:
        return float(_clean_numeric(s))
    except ValueError:
        return None


def _normalize_option(s: str) -> str | None:
    letters = re.sub(r"[^A-Za-z]", "", s)
    if len(letters) == 1 and letters.upper() in "ABCDE":
        return letters.upper()
    return None


def _normalize_string(s: str) -> str:
    return " ".join(s.split()).casefold()


def answers_equivalent(a: str, b: str, answer_type: str = ANSWER_NUMERIC) -> bool:
    """Rule-based equivalence between two answer strings.

    Numeric answers are compared exactly as rationals when both sides
    parse; otherwise as reals within 1e-6 relative tolerance. Option
    answers compare as single letters after stripping punctuation; string
    answers compare after whitespace and case normalization. Never raises
    on unparseable input.
    """
    if not a or not b:
        return False
    if answer_type == ANSWER_OPTION:
        na, nb = _normalize_option(a), _normalize_option(b)
        return na is not None and na == nb
    if answer_type == ANSWER_STRING:
        return _normalize_string(a) == _normalize_string(b)

    ra, rb = parse_rational(a), parse_rational(b)
    if ra is not None and rb is not None:
        return ra == rb
    fa, fb = _parse_float(a), _parse_float(b)
    if fa is None or fb is None:
        return False
    return math.isclose(fa, fb, rel_tol=1e-6, abs_tol=1e-12)


def grade_text(text: str, question: QuestionRecord) -> GradedAnswer:
    """Extract the boxed answer from completion text and grade it."""
    extracted = extract_boxed(text)
    if extracted is None:
        trace = "no balanced \\boxed{...} found" if _BOXED.search(text or "") else "no \\boxed{...} found"
        return GradedAnswer(extracted=None, correct=False, normalization_trace=trace)
    correct = answers_equivalent(extracted, question.gold, question.answer_type)
    trace = (
        f"extracted={extracted!r} gold={question.gold!r}"
        f" type={question.answer_type} -> {'match' if correct else 'mismatch'}"
    )
    return GradedAnswer(extracted=extracted, correct=correct, normalization_trace=trace)


def grade_generation(completion, question: QuestionRecord) -> GradedAnswer:
    """Grade a backend Completion (see :func:`grade_text`)."""
    return grade_text(completion.text, question)
