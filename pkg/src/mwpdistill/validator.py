"""Format check, result check and the format-error classifier."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .equation import (
    CONST, CONSTANTS, DEFAULT_PI, MASK, OP, OPERATORS, LPAREN, RPAREN,
    Equation, EquationError, EvaluationError, evaluate_exact, lex, parse, strip_prefix, temp_index,
)
from .masking import NumberSlot, UnmappableNumber, mask_equation

TOLERANCE = Fraction(1, 10_000)
NEAR_MISS = Fraction(1, 100)


class FormatErrorKind(str, enum.Enum):
    IMPROPER_PERCENT = "ImproperPercent"
    LATEX_NOTATION = "LatexNotation"
    MULTIPLE_EXPRESSIONS = "MultipleExpressions"
    EXTRANEOUS_TEXT = "ExtraneousText"
    NON_COMPLIANT_NUMBER = "NonCompliantNumber"


class Unclassifiable(ValueError):
    """No known error pattern matched; the caller should ask for a generic reformat."""


@dataclass(frozen=True)
class CheckReport:
    format_ok: bool
    error: Optional[FormatErrorKind] = None
    result_ok: Optional[bool] = None
    value: Optional[float] = None
    equation: Optional[Equation] = None
    recovered: Optional[str] = None
    detail: str = ""

    def __post_init__(self):
        if self.result_ok is not None and not self.format_ok:
            raise ValueError("result_ok requires a passing format check")

    @property
    def accepted(self):
        return self.format_ok and bool(self.result_ok)


def token_is_legal(tok, mask_count: int) -> bool:
    """Per-token membership in masks(1..k) | operators | constants | parens."""
    if tok.kind == MASK:
        return 1 <= tok.value <= mask_count
    if tok.kind == OP:
        return tok.value in OPERATORS
    if tok.kind == CONST:
        return tok.value in CONSTANTS
    return tok.kind in (LPAREN, RPAREN)


def _format_failure(candidate, mask_count, detail, allowed_numbers=None):
    try:
        kind, recovered = classify_error_with_recovery(candidate, mask_count, allowed_numbers)
    except Unclassifiable:
        return CheckReport(False, None, detail=detail)
    return CheckReport(False, kind, recovered=recovered, detail=detail)


def format_check(candidate: str, mask_count: int) -> CheckReport:
    try:
        tokens = lex(candidate)
        eq = parse(tokens)
    except EquationError as exc:
        return _format_failure(candidate, mask_count, str(exc))
    bad = [t for t in tokens if not token_is_legal(t, mask_count)]
    if bad:
        return _format_failure(candidate, mask_count, f"illegal token {bad[0]!r}")
    return CheckReport(True, equation=eq)


def concrete_format_check(candidate: str, slots: Sequence[NumberSlot]) -> CheckReport:
    """Format check for an equation written with the problem's own numbers.

    The candidate is moved into mask space first; numbers that match no
    slot and no constant are reported as non-compliant.
    """
    k = len(slots)
    allowed = {s.value for s in slots}
    try:
        eq = mask_equation(candidate, slots)
    except UnmappableNumber as exc:
        return _format_failure(candidate, k, str(exc), allowed)
    except EquationError as exc:
        return _format_failure(candidate, k, str(exc), allowed)
    bad = [t for t in eq.tokens if not token_is_legal(t, k)]
    if bad:
        return _format_failure(candidate, k, f"illegal token {bad[0]!r}", allowed)
    return CheckReport(True, equation=eq)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

_PERCENT_RE = re.compile(r"(\d|temp_[a-z]+|\]|\bN\d+|\))\s*[%％]")
_LATEX_RE = re.compile(
    r"[\\/](?:frac|dfrac|tfrac|cdot|text|times|div|left|right|sqrt|mathrm|pi)\b"
    r"|\\[A-Za-z]+|\\[()\[\]]"
)
_WORD_RE = re.compile(
    r"(?i:\[\s*mask\s*\d+\s*\])|temp_[a-z]+\b|\bN\d+\b|π|\bpi\b|\bPI\b"
    r"|(?P<word>[A-Za-z]+|[\u4e00-\u9fff]+)"
)


def _is_multiple(text):
    if text.count("=") > 1:
        return True
    parts = [p for p in re.split(r"[,;，；\n]", text) if p.strip()]
    return len(parts) > 1 and any("=" in p for p in parts[1:])


def _segments(body):
    """Split into stretches that contain no plain words or '=' signs."""
    spans, start = [], 0
    breaks = []
    for m in _WORD_RE.finditer(body):
        if m.group("word"):
            breaks.append((m.start(), m.end()))
    for m in re.finditer(r"[=:：,，;；]", body):
        breaks.append(m.span())
    for b_start, b_end in sorted(breaks):
        if b_start > start:
            spans.append((start, b_start))
        start = max(start, b_end)
    if start < len(body):
        spans.append((start, len(body)))
    return spans, breaks


def longest_parseable(text: str) -> Optional[str]:
    """Longest sub-expression of ``text`` that lexes and parses on its own."""
    body = strip_prefix(text)
    spans, _ = _segments(body)
    best = None
    for s_start, s_end in spans:
        seg = body[s_start:s_end]
        cuts = [i for i in range(len(seg) + 1) if i == 0 or i == len(seg) or seg[i - 1].isspace() or seg[i] in "()" or seg[i - 1] in "()"]
        for i in cuts:
            for j in reversed(cuts):
                if j <= i:
                    break
                piece = seg[i:j].strip()
                if not piece or (best is not None and len(piece) <= len(best)):
                    continue
                try:
                    parse(lex(piece))
                except EquationError:
                    continue
                best = piece
    return best


def _words(body):
    return [m.group("word") for m in _WORD_RE.finditer(body) if m.group("word")]


def _has_noncompliant(body, mask_count, allowed_numbers):
    allowed = set(allowed_numbers or ())
    for m in re.finditer(r"(?i:\[\s*mask\s*(\d+)\s*\])", body):
        if not 1 <= int(m.group(1)) <= mask_count:
            return True
    for m in re.finditer(r"temp_([a-z]+)\b", body):
        if not 1 <= temp_index(m.group(1)) <= mask_count:
            return True
    for m in re.finditer(r"\bN(\d+)\b", body):
        if not 0 <= int(m.group(1)) < mask_count:
            return True
    scrubbed = re.sub(r"(?i:\[\s*mask\s*\d+\s*\])|\bN\d+\b", " ", body)
    for m in re.finditer(r"\d+(?:\.\d+)?", scrubbed):
        value = Fraction(m.group(0))
        if value not in (1, 100) and value not in allowed:
            return True
    # lone single-letter variables such as "y", unless the text is prose
    words = _words(body)
    return bool(words) and all(len(w) == 1 and w.isascii() for w in words)


def classify_error_with_recovery(candidate: str, mask_count: int, allowed_numbers: Optional[Iterable] = None):
    """Return ``(kind, recovered_expression)``; raises :class:`Unclassifiable`."""
    body = strip_prefix(candidate)
    if _PERCENT_RE.search(body):
        return FormatErrorKind.IMPROPER_PERCENT, None
    if _LATEX_RE.search(body):
        return FormatErrorKind.LATEX_NOTATION, None
    if _is_multiple(candidate):
        return FormatErrorKind.MULTIPLE_EXPRESSIONS, None
    if any(len(w) > 1 or not w.isascii() for w in _words(body)):
        recovered = longest_parseable(candidate)
        if recovered is not None:
            return FormatErrorKind.EXTRANEOUS_TEXT, recovered
    if _has_noncompliant(body, mask_count, allowed_numbers):
        return FormatErrorKind.NON_COMPLIANT_NUMBER, None
    raise Unclassifiable(candidate)


def classify_error(candidate: str, mask_count: int, allowed_numbers: Optional[Iterable] = None) -> FormatErrorKind:
    return classify_error_with_recovery(candidate, mask_count, allowed_numbers)[0]


# --------------------------------------------------------------------------
# Result check
# --------------------------------------------------------------------------

def answer_gap(eq: Equation, slots: Sequence, answer, pi_value=DEFAULT_PI):
    """``|value - answer|`` or ``None`` when the equation cannot be evaluated."""
    values = [s.value if isinstance(s, NumberSlot) else s for s in slots]
    try:
        value = evaluate_exact(eq, values, pi_value)
    except (EvaluationError, OverflowError, ZeroDivisionError):
        return None
    target = Fraction(answer)
    if isinstance(value, Fraction):
        return abs(value - target)
    return abs(Fraction(value) - target)


def result_check(eq: Equation, slots: Sequence, answer, pi_value=DEFAULT_PI,
                 tolerance=TOLERANCE) -> bool:
    gap = answer_gap(eq, slots, answer, pi_value)
    return gap is not None and gap < Fraction(tolerance)


def is_near_miss(eq: Equation, slots: Sequence, answer, pi_value=DEFAULT_PI) -> bool:
    gap = answer_gap(eq, slots, answer, pi_value)
    return gap is not None and TOLERANCE <= gap < NEAR_MISS


def full_check(candidate: str, slots: Sequence[NumberSlot], answer, pi_value=DEFAULT_PI,
               tolerance=TOLERANCE, concrete=False) -> CheckReport:
    """Format check followed, when it passes, by the result check."""
    report = concrete_format_check(candidate, slots) if concrete else format_check(candidate, len(slots))
    if not report.format_ok:
        return report
    eq = report.equation
    values = [s.value for s in slots]
    try:
        value = float(evaluate_exact(eq, values, pi_value))
    except (EvaluationError, OverflowError):
        value = None
    ok = result_check(eq, slots, answer, pi_value, tolerance)
    return CheckReport(True, None, ok, value, eq)
