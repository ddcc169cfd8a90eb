"""Number extraction and masking of problems and equations."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .equation import (
    BRACKET, CONST, MASK, NUMBER, Equation, UnboundMask,
    format_number, lex, mask, parse, render, render_token,
)

BLANK = "[blank]"


class UnmappableNumber(ValueError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"number {format_number(value)} occurs in neither the problem nor the constant set")


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    text: str
    answer: Fraction
    reference_equation: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.answer, float) and not math.isfinite(self.answer):
            raise ValueError(f"answer of {self.id} is not finite")
        if not isinstance(self.answer, Fraction):
            object.__setattr__(self, "answer", Fraction(self.answer))


@dataclass(frozen=True)
class NumberSlot:
    index: int
    value: Fraction
    span: Tuple[int, int]
    percent_flag: bool = False
    fraction_flag: bool = False


@dataclass(frozen=True)
class MaskedProblem:
    problem: ProblemRecord
    slots: Tuple[NumberSlot, ...]
    masked_text: str

    @property
    def id(self):
        return self.problem.id

    @property
    def values(self) -> List[Fraction]:
        return [s.value for s in self.slots]

    @property
    def k(self) -> int:
        return len(self.slots)


# fraction first so "1/2" is one slot; thousands separators only without spaces
_NUMBER_RE = re.compile(
    r"(?<![\d.])"
    r"(?:(?P<num>\d+)/(?P<den>\d+)"
    r"|(?P<dec>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?))"
    r"(?P<pct>\s?[%％])?"
)


def extract_numbers(text: str) -> List[NumberSlot]:
    slots = []
    for m in _NUMBER_RE.finditer(text):
        percent = m.group("pct") is not None
        if m.group("num") is not None:
            den = int(m.group("den"))
            if den == 0:
                continue
            value = Fraction(int(m.group("num")), den)
            is_fraction = True
        else:
            value = Fraction(m.group("dec").replace(",", ""))
            is_fraction = False
        if percent:
            value /= 100
        slots.append(NumberSlot(len(slots) + 1, value, m.span(), percent, is_fraction))
    return slots


def mask_token(index: int) -> str:
    return f"{BLANK}[Mask{index}]"


def mask_problem(record: ProblemRecord) -> MaskedProblem:
    slots = extract_numbers(record.text)
    pieces, last = [], 0
    for slot in slots:
        end = slot.span[1]
        pieces.append(record.text[last:end])
        pieces.append(mask_token(slot.index))
        last = end
    pieces.append(record.text[last:])
    return MaskedProblem(record, tuple(slots), "".join(pieces))


_INSERTION_RE = re.compile(re.escape(BLANK) + r"\[Mask\d+\]")


def strip_masks(masked_text: str) -> str:
    """Inverse of the text side of :func:`mask_problem`."""
    return _INSERTION_RE.sub("", masked_text)


def mask_equation(equation_text: str, slots: Sequence[NumberSlot]) -> Equation:
    """Replace concrete numerals with the mask of the slot holding that value.

    Repeated values take the lowest unconsumed slot first and reuse the
    lowest matching slot once all are consumed.  Tokens that already are
    masks pass through unchanged.
    """
    tokens = lex(equation_text)
    consumed = set()
    out = []
    for tok in tokens:
        if tok.kind == NUMBER or (tok.kind == CONST and tok.value != "pi"):
            value = tok.value if tok.kind == NUMBER else Fraction(int(tok.value))
            matches = [s.index for s in slots if s.value == value]
            if matches:
                free = [i for i in matches if i not in consumed]
                index = free[0] if free else matches[0]
                consumed.add(index)
                out.append(mask(index))
            elif tok.kind == CONST:
                out.append(tok)
            else:
                raise UnmappableNumber(value)
        else:
            out.append(tok)
    return parse(out)


def unmask(eq: Equation, slots: Sequence[NumberSlot]) -> str:
    values = {s.index: s.value for s in slots}

    def leaf_text(tok):
        if tok.kind == MASK:
            if tok.value not in values:
                raise UnboundMask(tok.value)
            return format_number(values[tok.value])
        return render_token(tok, BRACKET)

    return render(eq, BRACKET, leaf_text=leaf_text)
