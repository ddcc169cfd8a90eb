"""Equation token language: lexing, parsing, evaluation and rendering.

Equations are built from mask slots, the operators ``+ - * / ^`` and the
constants ``1``, ``100`` and ``pi``.  Three surface syntaxes are supported
for mask slots::

    bracket   [Mask1] [Mask2] ...
    temp      temp_a  temp_b  ...
    index     N0      N1      ...

Concrete numerals other than the two numeric constants lex to ``NUMBER``
tokens.  They are legal input for :func:`mwpdistill.masking.mask_equation`
but never part of a well-formed mask equation.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

MASK = "mask"
OP = "op"
CONST = "const"
NUMBER = "number"
LPAREN = "lparen"
RPAREN = "rparen"

OPERATORS = ("+", "-", "*", "/", "^")
CONSTANTS = ("1", "100", "pi")

BRACKET = "bracket"
TEMP = "temp"
INDEX = "index"
STYLES = (BRACKET, TEMP, INDEX)

DEFAULT_PI = 3.14

PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}
RIGHT_ASSOC = {"^"}

# exact rational powers only below this exponent magnitude
_MAX_EXACT_EXPONENT = 512

Number = Union[Fraction, float]


class EquationError(Exception):
    pass


class LexError(EquationError):
    def __init__(self, text, start, end):
        self.text = text
        self.start = start
        self.end = end
        super().__init__(f"cannot lex {text[start:end]!r} at {start}")

    @property
    def span(self):
        return self.text[self.start:self.end]


class ParseError(EquationError):
    pass


class EvaluationError(EquationError):
    pass


class DivisionByZero(EvaluationError):
    pass


class UnboundMask(EvaluationError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"mask {index} has no binding")


class NonRealResult(EvaluationError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str
    value: Union[int, str, Fraction, None] = None

    def __post_init__(self):
        if self.kind == MASK and (not isinstance(self.value, int) or self.value < 1):
            raise ValueError(f"mask index must be a positive integer, got {self.value!r}")
        if self.kind == OP and self.value not in OPERATORS:
            raise ValueError(f"unknown operator {self.value!r}")
        if self.kind == CONST and self.value not in CONSTANTS:
            raise ValueError(f"constant must be one of {CONSTANTS}, got {self.value!r}")

    def __repr__(self):
        if self.kind in (LPAREN, RPAREN):
            return "(" if self.kind == LPAREN else ")"
        if self.kind == MASK:
            return f"Mask{self.value}"
        return f"{self.kind}:{self.value}"


def mask(i: int) -> Token:
    return Token(MASK, i)


def op(symbol: str) -> Token:
    return Token(OP, symbol)


def const(symbol: str) -> Token:
    return Token(CONST, symbol)


L_PAREN = Token(LPAREN)
R_PAREN = Token(RPAREN)


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    token: Token


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Leaf, BinOp]


@dataclass(frozen=True)
class Equation:
    """A parsed equation.  Equality and hashing go through the AST only."""

    ast: Node
    tokens: Tuple[Token, ...] = field(default=(), compare=False, repr=False)

    def __str__(self):
        return render(self, BRACKET)

    @classmethod
    def from_ast(cls, ast: Node) -> "Equation":
        return cls(ast, tuple(_ast_tokens(ast)))

    def masks(self) -> List[int]:
        return [t.value for t in self.tokens if t.kind == MASK]


# --------------------------------------------------------------------------
# Lexing
# --------------------------------------------------------------------------

_OP_ALIASES = {
    "+": "+", "-": "-", "−": "-", "–": "-",
    "*": "*", "×": "*", "·": "*", "⋅": "*",
    "/": "/", "÷": "/", "^": "^",
}

_MASK_PATTERNS = {
    BRACKET: r"(?i:\[\s*mask\s*(?P<bracket>\d+)\s*\])",
    TEMP: r"temp_(?P<temp>[a-z]+)\b",
    INDEX: r"N(?P<index>\d+)\b",
}
_NUMBER_PATTERN = r"(?P<number>\d+(?:\.\d+)?)"
_PI_PATTERN = r"(?P<pi>π|pi\b|PI\b)"
_PREFIX = re.compile(r"^\s*x\s*=", re.IGNORECASE)


def _token_regex(style):
    styles = STYLES if style is None else (style,)
    parts = [_MASK_PATTERNS[s] for s in styles] + [_PI_PATTERN, _NUMBER_PATTERN]
    return re.compile("|".join(parts))


_REGEXES = {s: _token_regex(s) for s in STYLES + (None,)}


def temp_name(index: int) -> str:
    """1 -> 'a', 26 -> 'z', 27 -> 'aa' (spreadsheet-column order)."""
    letters = ""
    while index > 0:
        index, rem = divmod(index - 1, 26)
        letters = chr(ord("a") + rem) + letters
    return letters


def temp_index(letters: str) -> int:
    n = 0
    for ch in letters:
        n = n * 26 + (ord(ch) - ord("a") + 1)
    return n


def strip_prefix(text: str) -> str:
    return _PREFIX.sub("", text, count=1)


def lex(text: str, style: Optional[str] = None) -> List[Token]:
    """Tokenize an equation string.

    A single leading ``x =`` is dropped.  With ``style=None`` every mask
    syntax is recognised.
    """
    if style is not None and style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    regex = _REGEXES[style]
    body = strip_prefix(text)
    offset = len(text) - len(body)
    tokens = []
    pos = 0
    while pos < len(body):
        ch = body[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch == "(":
            tokens.append(L_PAREN)
            pos += 1
            continue
        if ch == ")":
            tokens.append(R_PAREN)
            pos += 1
            continue
        if ch in _OP_ALIASES:
            tokens.append(op(_OP_ALIASES[ch]))
            pos += 1
            continue
        m = regex.match(body, pos)
        if m is None:
            end = pos + 1
            while end < len(body) and not body[end].isspace() and body[end] not in "()":
                end += 1
            raise LexError(text, offset + pos, offset + end)
        groups = m.groupdict()
        if groups.get("bracket") is not None:
            tokens.append(mask(_positive(int(groups["bracket"]), text, offset + pos, offset + m.end())))
        elif groups.get("temp") is not None:
            tokens.append(mask(temp_index(groups["temp"])))
        elif groups.get("index") is not None:
            tokens.append(mask(int(groups["index"]) + 1))
        elif groups.get("pi") is not None:
            tokens.append(const("pi"))
        else:
            value = Fraction(groups["number"])
            if value == 1 or value == 100:
                tokens.append(const(str(int(value))))
            else:
                tokens.append(Token(NUMBER, value))
        pos = m.end()
    return tokens


def _positive(i, text, start, end):
    if i < 1:
        raise LexError(text, start, end)
    return i


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expression(self, min_prec=1):
        left = self.primary()
        while True:
            tok = self.peek()
            if tok is None or tok.kind != OP or PRECEDENCE[tok.value] < min_prec:
                return left
            self.take()
            prec = PRECEDENCE[tok.value]
            next_min = prec if tok.value in RIGHT_ASSOC else prec + 1
            right = self.expression(next_min)
            left = BinOp(tok.value, left, right)

    def primary(self):
        tok = self.take()
        if tok is None:
            raise ParseError("unexpected end of input")
        if tok.kind == LPAREN:
            inner = self.expression()
            closing = self.take()
            if closing is None or closing.kind != RPAREN:
                raise ParseError("unbalanced parenthesis")
            return inner
        if tok.kind in (MASK, CONST, NUMBER):
            return Leaf(tok)
        raise ParseError(f"unexpected token {tok!r} at position {self.pos - 1}")


def parse(tokens: Sequence[Token]) -> Equation:
    if not tokens:
        raise ParseError("empty input")
    parser = _Parser(tokens)
    ast = parser.expression()
    if parser.pos != len(parser.tokens):
        raise ParseError(f"trailing token {parser.tokens[parser.pos]!r} at position {parser.pos}")
    return Equation(ast, tuple(tokens))


def parse_text(text: str, style: Optional[str] = None) -> Equation:
    return parse(lex(text, style))


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _to_exact(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise NonRealResult(f"non-finite binding {x}")
        return Fraction(repr(x))  # 3.14 -> 157/50, not the binary expansion
    return Fraction(x)


def _pow(base, exponent):
    if isinstance(base, Fraction) and isinstance(exponent, Fraction) \
            and exponent.denominator == 1 and abs(exponent.numerator) <= _MAX_EXACT_EXPONENT:
        if base == 0 and exponent < 0:
            raise DivisionByZero("zero raised to a negative power")
        return base ** exponent.numerator
    b, e = float(base), float(exponent)
    if b == 0 and e < 0:
        raise DivisionByZero("zero raised to a negative power")
    if b < 0 and not float(e).is_integer():
        raise NonRealResult(f"{b} ** {e} is not real")
    try:
        result = math.pow(b, e)
    except OverflowError:
        raise NonRealResult(f"{b} ** {e} overflows") from None
    if not math.isfinite(result):
        raise NonRealResult(f"{b} ** {e} overflows")
    return result


def _apply(symbol, a, b):
    if symbol == "+":
        return a + b
    if symbol == "-":
        return a - b
    if symbol == "*":
        return a * b
    if symbol == "/":
        if b == 0:
            raise DivisionByZero("division by zero")
        return a / b
    return _pow(a, b)


def evaluate_exact(eq: Equation, bindings: Sequence, pi_value: float = DEFAULT_PI) -> Number:
    """Evaluate with rational arithmetic; falls back to float after a real power."""
    values = [_to_exact(v) for v in bindings]
    pi = _to_exact(pi_value)

    def walk(node):
        if isinstance(node, Leaf):
            tok = node.token
            if tok.kind == MASK:
                if tok.value > len(values):
                    raise UnboundMask(tok.value)
                return values[tok.value - 1]
            if tok.kind == CONST:
                return pi if tok.value == "pi" else Fraction(int(tok.value))
            return tok.value
        left = walk(node.left)
        right = walk(node.right)
        result = _apply(node.op, left, right)
        if isinstance(result, float) and not math.isfinite(result):
            raise NonRealResult("non-finite intermediate value")
        return result

    return walk(eq.ast)


def evaluate(eq: Equation, bindings: Sequence, pi_value: float = DEFAULT_PI) -> float:
    value = evaluate_exact(eq, bindings, pi_value)
    try:
        result = float(value)
    except OverflowError:
        raise NonRealResult("value too large for a float") from None
    return result


# --------------------------------------------------------------------------
# Length and rendering
# --------------------------------------------------------------------------

def token_length(eq: Equation) -> int:
    """Number of mask, operator and constant tokens; parentheses excluded."""
    def count(node):
        if isinstance(node, Leaf):
            return 1
        return 1 + count(node.left) + count(node.right)
    return count(eq.ast)


def format_number(value) -> str:
    """Decimal rendering with trailing zeros trimmed; non-terminating
    rationals render as a parenthesised fraction."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    d = value.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"({value.numerator}/{value.denominator})"
    places = max(twos, fives)
    scaled = value * 10 ** places
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    text = f"{digits[:-places]}.{digits[-places:]}".rstrip("0").rstrip(".")
    return sign + text


def render_token(tok: Token, style: str = BRACKET) -> str:
    if tok.kind == MASK:
        if style == BRACKET:
            return f"[Mask{tok.value}]"
        if style == TEMP:
            return f"temp_{temp_name(tok.value)}"
        if style == INDEX:
            return f"N{tok.value - 1}"
        raise ValueError(f"unknown style {style!r}")
    if tok.kind == CONST:
        return "π" if tok.value == "pi" else tok.value
    if tok.kind == OP:
        return tok.value
    if tok.kind == NUMBER:
        return format_number(tok.value)
    return "(" if tok.kind == LPAREN else ")"


def _needs_parens(child, parent_op, is_right):
    if not isinstance(child, BinOp):
        return False
    cp, pp = PRECEDENCE[child.op], PRECEDENCE[parent_op]
    if cp != pp:
        return cp < pp
    if parent_op in RIGHT_ASSOC:
        return not is_right
    return is_right


def _ast_tokens(node):
    if isinstance(node, Leaf):
        return [node.token]
    out = []
    for child, is_right in ((node.left, False), (node.right, True)):
        wrap = _needs_parens(child, node.op, is_right)
        if wrap:
            out.append(L_PAREN)
        out.extend(_ast_tokens(child))
        if wrap:
            out.append(R_PAREN)
        if not is_right:
            out.append(op(node.op))
    return out


def canonical_tokens(eq: Equation) -> List[Token]:
    """Token sequence with minimal parentheses."""
    return _ast_tokens(eq.ast)


def render(eq: Equation, style: str = BRACKET, leaf_text=None) -> str:
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    leaf_text = leaf_text or (lambda tok: render_token(tok, style))
    return "".join(leaf_text(t) if t.kind in (MASK, CONST, NUMBER) else render_token(t, style)
                   for t in canonical_tokens(eq))
