import random
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwpdistill.equation import (
    BRACKET, CONST, INDEX, MASK, NUMBER, STYLES, TEMP, BinOp, DivisionByZero, Equation, LexError, Leaf,
    NonRealResult, ParseError, Token, UnboundMask, const, evaluate, evaluate_exact, format_number, lex, mask,
    parse, parse_text, render, temp_index, temp_name, token_length,
)


def kinds(text, style=None):
    return [(t.kind, t.value) for t in lex(text, style)]


# ---------------------------------------------------------------- lexing


def test_lex_bracket_masks_and_prefix():
    toks = lex("x = [Mask2]-[Mask1]*(1+100)")
    assert [repr(t) for t in toks] == ["Mask2", "op:-", "Mask1", "op:*", "(", "const:1", "op:+",
                                       "const:100", ")"]


def test_lex_styles_agree():
    expected = kinds("[Mask1]*[Mask3]+[Mask28]")
    assert kinds("temp_a*temp_c+temp_ab", TEMP) == expected
    assert kinds("N0*N2+N27", INDEX) == expected
    assert kinds("temp_a*temp_c+temp_ab") == expected


def test_lex_style_restricts():
    with pytest.raises(LexError):
        lex("temp_a+[Mask1]", BRACKET)


def test_lex_numbers_and_constants():
    assert kinds("2.5+1+100+π+pi") == [
        (NUMBER, Fraction(5, 2)), ("op", "+"), (CONST, "1"), ("op", "+"), (CONST, "100"), ("op", "+"),
        (CONST, "pi"), ("op", "+"), (CONST, "pi")]
    assert kinds("1.0*100.00") == [(CONST, "1"), ("op", "*"), (CONST, "100")]


def test_lex_operator_aliases():
    assert kinds("[Mask1]×[Mask2]÷[Mask3]−1") == kinds("[Mask1]*[Mask2]/[Mask3]-1")


def test_lex_error_span():
    text = "x = [Mask1] + apples"
    with pytest.raises(LexError) as info:
        lex(text)
    assert info.value.span == "apples"
    assert text[info.value.start:info.value.end] == "apples"


def test_lex_percent_is_error():
    with pytest.raises(LexError):
        lex("[Mask1]%")


def test_lex_mask_zero_rejected():
    with pytest.raises(LexError):
        lex("[Mask0]+1")


def test_temp_names_round_trip():
    for i in range(1, 800):
        assert temp_index(temp_name(i)) == i
    assert temp_name(1) == "a" and temp_name(26) == "z" and temp_name(27) == "aa"


# ---------------------------------------------------------------- parsing


def test_precedence_and_associativity():
    eq = parse_text("[Mask1]-[Mask2]-[Mask3]")
    assert eq.ast == BinOp("-", BinOp("-", Leaf(mask(1)), Leaf(mask(2))), Leaf(mask(3)))
    eq = parse_text("[Mask1]^[Mask2]^[Mask3]")
    assert eq.ast == BinOp("^", Leaf(mask(1)), BinOp("^", Leaf(mask(2)), Leaf(mask(3))))
    eq = parse_text("[Mask1]+[Mask2]*[Mask3]^1")
    assert eq.ast == BinOp("+", Leaf(mask(1)), BinOp("*", Leaf(mask(2)), BinOp("^", Leaf(mask(3)), Leaf(const("1")))))


@pytest.mark.parametrize("text", ["", "x =", "[Mask1]+", "([Mask1]", "[Mask1])", "[Mask1][Mask2]", "*[Mask1]"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_text(text)


def test_evaluate_table1():
    eq = parse_text("x = [Mask2] - [Mask1] - [Mask3] - [Mask3]")
    assert evaluate_exact(eq, [12, 20, 2]) == 4


def test_evaluate_errors():
    with pytest.raises(DivisionByZero):
        evaluate(parse_text("[Mask1]/([Mask2]-[Mask2])"), [1, 2])
    with pytest.raises(UnboundMask):
        evaluate(parse_text("[Mask3]+1"), [1, 2])
    with pytest.raises(NonRealResult):
        evaluate(parse_text("([Mask1]-[Mask2])^[Mask3]"), [1, 2, Fraction(1, 2)])


def test_evaluate_pi_and_exact_powers():
    assert evaluate_exact(parse_text("π*[Mask1]^2"), [10]) == Fraction(314)
    assert evaluate_exact(parse_text("[Mask1]^(0-1)"), [4]) == Fraction(1, 4)
    assert evaluate(parse_text("[Mask1]^[Mask2]"), [4, Fraction(1, 2)]) == pytest.approx(2.0)


def test_token_length():
    assert token_length(parse_text("[Mask2]-[Mask1]-[Mask3]-[Mask3]")) == 7
    assert token_length(parse_text("(([Mask1]))")) == 1


def test_render_minimal_parentheses():
    assert render(parse_text("([Mask1]+[Mask2])*[Mask3]")) == "([Mask1]+[Mask2])*[Mask3]"
    assert render(parse_text("([Mask1]*[Mask2])+[Mask3]")) == "[Mask1]*[Mask2]+[Mask3]"
    assert render(parse_text("[Mask1]-([Mask2]-[Mask3])")) == "[Mask1]-([Mask2]-[Mask3])"
    assert render(parse_text("([Mask1]^[Mask2])^[Mask3]")) == "([Mask1]^[Mask2])^[Mask3]"
    assert render(parse_text("[Mask1]*pi"), TEMP) == "temp_a*π"
    assert render(parse_text("[Mask1]*[Mask2]"), INDEX) == "N0*N1"


def test_format_number():
    assert format_number(Fraction(5, 2)) == "2.5"
    assert format_number(Fraction(12)) == "12"
    assert format_number(Fraction(1, 3)) == "(1/3)"
    assert format_number(Fraction(-3, 8)) == "-0.375"
    assert format_number(Fraction(1, 1000)) == "0.001"


# ---------------------------------------------------------------- properties

LEAVES = st.one_of(st.integers(1, 30).map(lambda i: Leaf(mask(i))),
                   st.sampled_from(["1", "100", "pi"]).map(lambda c: Leaf(const(c))))
TREES = st.recursive(LEAVES, lambda kids: st.builds(BinOp, st.sampled_from("+-*/^"), kids, kids), max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(TREES, st.sampled_from(STYLES))
def test_render_parse_round_trip(ast, style):
    eq = Equation.from_ast(ast)
    text = render(eq, style)
    again = parse(lex(text, style))
    assert again.ast == ast
    assert render(again, style) == text
    assert token_length(again) == token_length(eq)


@settings(max_examples=200, deadline=None)
@given(TREES)
def test_extra_parentheses_do_not_change_meaning(ast):
    def full(node):
        if isinstance(node, Leaf):
            return render(Equation.from_ast(node))
        return f"({full(node.left)}{node.op}{full(node.right)})"

    assert parse_text(full(ast)).ast == ast


# independent oracle: the same trees evaluated in 60-digit mpmath

def _random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.75:
            return Leaf(mask(rng.randint(1, 6)))
        return Leaf(const(rng.choice(["1", "100", "pi"])))
    opname = rng.choice("+-*/^")
    if opname == "^":
        # integer exponents keep the arithmetic exact (and cheap)
        exp = Leaf(const("1")) if rng.random() < 0.3 else Leaf(Token(NUMBER, Fraction(rng.randint(2, 4))))
        return BinOp("^", _random_tree(rng, depth - 1), exp)
    return BinOp(opname, _random_tree(rng, depth - 1), _random_tree(rng, depth - 1))


def _oracle(node, values, pi):
    if isinstance(node, Leaf):
        t = node.token
        if t.kind == MASK:
            return values[t.value - 1]
        if t.kind == NUMBER:
            return mpmath.mpf(int(t.value))
        return pi if t.value == "pi" else mpmath.mpf(int(t.value))
    a = _oracle(node.left, values, pi)
    b = _oracle(node.right, values, pi)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if b == 0:
            raise ZeroDivisionError
        return a / b
    if a == 0 and b < 0:
        raise ZeroDivisionError
    if a < 0 and b != int(b):
        raise ValueError
    v = a ** b
    if abs(v) > mpmath.mpf("1e300"):
        raise OverflowError  # outside double range, not comparable
    return v


def test_evaluation_matches_mpmath_oracle():
    rng = random.Random(1234)
    checked = 0
    with mpmath.workdps(60):
        pi = mpmath.mpf("3.14")
        for _ in range(10_000):
            ast = _random_tree(rng, 5)
            values = [Fraction(rng.choice([rng.randint(1, 9), rng.randint(1, 99) / 4])) for _ in range(6)]
            mvals = [mpmath.mpf(v.numerator) / v.denominator for v in values]
            try:
                expected = _oracle(ast, mvals, pi)
            except OverflowError:
                continue
            except (ZeroDivisionError, ValueError):
                with pytest.raises((DivisionByZero, NonRealResult)):
                    evaluate(Equation.from_ast(ast), values)
                continue
            if abs(expected) > mpmath.mpf("1e300") or (0 < abs(expected) < mpmath.mpf("1e-300")):
                continue
            got = evaluate(Equation.from_ast(ast), values)
            assert mpmath.almosteq(got, expected, rel_eps=1e-12, abs_eps=1e-40), (render(Equation.from_ast(ast)), got, expected)
            checked += 1
    assert checked > 5000
