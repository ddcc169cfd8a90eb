"""Synthetic weak-supervision problems with known equations, plus scripted
transcripts for the replay client.  Used for desk-scale runs and tests."""
from __future__ import annotations

import json
import random
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Tuple

from .equation import BinOp, Equation, EvaluationError, Leaf, const, evaluate_exact, mask
from .masking import ProblemRecord, mask_problem, unmask

_NOUNS = ("apples", "pens", "books", "boxes", "tickets", "coins", "stamps", "marbles")
_NAMES = ("Ann", "Ben", "Cai", "Dee", "Eli", "Fay", "Gus", "Hal")


def _random_tree(rng, n_ops, leaves):
    """Random tree whose leaves are popped from ``leaves`` in order."""
    if n_ops == 0:
        return leaves.pop()
    left_ops = rng.randint(0, n_ops - 1)
    op = rng.choice("+-*/" if rng.random() > 0.03 else "^")
    left = _random_tree(rng, left_ops, leaves)
    return BinOp(op, left, _random_tree(rng, n_ops - 1 - left_ops, leaves))


def _leaves(rng, n_leaves, k):
    """Every mask once, padded with constants or repeated masks."""
    out = [Leaf(mask(i)) for i in range(1, k + 1)]
    while len(out) < n_leaves:
        r = rng.random()
        if r < 0.4:
            out.append(Leaf(const("1")))
        elif r < 0.5:
            out.append(Leaf(const("100")))
        else:
            out.append(Leaf(mask(rng.randint(1, k))))
    rng.shuffle(out)
    return out


def _text(rng, values):
    parts = []
    for v in values:
        parts.append(f"{rng.choice(_NAMES)} has {v} {rng.choice(_NOUNS)}")
    return ", ".join(parts) + ". What is the result?"


def generate(n: int, seed: int = 0, max_ops: int = 3, max_vars: int = 5) -> List[Tuple[ProblemRecord, Equation]]:
    """``n`` problems whose answers come from a random equation of 1..max_ops
    operators.  Answers are positive rationals with denominators up to 100."""
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        n_ops = rng.randint(1, max_ops)
        k = rng.randint(1, min(max_vars, n_ops + 1))
        values = [rng.randint(2, 60) for _ in range(k)]
        ast = _random_tree(rng, n_ops, _leaves(rng, n_ops + 1, k))
        eq = Equation.from_ast(ast)
        try:
            answer = evaluate_exact(eq, values)
        except EvaluationError:
            continue
        if not isinstance(answer, Fraction) or answer <= 0 or answer.denominator > 100 or answer > 10**6:
            continue
        pid = f"syn{len(out) + 1:04d}"
        record = ProblemRecord(pid, _text(rng, values), answer)
        # the masked problem must expose exactly the generated values
        if mask_problem(record).values != [Fraction(v) for v in values]:
            continue
        out.append((record, eq))
    return out


# plan names for scripted transcripts
STAGE1_OK = "stage1"
STAGE2_OK = "stage2"
CORRECTED = "correction"
FAIL = "fail"
PLANS = (STAGE1_OK, STAGE2_OK, CORRECTED, FAIL)


def script_for(record: ProblemRecord, eq: Equation, plan: str, max_attempts: int = 3) -> List[dict]:
    """Scripted replies that drive the distiller down one path."""
    masked = mask_problem(record)
    concrete = "x = " + unmask(eq, masked.slots)
    mask_form = "x = " + str(eq)
    cot = {"expect_substring": "Question:", "reply": "Let us reason step by step about the quantities."}
    mask_cot = {"expect_substring": "[blank][Mask", "reply": "Working with the placeholders step by step."}

    def extract(reply):
        return {"expect_substring": "x = ...", "reply": reply}

    if plan == STAGE1_OK:
        return [cot, extract(concrete)]
    # format-valid but wrong: v1 - v1 = 0 while answers are positive
    wrong_concrete = "x = " + unmask(Equation.from_ast(BinOp("-", Leaf(mask(1)), Leaf(mask(1)))), masked.slots)
    wrong_mask = "x = [Mask1]-[Mask1]"
    if plan == STAGE2_OK:
        return [cot, extract(wrong_concrete), mask_cot, extract(mask_form)]
    if plan == CORRECTED:
        return [cot, extract(f"The expression is {concrete.split('=', 1)[1].strip()} in total"),
                {"expect_substring": "text besides", "reply": concrete}]
    if plan == FAIL:
        entries = []
        for _ in range(max_attempts):
            entries += [cot, extract(wrong_concrete), mask_cot, extract(wrong_mask)]
        return entries
    raise ValueError(f"unknown plan {plan!r}")


def write_fixture(path, items, plans: Dict[str, str], max_attempts: int = 3):
    """Write a dataset file and a transcript directory for ``items``.

    ``plans`` maps problem id to one of :data:`PLANS` (default stage1).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dataset = [{"id": r.id, "original_text": r.text, "ans": str(r.answer)} for r, _ in items]
    (path / "dataset.json").write_text(json.dumps(dataset, ensure_ascii=False, indent=1), encoding="utf-8")
    tdir = path / "transcripts"
    tdir.mkdir(exist_ok=True)
    for record, eq in items:
        entries = script_for(record, eq, plans.get(record.id, STAGE1_OK), max_attempts)
        (tdir / f"{record.id}.json").write_text(json.dumps(entries, ensure_ascii=False, indent=1),
                                               encoding="utf-8")
    return path / "dataset.json", tdir
