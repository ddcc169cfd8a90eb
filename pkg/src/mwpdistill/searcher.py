"""Searcher interface and the combinatorial reference searcher.

The reference searcher enumerates expressions over the problem's masks and
the constants bottom-up, keeping the best-scoring expression per
(size, value), and meets the answer at the top-level operator by solving
for the missing operand.  Candidates are ranked by a tree-bigram prior
learned from accepted pairs.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Protocol, Sequence, Tuple

from .equation import (
    BRACKET, DEFAULT_PI, MASK, BinOp, Equation, Leaf, const, mask, render,
)
from .masking import MaskedProblem

OPS = ("+", "-", "*", "/", "^")
LEAF_CONSTANTS = ("1", "100", "pi")
SYMBOLS = OPS + ("M",) + LEAF_CONSTANTS
COVERAGE_BUCKETS = 4
STATE_VERSION = 1

_MAX_ABS = 1e9


class Searcher(Protocol):
    def fit(self, pairs: Sequence[Tuple[MaskedProblem, Equation]], seed: int = 0) -> "SearcherState":
        ...

    def beam_search(self, state, masked: MaskedProblem, width: int) -> List[Equation]:
        ...


@dataclass
class SearcherState:
    """Counts learned by :meth:`CombinatorialSearcher.fit`; JSON-serialisable."""

    child_counts: Dict[str, int] = field(default_factory=dict)  # "op|side|symbol"
    coverage_counts: Dict[str, int] = field(default_factory=dict)
    n_pairs: int = 0
    seed: int = 0
    version: int = STATE_VERSION

    def as_dict(self):
        return {"version": self.version, "seed": self.seed, "n_pairs": self.n_pairs,
                "child_counts": dict(sorted(self.child_counts.items())),
                "coverage_counts": dict(sorted(self.coverage_counts.items()))}

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported searcher state version {data.get('version')!r}")
        return cls(dict(data["child_counts"]), dict(data["coverage_counts"]),
                   data["n_pairs"], data["seed"], data["version"])


def _symbol(node):
    if isinstance(node, Leaf):
        return "M" if node.token.kind == MASK else node.token.value
    return node.op


def _coverage_bucket(used: int, k: int) -> str:
    if k == 0:
        return "0"
    return str(round(COVERAGE_BUCKETS * used / k))


class _Prior:
    def __init__(self, state: SearcherState):
        counts = state.child_counts
        totals = Counter()
        for key, n in counts.items():
            parent, side, _ = key.split("|")
            totals[(parent, side)] += n
        self.table = {}
        for parent in OPS + ("ROOT",):
            for side in ("L", "R") if parent != "ROOT" else ("T",):
                denom = totals[(parent, side)] + len(SYMBOLS)
                for sym in SYMBOLS:
                    self.table[(parent, side, sym)] = math.log((counts.get(f"{parent}|{side}|{sym}", 0) + 1) / denom)
        cov_total = sum(state.coverage_counts.values()) + COVERAGE_BUCKETS + 1
        self.coverage = {str(b): math.log((state.coverage_counts.get(str(b), 0) + 1) / cov_total)
                         for b in range(COVERAGE_BUCKETS + 1)}


def _apply(op, a, b):
    if op == "+":
        v = a + b
    elif op == "-":
        v = a - b
    elif op == "*":
        v = a * b
    elif op == "/":
        if b == 0:
            return None
        v = a / b
    else:
        if abs(b) > 12 or (a < 0 and not float(b).is_integer()) or (a == 0 and b < 0):
            return None
        try:
            v = a ** b
        except (OverflowError, ZeroDivisionError):
            return None
        if isinstance(v, complex):
            return None
    if not math.isfinite(v) or abs(v) > _MAX_ABS:
        return None
    return v


def _solve_right(op, target, left):
    """Value r with ``left op r == target`` (None when there is none)."""
    if op == "+":
        return target - left
    if op == "-":
        return left - target
    if op == "*":
        return target / left if left != 0 else None
    if op == "/":
        return left / target if target != 0 else None
    if left > 0 and left != 1 and target > 0:
        return math.log(target) / math.log(left)
    return None


def _key(v):
    return round(v, 6)


# enumeration nodes are plain tuples for speed
SCORE, VALUE, EXPR, SYM = range(4)


def _to_ast(expr):
    if expr[0] == "m":
        return Leaf(mask(expr[1]))
    if expr[0] == "c":
        return Leaf(const(expr[1]))
    return BinOp(expr[0], _to_ast(expr[1]), _to_ast(expr[2]))


def _normal_form(expr):
    if expr[0] in ("m", "c"):
        return f"{expr[0]}{expr[1]}"
    left, right = _normal_form(expr[1]), _normal_form(expr[2])
    if expr[0] in ("+", "*") and right < left:
        left, right = right, left
    return f"({left}{expr[0]}{right})"


def _masks_used(expr, acc):
    if expr[0] == "m":
        acc.add(expr[1])
    elif expr[0] != "c":
        _masks_used(expr[1], acc)
        _masks_used(expr[2], acc)
    return acc


class CombinatorialSearcher:
    """Answer-guided enumeration up to ``max_ops`` operators.

    ``per_value`` bounds how many expressions are kept for each distinct
    (size, value); ``max_finals`` bounds the matches scored per problem.
    With ``require_masks`` an equation must use at least one of the
    problem's numbers (when it has any).
    """

    def __init__(self, max_ops: int = 4, pi_value: float = DEFAULT_PI, per_value: int = 2,
                 max_finals: int = 2000, tolerance: float = 1e-4, require_masks: bool = True):
        if max_ops < 0:
            raise ValueError("max_ops must be non-negative")
        self.max_ops = max_ops
        self.pi_value = float(pi_value)
        self.per_value = per_value
        self.max_finals = max_finals
        self.tolerance = tolerance
        self.require_masks = require_masks

    def fit(self, pairs, seed: int = 0) -> SearcherState:
        child = Counter()
        coverage = Counter()
        n = 0
        for masked, eq in pairs:
            n += 1
            child[f"ROOT|T|{_symbol(eq.ast)}"] += 1
            stack = [eq.ast]
            while stack:
                node = stack.pop()
                if isinstance(node, BinOp):
                    child[f"{node.op}|L|{_symbol(node.left)}"] += 1
                    child[f"{node.op}|R|{_symbol(node.right)}"] += 1
                    stack.extend((node.left, node.right))
            used = len({t.value for t in eq.tokens if t.kind == MASK}) if eq.tokens else 0
            coverage[_coverage_bucket(used, masked.k)] += 1
        return SearcherState(dict(child), dict(coverage), n, seed)

    # enumeration -------------------------------------------------------------

    def _leaves(self, masked):
        leaves = [(0.0, float(v), ("m", i), "M") for i, v in enumerate(masked.values, start=1)]
        leaves.append((0.0, 1.0, ("c", "1"), "1"))
        leaves.append((0.0, 100.0, ("c", "100"), "100"))
        leaves.append((0.0, self.pi_value, ("c", "pi"), "pi"))
        return leaves

    def _layers(self, masked, prior, depth):
        """``layers[n]``: value-key -> best nodes with exactly n operators.

        A value already reachable with fewer operators is not stored again;
        any use of the larger form has a shorter equivalent.
        """
        cap = self.per_value
        layers = [dict() for _ in range(depth + 1)]
        for leaf in self._leaves(masked):
            layers[0].setdefault(_key(leaf[VALUE]), []).append(leaf)
        flat = [[n for b in layers[0].values() for n in b[:cap]]]
        seen = set(layers[0])
        table = prior.table
        for size in range(1, depth + 1):
            groups = layers[size]
            for a in range(size):
                b = size - 1 - a
                for left in flat[a]:
                    ls, lv, le = left[SYM], left[VALUE], left[EXPR]
                    lscore = left[SCORE]
                    for right in flat[b]:
                        rs, rv, re_ = right[SYM], right[VALUE], right[EXPR]
                        base = lscore + right[SCORE]
                        for op in OPS:
                            if op in ("+", "*") and (a > b or (a == b and le > re_)):
                                continue
                            v = _apply(op, lv, rv)
                            if v is None:
                                continue
                            key = _key(v)
                            if key in seen:
                                continue
                            score = base + table[(op, "L", ls)] + table[(op, "R", rs)]
                            bucket = groups.get(key)
                            if bucket is None:
                                groups[key] = [(score, v, (op, le, re_), op)]
                            elif len(bucket) < cap:
                                bucket.append((score, v, (op, le, re_), op))
                                bucket.sort(key=lambda n: -n[SCORE])
                            elif score > bucket[-1][SCORE]:
                                bucket[-1] = (score, v, (op, le, re_), op)
                                bucket.sort(key=lambda n: -n[SCORE])
            seen.update(groups)
            flat.append([n for bucket in groups.values() for n in bucket])
        return layers, flat

    def candidates(self, state: SearcherState, masked: MaskedProblem) -> List[Tuple[float, tuple]]:
        """Answer-matching expressions as ``(score, expr)``, deduplicated."""
        target = float(masked.problem.answer)
        prior = _Prior(state)
        table = prior.table
        depth = max(self.max_ops - 1, 0)
        layers, flat = self._layers(masked, prior, depth)
        tol = self.tolerance
        found = []
        for leaf in flat[0]:
            if abs(leaf[VALUE] - target) < tol:
                found.append((leaf[SCORE], leaf[EXPR]))
        for total in range(1, self.max_ops + 1):
            for a in range(total):
                b = total - 1 - a
                right_groups = layers[b]
                for left in flat[a]:
                    lv = left[VALUE]
                    for op in OPS:
                        if op in ("+", "*") and a > b:
                            continue
                        need = _solve_right(op, target, lv)
                        if need is None or not math.isfinite(need):
                            continue
                        bucket = right_groups.get(_key(need))
                        if not bucket:
                            continue
                        for right in bucket:
                            v = _apply(op, lv, right[VALUE])
                            if v is None or abs(v - target) >= tol:
                                continue
                            score = (left[SCORE] + right[SCORE] + table[(op, "L", left[SYM])]
                                     + table[(op, "R", right[SYM])])
                            found.append((score, (op, left[EXPR], right[EXPR])))
                            if len(found) >= self.max_finals:
                                return self._finalise(found, masked, prior)
        return self._finalise(found, masked, prior)

    def _finalise(self, found, masked, prior):
        best = {}
        for score, expr in found:
            used = len(_masks_used(expr, set()))
            if self.require_masks and masked.k and not used:
                continue
            root = expr[0] if expr[0] not in ("m", "c") else ("M" if expr[0] == "m" else expr[1])
            total = score + prior.table[("ROOT", "T", root)] + prior.coverage[_coverage_bucket(used, masked.k)]
            nf = _normal_form(expr)
            if nf not in best or total > best[nf][0]:
                best[nf] = (total, expr)
        return list(best.values())

    def beam_search(self, state: SearcherState, masked: MaskedProblem, width: int) -> List[Equation]:
        scored = []
        for score, expr in self.candidates(state, masked):
            eq = Equation.from_ast(_to_ast(expr))
            scored.append((-round(score, 9), len(eq.tokens), render(eq, BRACKET), eq))
        scored.sort(key=lambda t: t[:3])
        return [t[3] for t in scored[:width]]
