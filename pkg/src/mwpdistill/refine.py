"""Knowledge refine: iterative searcher fitting over the unsolved remainder."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence

from .distiller import Pair
from .equation import BRACKET, DEFAULT_PI, Equation, render, token_length
from .masking import MaskedProblem
from .validator import TOLERANCE, format_check, result_check

logger = logging.getLogger(__name__)

REFINE = "refine"
CONCISENESS_REPLACED = "conciseness_replaced"


class EmptySeedData(ValueError):
    pass


@dataclass(frozen=True)
class RefineConfig:
    beam_width: int = 5
    max_iterations: int = 5
    seed: int = 0
    conciseness_pass: bool = True
    concurrency: int = 1
    pi_value: float = DEFAULT_PI
    tolerance: Fraction = TOLERANCE

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


@dataclass
class PipelineState:
    S: List[Pair] = field(default_factory=list)
    U: List[MaskedProblem] = field(default_factory=list)
    Phi: List[Pair] = field(default_factory=list)
    iteration: int = 0
    refine_done: bool = False

    def ids(self):
        return ({p.id for p in self.S}, {m.id for m in self.U}, {p.id for p in self.Phi})

    def all_ids(self):
        s, u, phi = self.ids()
        if (s & u) or (s & phi) or (u & phi):
            raise AssertionError("S, U and Phi overlap")
        return s | u | phi

    def training_pairs(self):
        return [(p.masked, p.equation) for p in self.S + self.Phi]


def passes(eq: Equation, masked: MaskedProblem, pi_value=DEFAULT_PI, tolerance=TOLERANCE) -> bool:
    """Format and result check of a mask equation against its problem."""
    if not format_check(render(eq, BRACKET), masked.k).format_ok:
        return False
    return result_check(eq, masked.slots, masked.problem.answer, pi_value, tolerance)


def _order(eq):
    return token_length(eq), render(eq, BRACKET)


def select_shortest(candidates: Sequence[Equation], slots, answer, pi_value=DEFAULT_PI,
                    tolerance=TOLERANCE) -> Optional[Equation]:
    passing = [c for c in candidates if result_check(c, slots, answer, pi_value, tolerance)]
    if not passing:
        return None
    return min(passing, key=_order)


def _search_all(searcher, searcher_state, problems, cfg):
    def one(masked):
        beam = searcher.beam_search(searcher_state, masked, cfg.beam_width)[:cfg.beam_width]
        beam = [c for c in beam if format_check(render(c, BRACKET), masked.k).format_ok]
        return select_shortest(beam, masked.slots, masked.problem.answer, cfg.pi_value, cfg.tolerance)

    if cfg.concurrency > 1 and len(problems) > 1:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            return list(pool.map(one, problems))
    return [one(m) for m in problems]


def refine_iteration(state: PipelineState, searcher, searcher_state, cfg: RefineConfig):
    """One sweep over U.  Returns ``(new_state, new_searcher_state, n_moved)``."""
    found = _search_all(searcher, searcher_state, state.U, cfg)
    moved = sorted(((m, eq) for m, eq in zip(state.U, found) if eq is not None), key=lambda t: t[0].id)
    moved_ids = {m.id for m, _ in moved}
    new_state = PipelineState(
        S=list(state.S),
        U=[m for m in state.U if m.id not in moved_ids],
        Phi=list(state.Phi) + [Pair(m, eq, REFINE) for m, eq in moved],
        iteration=state.iteration + 1,
    )
    if moved:
        searcher_state = searcher.fit(new_state.training_pairs(), cfg.seed)
    logger.info("refine iteration %d: %d solved, %d remain", new_state.iteration, len(moved), len(new_state.U))
    return new_state, searcher_state, len(moved)


def run_refine(state: PipelineState, searcher, cfg: RefineConfig, searcher_state=None,
               on_iteration: Optional[Callable] = None, stop_after: Optional[int] = None):
    """Fit on S, then sweep U until ``max_iterations`` or a sweep that moves nothing.

    Passing ``searcher_state`` resumes a run from ``state.iteration``.
    ``on_iteration(state, searcher_state)`` is called after every sweep
    (checkpointing); ``stop_after`` limits the sweeps of this call.
    """
    if not state.S:
        raise EmptySeedData("refine needs at least one successfully distilled pair")
    if searcher_state is None:
        searcher_state = searcher.fit(state.training_pairs(), cfg.seed)
    if state.iteration >= cfg.max_iterations:
        state.refine_done = True
    sweeps = 0
    while not state.refine_done:
        if stop_after is not None and sweeps >= stop_after:
            break
        state, searcher_state, moved = refine_iteration(state, searcher, searcher_state, cfg)
        sweeps += 1
        state.refine_done = moved == 0 or state.iteration >= cfg.max_iterations or not state.U
        if on_iteration is not None:
            on_iteration(state, searcher_state)
    return state, searcher_state


@dataclass
class ConcisenessResult:
    pairs: List[Pair]
    shortened: Dict[str, bool]

    @property
    def fraction_shortened(self) -> Fraction:
        if not self.shortened:
            return Fraction(0)
        return Fraction(sum(self.shortened.values()), len(self.shortened))


def conciseness_pass(state: PipelineState, searcher, searcher_state, cfg: RefineConfig) -> ConcisenessResult:
    """Re-search every pair in S and keep a strictly shorter passing equation if found."""
    problems = [p.masked for p in state.S]
    found = _search_all(searcher, searcher_state, problems, cfg)
    pairs, shortened = [], {}
    for pair, eq in zip(state.S, found):
        better = eq is not None and token_length(eq) < token_length(pair.equation)
        shortened[pair.id] = better
        pairs.append(replace(pair, equation=eq, provenance=CONCISENESS_REPLACED) if better else pair)
    return ConcisenessResult(pairs, shortened)
