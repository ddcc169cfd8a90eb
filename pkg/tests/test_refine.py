from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwpdistill.distiller import Pair
from mwpdistill.equation import parse_text, render, token_length
from mwpdistill.masking import ProblemRecord, mask_problem
from mwpdistill.refine import (
    CONCISENESS_REPLACED, REFINE, EmptySeedData, PipelineState, RefineConfig, conciseness_pass, passes,
    refine_iteration, run_refine, select_shortest,
)
from mwpdistill.searcher import SearcherState


class FixtureSearcher:
    """Returns scripted beams once it has been fit on enough pairs."""

    def __init__(self, beams, needs=None):
        self.beams = beams          # id -> list of equation strings
        self.needs = needs or {}    # id -> pairs needed before the beam appears
        self.fits = []
        self.widths = []

    def fit(self, pairs, seed=0):
        self.fits.append(len(pairs))
        return SearcherState(n_pairs=len(pairs), seed=seed)

    def beam_search(self, state, masked, width):
        self.widths.append(width)
        if state.n_pairs < self.needs.get(masked.id, 0):
            return []
        return [parse_text(t) for t in self.beams.get(masked.id, [])]


def problem(i, a=3, b=5):
    return mask_problem(ProblemRecord(f"p{i:02d}", f"Ann has {a} pens and {b} cups.", a + b))


def seeded_state(n_s=2, n_u=4):
    S = [Pair(problem(i), parse_text("[Mask1]+[Mask2]"), "distill_stage1") for i in range(n_s)]
    U = [problem(i) for i in range(n_s, n_s + n_u)]
    return PipelineState(S, U)


def test_select_shortest_and_ties():
    m = problem(0)
    cands = [parse_text(t) for t in ("[Mask2]+[Mask1]", "[Mask1]+[Mask2]", "[Mask1]*[Mask1]-1",
                                      "[Mask1]+[Mask2]+[Mask1]-[Mask1]")]
    best = select_shortest(cands, m.slots, m.problem.answer)
    assert render(best) == "[Mask1]+[Mask2]"
    assert select_shortest([parse_text("[Mask1]")], m.slots, m.problem.answer) is None


def test_refine_moves_pairs_and_refits():
    state = seeded_state()
    beams = {"p02": ["[Mask1]*[Mask2]", "[Mask2]+[Mask1]"], "p03": ["[Mask1]+[Mask2]"],
             "p04": ["[Mask1]+[Mask2]+1-1"], "p05": ["[Mask1]"]}
    searcher = FixtureSearcher(beams, needs={"p04": 4})
    final, theta = run_refine(state, searcher, RefineConfig())
    ids = final.ids()
    assert ids[2] == {"p02", "p03", "p04"} and ids[1] == {"p05"}
    assert all(p.provenance == REFINE for p in final.Phi)
    # fit on S, refit on S + Phi after each productive sweep
    assert searcher.fits == [2, 4, 5]
    assert final.iteration == 3 and final.refine_done
    assert theta.n_pairs == 5
    for p in final.Phi:
        assert passes(p.equation, p.masked)


def test_early_exit_on_fixed_point():
    searcher = FixtureSearcher({"p02": ["[Mask1]+[Mask2]"]})
    final, _ = run_refine(seeded_state(), searcher, RefineConfig(max_iterations=5))
    assert final.iteration == 2  # second sweep moves nothing
    assert searcher.fits == [2, 3]


def test_zero_iterations():
    state = seeded_state()
    final, _ = run_refine(state, FixtureSearcher({"p02": ["[Mask1]+[Mask2]"]}), RefineConfig(max_iterations=0))
    assert final.iteration == 0 and final.refine_done and not final.Phi


def test_beam_width_one():
    searcher = FixtureSearcher({"p02": ["[Mask1]", "[Mask1]+[Mask2]"]})
    final, _ = run_refine(seeded_state(), searcher, RefineConfig(beam_width=1))
    assert not final.Phi
    assert set(searcher.widths) == {1}


def test_empty_seed():
    with pytest.raises(EmptySeedData):
        run_refine(PipelineState([], [problem(0)]), FixtureSearcher({}), RefineConfig())


def test_format_failing_candidates_skipped():
    m = mask_problem(ProblemRecord("p02", "Ann has 3 pens and 5 cups.", 8))
    state = PipelineState([Pair(problem(0), parse_text("[Mask1]+[Mask2]"), "distill_stage1")], [m])
    # [Mask3] is out of range for a two-number problem
    searcher = FixtureSearcher({"p02": ["[Mask3]"]})
    new, _, moved = refine_iteration(state, searcher, SearcherState(), RefineConfig())
    assert moved == 0 and new.U == [m]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.integers(0, 6))
def test_conservation_and_monotonicity(needs, max_iter):
    n_s = 2
    state = seeded_state(n_s, len(needs))
    beams = {f"p{n_s + i:02d}": ["[Mask1]+[Mask2]"] if need < 4 else ["[Mask2]"] for i, need in enumerate(needs)}
    searcher = FixtureSearcher(beams, {f"p{n_s + i:02d}": n_s + need for i, need in enumerate(needs)})
    everything = state.all_ids()
    history = []
    run_refine(state, searcher, RefineConfig(max_iterations=max_iter),
               on_iteration=lambda st_, th: history.append(st_))
    prev = set()
    for st_ in history:
        assert st_.all_ids() == everything
        phi = st_.ids()[2]
        assert prev <= phi
        prev = phi
    assert len(history) <= max_iter


def test_conciseness_pass_rules():
    long_pair = Pair(problem(0), parse_text("[Mask1]+[Mask2]+1-1"), "distill_stage1")
    same_pair = Pair(problem(1), parse_text("[Mask2]+[Mask1]"), "distill_stage2")
    no_pair = Pair(problem(2), parse_text("[Mask1]+[Mask2]*1"), "distill_correction")
    state = PipelineState([long_pair, same_pair, no_pair], [])
    beams = {"p00": ["[Mask1]+[Mask2]"], "p01": ["[Mask1]+[Mask2]"], "p02": ["[Mask1]"]}
    result = conciseness_pass(state, FixtureSearcher(beams), SearcherState(), RefineConfig())
    assert result.shortened == {"p00": True, "p01": False, "p02": False}
    assert [render(p.equation) for p in result.pairs] == ["[Mask1]+[Mask2]", "[Mask2]+[Mask1]", "[Mask1]+[Mask2]*1"]
    assert result.pairs[0].provenance == CONCISENESS_REPLACED
    assert result.pairs[1].provenance == "distill_stage2"
    assert result.fraction_shortened == Fraction(1, 3)
    for old, new in zip(state.S, result.pairs):
        assert token_length(new.equation) <= token_length(old.equation)
        assert passes(new.equation, new.masked)


def test_refine_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(beam_width=0)
    with pytest.raises(ValueError):
        RefineConfig(max_iterations=-1)
