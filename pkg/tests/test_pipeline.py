import json
from fractions import Fraction

import pytest

from conftest import TABLE1_TEXT
from mwpdistill.config import ConfigError, Config, config_from_dict, load_config
from mwpdistill.distiller import Pair
from mwpdistill.equation import parse_text
from mwpdistill.masking import ProblemRecord, mask_problem
from mwpdistill.pipeline import (
    FULL, DatasetError, MalformedRecord, RunCheckpoint, export_lines, export_training_set, load_dataset,
    parse_answer, recall_report, sort_ids, validate_export,
)
from mwpdistill.refine import ConcisenessResult, PipelineState


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_math23k_json_array(tmp_path):
    rows = [{"id": "1", "original_text": TABLE1_TEXT, "ans": "4", "equation": "x=20-12-2-2"},
            {"id": "2", "original_text": "A shop sells 25% of 80 pens.", "ans": "25%"},
            {"id": "3", "original_text": "Split 7 into halves.", "ans": "3(1/2)"}]
    path = write(tmp_path / "d.json", json.dumps(rows))
    data = load_dataset(path)
    assert [r.id for r in data.records] == ["1", "2", "3"]
    assert [r.answer for r in data.records] == [4, Fraction(1, 4), Fraction(7, 2)]
    assert data.records[0].reference_equation is None  # weak supervision drops equations
    full = load_dataset(path, supervision=FULL)
    assert full.records[0].reference_equation == "x=20-12-2-2"


def test_load_line_delimited_and_aliases(tmp_path):
    lines = [json.dumps({"iIndex": 7, "sQuestion": "Ann has 3 pens.", "lSolutions": [3.0]}),
             json.dumps({"qno": "x9", "body_text": "Bob has 2 cups.", "answer": 2})]
    path = write(tmp_path / "d.jsonl", "\n".join(lines))
    with pytest.raises(MalformedRecord):
        load_dataset(path, "weak12k_json")
    data = load_dataset(path, "weak12k_json", aliases={"id": ["qno"], "text": ["body_text"]})
    assert [(r.id, r.text, r.answer) for r in data.records] == [("7", "Ann has 3 pens.", 3), ("x9", "Bob has 2 cups.", 2)]


def test_load_csv(tmp_path):
    path = write(tmp_path / "d.csv", "id,text,answer\na,Ann has 3 pens.,3\nb,Bob has 0.5 kg.,0.5\n")
    data = load_dataset(path, "csv")
    assert [r.answer for r in data.records] == [3, Fraction(1, 2)]


def test_malformed_threshold(tmp_path):
    rows = [{"id": str(i), "original_text": f"Ann has {i} pens.", "ans": str(i)} for i in range(1, 200)]
    rows.append({"id": "bad", "original_text": "No answer here."})
    path = write(tmp_path / "d.json", json.dumps(rows))
    data = load_dataset(path)
    assert len(data.records) == 199 and data.malformed == ["bad: missing answer"]
    rows.append({"id": "bad2", "original_text": "x", "ans": "abc"})
    rows.append({"id": "1", "original_text": "dup", "ans": "1"})
    write(path, json.dumps(rows))
    with pytest.raises(MalformedRecord) as info:
        load_dataset(path)
    assert len(info.value.problems) == 3


def test_load_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.json")
    with pytest.raises(DatasetError):
        load_dataset(write(tmp_path / "bad.json", "[{"))
    with pytest.raises(DatasetError):
        load_dataset(write(tmp_path / "ok.json", "[]"), "xml")


@pytest.mark.parametrize("raw,value", [("4", 4), (4, 4), (0.25, Fraction(1, 4)), ("25%", Fraction(1, 4)),
                                       ("(1/3)", Fraction(1, 3)), ("1,200", 1200), ([2.5], Fraction(5, 2))])
def test_parse_answer(raw, value):
    assert parse_answer(raw) == value


def test_sort_ids_natural():
    assert sort_ids(["p10", "p2", "p1", "q", "10", "9"]) == ["9", "10", "p1", "p2", "p10", "q"]


def _pairs():
    m1 = mask_problem(ProblemRecord("p2", TABLE1_TEXT, 4))
    m2 = mask_problem(ProblemRecord("p10", "Ann has 3 pens and 5 cups.", 8))
    return [Pair(m2, parse_text("[Mask1]+[Mask2]"), "refine"),
            Pair(m1, parse_text("[Mask2]-[Mask1]-[Mask3]-[Mask3]"), "distill_stage1")]


def test_export_sorted_and_valid(tmp_path):
    path = export_training_set(_pairs(), tmp_path / "train.jsonl")
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["id"] for r in rows] == ["p2", "p10"]
    assert list(rows[0]) == ["id", "masked_text", "mask_equation", "answer", "provenance"]
    assert validate_export(path) == []
    # export is a pure function of its pairs
    assert export_lines(_pairs()) == export_lines(list(reversed(_pairs())))


def test_export_styles():
    assert json.loads(export_lines(_pairs(), "temp")[0])["mask_equation"] == "temp_b-temp_a-temp_c-temp_c"
    assert json.loads(export_lines(_pairs(), "index")[0])["mask_equation"] == "N1-N0-N2-N2"


def test_validate_flags_corruption(tmp_path):
    path = export_training_set(_pairs(), tmp_path / "train.jsonl")
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    rows[1]["mask_equation"] = "[Mask1]*[Mask2]"
    rows[0]["mask_equation"] = "[Mask9]"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    failures = dict(validate_export(path))
    assert set(failures) == {"p2", "p10"}
    assert "result" in failures["p10"] and "format" in failures["p2"]


def _report_state():
    pairs = _pairs()
    u = mask_problem(ProblemRecord("p3", "Ann has 3 pens, 4 cups, 5 hats, 6 mugs, 7 caps, 8 pots.", 1))
    state = PipelineState([pairs[1]], [u], [pairs[0]], 1, True)
    outcomes = {"p2": {"stage": "equation_generation"}}
    return state, outcomes


def test_recall_report_accounting():
    state, outcomes = _report_state()
    report = recall_report(state, outcomes)
    assert report.n == 3
    assert report.variable_counts["2"] == (1, 1)
    assert report.variable_counts["3"] == (1, 1)
    assert report.variable_counts[">=6"] == (0, 1)
    assert report.stage_counts == {"equation_generation": 1, "mask_equation_generation": 0,
                                   "format_correction": 0, "refine": 1}
    assert sum(report.by_stage.values()) == report.total == Fraction(2, 3)
    assert report.distilled == Fraction(1, 3)
    table = report.table()
    assert "successfully_searched" in table and "refine" in table
    assert report.as_dict()["total"]["fraction"] == "2/3"


def test_recall_report_needs_attribution():
    state, _ = _report_state()
    with pytest.raises(ValueError):
        recall_report(state, {})


def test_checkpoint_round_trip(tmp_path):
    state, outcomes = _report_state()
    records = [p.masked.problem for p in state.S + state.Phi] + [m.problem for m in state.U]
    conc = ConcisenessResult(list(state.S), {"p2": False})
    ckpt = RunCheckpoint("abc", 3, records, {k: {"status": "Success", **v} for k, v in outcomes.items()},
                         state, None, conc)
    path = tmp_path / "run.json"
    ckpt.save(path)
    again = RunCheckpoint.load(path)
    assert again.to_dict() == ckpt.to_dict()
    assert again.state.ids() == state.ids()
    assert not list(tmp_path.glob(".*.tmp"))


def test_config_rejects_secrets_and_unknown(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"api_key": "sk-123"})
    with pytest.raises(ConfigError):
        config_from_dict({"beam_wdth": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"beam_width": 0})
    cfg = load_config(write(tmp_path / "c.yaml", "beam_width: 3\npi: 3.14159\nprompts:\n  mask_solve: 'Q {mask_question}'\n"))
    assert cfg.beam_width == 3 and cfg.prompts.mask_solve == "Q {mask_question}"


def test_config_hash_tracks_acceptance_settings():
    base = Config().hash()
    assert Config(beam_width=3).hash() != base
    assert Config(pi=3.14159).hash() != base
    assert Config(tolerance="1/1000").hash() != base
    assert config_from_dict({"prompts": {"cot_solve": "Q: {question} {answer}"}}).hash() != base
    # transport settings do not change what gets accepted
    assert Config(requests_per_minute=5, model="other").hash() == base


def test_report_diagnostics():
    from mwpdistill.clients import ScriptedClient
    from mwpdistill.distiller import DistillSettings, Distiller
    from mwpdistill.pipeline import outcome_summary

    record = ProblemRecord("p5", "A tank holds 3 litres and leaks 25% of it.", Fraction("0.7499"))
    client = ScriptedClient({"p5": [{"reply": "ok"}, {"reply": "x = 3*25%"}, {"reply": "x = 3*0.25"},
                                    {"reply": "ok"}, {"reply": "x = [Mask1]"}]}, strict=False)
    out = Distiller(client, settings=DistillSettings(max_attempts=1)).distill_problem(record)
    m = mask_problem(record)
    summary = outcome_summary(out, None, m)
    assert not out.success and summary["near_miss"]  # 0.75 vs 0.7499
    state, outcomes = _report_state()
    state.U.append(m)
    outcomes["p5"] = summary
    report = recall_report(state, outcomes)
    assert report.near_misses == 1
    assert report.percent_problems == (0, 1)
