"""Dataset ingestion, checkpoints, training-set export and recall reports."""
from __future__ import annotations

import csv
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from . import __version__
from .distiller import DISTILL_STAGES, DistillOutcome, Pair
from .equation import BRACKET, DEFAULT_PI, parse_text, render
from .masking import ProblemRecord, mask_problem, strip_masks
from .refine import REFINE, ConcisenessResult, PipelineState
from .searcher import SearcherState
from .validator import TOLERANCE, format_check, is_near_miss, result_check

logger = logging.getLogger(__name__)

FORMATS = ("math23k_json", "weak12k_json", "csv")
WEAK, FULL = "weak", "full"

DEFAULT_ALIASES = {
    "id": ("id", "iIndex", "index", "qid"),
    "text": ("original_text", "text", "question", "sQuestion", "segmented_text", "body"),
    "answer": ("ans", "answer", "lSolutions", "solution"),
    "equation": ("equation", "lEquations", "expression"),
}

CHECKPOINT_FORMAT = 1
VAR_BUCKETS = ("1", "2", "3", "4", "5", ">=6")
REPORT_STAGES = DISTILL_STAGES + (REFINE,)


class DatasetError(ValueError):
    pass


class MalformedRecord(DatasetError):
    def __init__(self, problems: Sequence[str], total: int):
        self.problems = list(problems)
        self.total = total
        preview = "; ".join(self.problems[:5])
        super().__init__(f"{len(self.problems)} of {total} records malformed: {preview}")


class CheckpointError(ValueError):
    pass


@dataclass
class DatasetFile:
    records: List[ProblemRecord]
    supervision: str
    malformed: List[str] = field(default_factory=list)


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

_MIXED_RE = re.compile(r"^(\d+)\s*\(\s*(\d+)\s*/\s*(\d+)\s*\)$")


def parse_answer(raw) -> Fraction:
    """Answers as exact rationals: ints, decimals, ``25%``, ``1/2``, ``(1/2)``, ``3(1/2)``."""
    if isinstance(raw, list) and len(raw) == 1:
        raw = raw[0]
    if isinstance(raw, bool) or raw is None:
        raise ValueError(f"bad answer {raw!r}")
    if isinstance(raw, int):
        return Fraction(raw)
    if isinstance(raw, float):
        if raw != raw or raw in (float("inf"), float("-inf")):
            raise ValueError("answer is not finite")
        return Fraction(repr(raw))
    text = str(raw).strip().replace(",", "").replace(" ", "")
    if not text:
        raise ValueError("empty answer")
    percent = text.endswith("%") or text.endswith("％")
    if percent:
        text = text[:-1]
    m = _MIXED_RE.match(text)
    if m:
        value = int(m.group(1)) + Fraction(int(m.group(2)), int(m.group(3)))
    else:
        if text.startswith("(") and text.endswith(")"):
            text = text[1:-1]
        value = Fraction(text)
    return value / 100 if percent else value


def _read_objects(path: Path) -> List[dict]:
    text = path.read_text(encoding="utf-8-sig")
    decoder = json.JSONDecoder()
    objects, pos = [], 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        try:
            obj, pos = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON at offset {pos}: {exc.msg}") from exc
        if isinstance(obj, list):
            objects.extend(obj)
        else:
            objects.append(obj)
    return objects


def _pick(obj, names):
    for name in names:
        if name in obj and obj[name] not in (None, ""):
            return obj[name]
    return None


def load_dataset(path, format: str = "math23k_json", supervision: str = WEAK,
                 aliases: Optional[Dict[str, Iterable[str]]] = None,
                 malformed_threshold: float = 0.01) -> DatasetFile:
    path = Path(path)
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}")
    if supervision not in (WEAK, FULL):
        raise DatasetError(f"unknown supervision {supervision!r}")
    names = {k: tuple(v) for k, v in DEFAULT_ALIASES.items()}
    for key, extra in (aliases or {}).items():
        names[key] = tuple(extra) + names.get(key, ())
    if not path.exists():
        raise DatasetError(f"{path} does not exist")

    if format == "csv":
        with path.open(encoding="utf-8-sig", newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = _read_objects(path)

    records, malformed, seen = [], [], set()
    for n, row in enumerate(rows, start=1):
        if not isinstance(row, dict):
            malformed.append(f"record {n}: not an object")
            continue
        rid = _pick(row, names["id"])
        rid = str(rid) if rid is not None else str(n)
        text = _pick(row, names["text"])
        raw_answer = _pick(row, names["answer"])
        if text is None or raw_answer is None:
            malformed.append(f"{rid}: missing {'text' if text is None else 'answer'}")
            continue
        try:
            answer = parse_answer(raw_answer)
        except (ValueError, ZeroDivisionError):
            malformed.append(f"{rid}: unparseable answer {raw_answer!r}")
            continue
        if rid in seen:
            malformed.append(f"{rid}: duplicate id")
            continue
        seen.add(rid)
        equation = _pick(row, names["equation"]) if supervision == FULL else None
        if isinstance(equation, list):
            equation = equation[0] if equation else None
        records.append(ProblemRecord(rid, str(text).strip(), answer, equation))

    total = len(rows)
    if malformed:
        if total == 0 or len(malformed) / total > malformed_threshold:
            raise MalformedRecord(malformed, total)
        logger.warning("skipped %d malformed records of %d", len(malformed), total)
    return DatasetFile(records, supervision, malformed)


# --------------------------------------------------------------------------
# Serialisation helpers
# --------------------------------------------------------------------------

def fraction_str(value: Fraction) -> str:
    value = Fraction(value)
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def record_to_dict(record: ProblemRecord) -> dict:
    return {"id": record.id, "text": record.text, "answer": fraction_str(record.answer)}


def record_from_dict(data: dict) -> ProblemRecord:
    return ProblemRecord(data["id"], data["text"], Fraction(data["answer"]))


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _natural_key(text: str):
    return [(0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.split(r"(\d+)", text) if p]


def sort_ids(ids: Iterable[str]) -> List[str]:
    return sorted(ids, key=_natural_key)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

@dataclass
class RunCheckpoint:
    config_hash: str
    seed: int
    records: List[ProblemRecord]
    outcomes: Dict[str, dict] = field(default_factory=dict)
    state: Optional[PipelineState] = None
    searcher_state: Optional[SearcherState] = None
    conciseness: Optional[ConcisenessResult] = None
    pipeline_version: str = __version__

    def record_map(self):
        return {r.id: r for r in self.records}

    @property
    def distill_complete(self):
        return len(self.outcomes) == len(self.records)

    def build_state(self) -> PipelineState:
        """Partition distilled records into S and U, in dataset order."""
        S, U = [], []
        for record in self.records:
            info = self.outcomes.get(record.id)
            if info is None:
                continue
            masked = mask_problem(record)
            if info["status"] == "Success":
                S.append(Pair(masked, parse_text(info["equation"]), info["provenance"]))
            else:
                U.append(masked)
        return PipelineState(S, U, [], 0)

    def to_dict(self) -> dict:
        def pair(p):
            return {"id": p.id, "equation": render(p.equation, BRACKET), "provenance": p.provenance}

        data = {
            "format": CHECKPOINT_FORMAT,
            "pipeline_version": self.pipeline_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "records": [record_to_dict(r) for r in self.records],
            "outcomes": {k: self.outcomes[k] for k in sort_ids(self.outcomes)},
            "state": None,
            "searcher_state": self.searcher_state.as_dict() if self.searcher_state else None,
            "conciseness": None,
        }
        if self.state is not None:
            data["state"] = {
                "S": [pair(p) for p in self.state.S],
                "U": [m.id for m in self.state.U],
                "Phi": [pair(p) for p in self.state.Phi],
                "iteration": self.state.iteration,
                "refine_done": self.state.refine_done,
            }
        if self.conciseness is not None:
            data["conciseness"] = {"pairs": [pair(p) for p in self.conciseness.pairs],
                                   "shortened": self.conciseness.shortened}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunCheckpoint":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {data.get('format')!r}")
        records = [record_from_dict(r) for r in data["records"]]
        by_id = {r.id: r for r in records}
        masked = {}

        def masked_of(rid):
            if rid not in masked:
                masked[rid] = mask_problem(by_id[rid])
            return masked[rid]

        def pair(d):
            return Pair(masked_of(d["id"]), parse_text(d["equation"]), d["provenance"])

        ckpt = cls(data["config_hash"], data["seed"], records, dict(data["outcomes"]),
                   pipeline_version=data["pipeline_version"])
        st = data.get("state")
        if st is not None:
            ckpt.state = PipelineState([pair(d) for d in st["S"]], [masked_of(i) for i in st["U"]],
                                       [pair(d) for d in st["Phi"]], st["iteration"], st["refine_done"])
        if data.get("searcher_state"):
            ckpt.searcher_state = SearcherState.from_dict(data["searcher_state"])
        if data.get("conciseness"):
            c = data["conciseness"]
            ckpt.conciseness = ConcisenessResult([pair(d) for d in c["pairs"]], dict(c["shortened"]))
        return ckpt

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RunCheckpoint":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(data)


def outcome_summary(outcome: DistillOutcome, provenance: Optional[str], masked=None) -> dict:
    """JSON-able record of one distill outcome.

    With ``masked`` an unsuccessful outcome is marked ``near_miss`` when some
    attempt landed within [1e-4, 1e-2) of the answer (diagnostic only).
    """
    near = False
    if masked is not None and not outcome.success:
        near = any(a.equation is not None and is_near_miss(a.equation, masked.slots, masked.problem.answer)
                   for a in outcome.attempts)
    return {
        "status": outcome.status,
        "near_miss": near,
        "stage": outcome.stage,
        "equation": render(outcome.equation, BRACKET) if outcome.equation is not None else None,
        "provenance": provenance,
        "client_error": outcome.client_error,
        "attempts": [a.as_dict() for a in outcome.attempts],
    }


# --------------------------------------------------------------------------
# Export and validation
# --------------------------------------------------------------------------

EXPORT_FIELDS = ("id", "masked_text", "mask_equation", "answer", "provenance")


def final_pairs(state: PipelineState, conciseness: Optional[ConcisenessResult] = None) -> List[Pair]:
    base = conciseness.pairs if conciseness is not None else state.S
    return list(base) + list(state.Phi)


def export_lines(pairs: Sequence[Pair], style: str = BRACKET) -> List[str]:
    by_id = {p.id: p for p in pairs}
    if len(by_id) != len(pairs):
        raise ValueError("duplicate problem ids in export")
    lines = []
    for pid in sort_ids(by_id):
        p = by_id[pid]
        row = {
            "id": p.id,
            "masked_text": p.masked.masked_text,
            "mask_equation": render(p.equation, style),
            "answer": fraction_str(p.masked.problem.answer),
            "provenance": p.provenance,
        }
        lines.append(json.dumps(row, ensure_ascii=False))
    return lines


def export_training_set(pairs: Sequence[Pair], path, style: str = BRACKET) -> Path:
    lines = export_lines(pairs, style)
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return Path(path)


def validate_export(path, pi_value=DEFAULT_PI, tolerance=TOLERANCE) -> List[tuple]:
    """Re-check every exported pair; returns ``[(id, reason), ...]`` for failures."""
    failures = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            rid = str(row["id"])
            masked_text, eq_text = row["masked_text"], row["mask_equation"]
            answer = Fraction(row["answer"])
        except (ValueError, KeyError, TypeError) as exc:
            failures.append((f"line {n}", f"unreadable record: {exc}"))
            continue
        text = strip_masks(masked_text)
        record = ProblemRecord(rid, text, answer)
        masked = mask_problem(record)
        if masked.masked_text != masked_text:
            failures.append((rid, "masked_text does not match its own number slots"))
            continue
        report = format_check(eq_text, masked.k)
        if not report.format_ok:
            kind = report.error.value if report.error else "unclassified"
            failures.append((rid, f"format check failed ({kind})"))
            continue
        if not result_check(report.equation, masked.slots, answer, pi_value, tolerance):
            failures.append((rid, "result check failed"))
    return failures


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def _bucket(k: int) -> str:
    if k >= 6:
        return ">=6"
    return str(k)


@dataclass
class RecallReport:
    n: int
    by_variable_count: Dict[str, Fraction]
    variable_counts: Dict[str, tuple]  # bucket -> (solved, total)
    by_stage: Dict[str, Fraction]
    stage_counts: Dict[str, int]
    distilled: Fraction
    total: Fraction
    conciseness_shortened: Optional[Fraction] = None
    near_misses: int = 0
    percent_problems: tuple = (0, 0)  # (solved, total) with a % number in the text

    def check_accounting(self):
        if sum(self.by_stage.values(), Fraction(0)) != self.total:
            raise AssertionError("stage recalls do not sum to total recall")

    def as_dict(self) -> dict:
        def f(x):
            return {"fraction": fraction_str(x), "value": float(x)}

        return {
            "n": self.n,
            "by_variable_count": {b: {**f(v), "solved": self.variable_counts[b][0],
                                      "total": self.variable_counts[b][1]}
                                  for b, v in self.by_variable_count.items()},
            "by_stage": {s: {**f(v), "count": self.stage_counts[s]} for s, v in self.by_stage.items()},
            "successfully_searched": f(self.distilled),
            "total": f(self.total),
            "conciseness_shortened": f(self.conciseness_shortened) if self.conciseness_shortened is not None else None,
            "near_misses": self.near_misses,
            "percent_problems": {"solved": self.percent_problems[0], "total": self.percent_problems[1]},
        }

    def table(self) -> str:
        def pct(x):
            return f"{100 * float(x):6.1f}"

        rows = [("Variables", "Solved", "Total", "Recall%")]
        for b, v in self.by_variable_count.items():
            solved, total = self.variable_counts[b]
            rows.append((b, str(solved), str(total), pct(v)))
        rows.append(("", "", "", ""))
        rows.append(("Stage", "Count", "", "Recall%"))
        for s, v in self.by_stage.items():
            rows.append((s, str(self.stage_counts[s]), "", pct(v)))
        rows.append(("successfully_searched", str(sum(self.stage_counts[s] for s in DISTILL_STAGES)),
                     "", pct(self.distilled)))
        rows.append(("total", str(sum(self.stage_counts.values())), str(self.n), pct(self.total)))
        if self.conciseness_shortened is not None:
            rows.append(("conciseness_shortened", "", "", pct(self.conciseness_shortened)))
        rows.append(("unsolved_near_misses", str(self.near_misses), "", ""))
        solved, total = self.percent_problems
        rows.append(("percent_in_text", str(solved), str(total), pct(Fraction(solved, total) if total else 0)))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in
                                   enumerate(zip(r, widths))).rstrip() for r in rows)


def recall_report(state: PipelineState, outcomes: Dict[str, dict],
                  conciseness: Optional[ConcisenessResult] = None) -> RecallReport:
    """Recall by number-slot count and by the stage that produced each pair."""
    everything = list(state.S) + list(state.Phi)
    solved_ids = {p.id for p in everything}
    problems = [p.masked for p in everything] + list(state.U)
    n = len(problems)

    counts = {b: [0, 0] for b in VAR_BUCKETS}
    for m in problems:
        b = _bucket(m.k)
        counts.setdefault(b, [0, 0])
        counts[b][1] += 1
        if m.id in solved_ids:
            counts[b][0] += 1
    order = (["0"] if "0" in counts else []) + list(VAR_BUCKETS)
    by_var = {b: Fraction(counts[b][0], counts[b][1]) if counts[b][1] else Fraction(0) for b in order}

    stage_counts = {s: 0 for s in REPORT_STAGES}
    for p in state.S:
        stage = (outcomes.get(p.id) or {}).get("stage")
        if stage not in DISTILL_STAGES:
            raise ValueError(f"pair {p.id} has no distill stage attribution")
        stage_counts[stage] += 1
    stage_counts[REFINE] = len(state.Phi)
    by_stage = {s: Fraction(c, n) if n else Fraction(0) for s, c in stage_counts.items()}
    distilled = Fraction(len(state.S), n) if n else Fraction(0)
    total = Fraction(len(solved_ids), n) if n else Fraction(0)
    unsolved = {m.id for m in state.U}
    near = sum(1 for rid in unsolved if (outcomes.get(rid) or {}).get("near_miss"))
    pct_ids = [m.id for m in problems if any(s.percent_flag for s in m.slots)]
    report = RecallReport(n, by_var, {b: tuple(counts[b]) for b in order}, by_stage, stage_counts,
                          distilled, total,
                          conciseness.fraction_shortened if conciseness is not None else None,
                          near, (sum(1 for i in pct_ids if i in solved_ids), len(pct_ids)))
    report.check_accounting()
    return report
