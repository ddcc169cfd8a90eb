"""Knowledge distilling: equation generation, mask-equation generation and
format correction against a chat-completion client."""
from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .clients import ChatClient, ClientError
from .equation import DEFAULT_PI, Equation, format_number
from .masking import MaskedProblem, ProblemRecord, mask_problem
from .validator import TOLERANCE, CheckReport, FormatErrorKind, full_check

logger = logging.getLogger(__name__)

STAGE_EQUATION = 1
STAGE_MASK = 2

EQUATION_GENERATION = "equation_generation"
MASK_EQUATION_GENERATION = "mask_equation_generation"
FORMAT_CORRECTION = "format_correction"
DISTILL_STAGES = (EQUATION_GENERATION, MASK_EQUATION_GENERATION, FORMAT_CORRECTION)

PROVENANCE = {
    EQUATION_GENERATION: "distill_stage1",
    MASK_EQUATION_GENERATION: "distill_stage2",
    FORMAT_CORRECTION: "distill_correction",
}


class AttemptStatus(str, enum.Enum):
    ACCEPTED = "Accepted"
    FORMAT_TIMEOUT = "FormatTimeout"
    RESULT_FAIL = "ResultFail"
    UNCLASSIFIABLE = "Unclassifiable"


DEFAULT_CORRECTIONS = {
    FormatErrorKind.IMPROPER_PERCENT.value:
        "Your expression \"{output}\" uses the % sign. Percentages in the question are already "
        "converted to fractions, so drop every %. Reply with the corrected expression only, in the form x = ...",
    FormatErrorKind.LATEX_NOTATION.value:
        "Your expression \"{output}\" uses LaTeX notation. Rewrite it in plain text with only "
        "+ - * / ^ and parentheses. Reply with the corrected expression only, in the form x = ...",
    FormatErrorKind.MULTIPLE_EXPRESSIONS.value:
        "Your reply \"{output}\" contains more than one expression. Combine them into a single "
        "expression for x without intermediate variables. Reply with that expression only.",
    FormatErrorKind.EXTRANEOUS_TEXT.value:
        "Your reply \"{output}\" contains text besides the expression{recovered_hint}. "
        "Reply with the expression only, in the form x = ..., without words or units.",
    FormatErrorKind.NON_COMPLIANT_NUMBER.value:
        "Your expression \"{output}\" contains numbers or variables that are not allowed. Use only "
        "the quantities given in the question, the constants 1, 100 and pi, and no other variables. "
        "Do not merge intermediate results into new numbers. Reply with the corrected expression only.",
    "generic":
        "Your reply \"{output}\" is not a valid expression. Reply with a single arithmetic expression "
        "of the form x = ... using only + - * / ^, parentheses and the allowed quantities.",
}


@dataclass(frozen=True)
class PromptTemplates:
    cot_solve: str = (
        "Question: {question}\nAnswer: {answer}\n"
        "Use chain-of-thought reasoning to outline the detailed solution process that leads to this answer."
    )
    extract_knowledge: str = (
        "Summarize the solution process above as one arithmetic expression of the form x = ... "
        "Use only the quantities from the question (write placeholders such as [Mask1] exactly as "
        "they appear if the question uses them), the operators + - * / ^, parentheses and the "
        "constants 1, 100 and pi. Do not merge intermediate results. Output only the expression."
    )
    mask_solve: str = (
        "Question: {mask_question}\n"
        "Every number in the question is followed by a placeholder such as [Mask1]. Use "
        "chain-of-thought reasoning to outline the detailed solution process, referring to the "
        "numbers through their placeholders and disregarding their numerical values."
    )
    correction: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CORRECTIONS))

    def render_cot(self, record: ProblemRecord) -> str:
        return self.cot_solve.format(question=record.text, answer=format_number(record.answer))

    def render_mask(self, masked: MaskedProblem) -> str:
        return self.mask_solve.format(mask_question=masked.masked_text)

    def render_correction(self, error: Optional[FormatErrorKind], output: str, recovered=None) -> str:
        key = error.value if error is not None else "generic"
        template = self.correction.get(key) or self.correction["generic"]
        hint = f" (the expression seems to be \"{recovered}\")" if recovered else ""
        return template.format(output=output.strip(), recovered=recovered or "", recovered_hint=hint)

    def as_dict(self):
        return {"cot_solve": self.cot_solve, "extract_knowledge": self.extract_knowledge,
                "mask_solve": self.mask_solve, "correction": dict(sorted(self.correction.items()))}

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PromptTemplates":
        data = dict(data or {})
        corrections = dict(DEFAULT_CORRECTIONS)
        corrections.update(data.pop("correction", None) or {})
        unknown = set(data) - {"cot_solve", "extract_knowledge", "mask_solve"}
        if unknown:
            raise ValueError(f"unknown prompt keys: {sorted(unknown)}")
        return cls(correction=corrections, **data)


@dataclass(frozen=True)
class DistillSettings:
    max_attempts: int = 3
    max_corrections: int = 5
    client_retries: int = 3
    backoff_seconds: float = 1.0
    temperature_fresh: float = 0.7
    temperature_correction: float = 0.0
    pi_value: float = DEFAULT_PI
    tolerance: Fraction = TOLERANCE


@dataclass
class AttemptResult:
    round: int
    iteration: int
    raw_text: str
    equation: Optional[Equation] = None
    corrections_used: int = 0
    status: AttemptStatus = AttemptStatus.FORMAT_TIMEOUT
    errors: List[Optional[str]] = field(default_factory=list)
    value: Optional[float] = None
    conversation: List[Tuple[str, str]] = field(default_factory=list, repr=False)

    def as_dict(self):
        return {"round": self.round, "iteration": self.iteration, "raw_text": self.raw_text,
                "equation": str(self.equation) if self.equation is not None else None,
                "corrections_used": self.corrections_used, "status": self.status.value,
                "errors": list(self.errors), "value": self.value}


@dataclass
class DistillOutcome:
    problem_id: str
    status: str  # "Success" | "Unsuccessful"
    equation: Optional[Equation]
    transcript: List[dict]
    attempts: List[AttemptResult]
    stage: Optional[str] = None
    client_error: bool = False

    @property
    def success(self):
        return self.status == "Success"


@dataclass(frozen=True)
class Pair:
    """An accepted problem-equation pair in mask space."""

    masked: MaskedProblem
    equation: Equation
    provenance: str

    @property
    def id(self):
        return self.masked.id


@dataclass
class StageStats:
    total: int = 0
    counts: Dict[str, int] = field(default_factory=lambda: {s: 0 for s in DISTILL_STAGES})

    @property
    def successes(self):
        return sum(self.counts.values())

    def recall(self, stage=None) -> Fraction:
        if not self.total:
            return Fraction(0)
        n = self.successes if stage is None else self.counts[stage]
        return Fraction(n, self.total)

    def add(self, outcome: DistillOutcome):
        self.total += 1
        if outcome.success:
            self.counts[outcome.stage] += 1


@dataclass
class DistillResult:
    S: List[Pair]
    U: List[MaskedProblem]
    stats: StageStats
    outcomes: List[DistillOutcome]


class _Session:
    """One problem's sequential conversation with retry and transcript logging."""

    def __init__(self, client, tag, settings, sleep):
        self.client = client
        self.tag = tag
        self.settings = settings
        self.sleep = sleep
        self.transcript: List[dict] = []

    def ask(self, conversation, text, temperature, iteration, stage):
        conversation.append(("user", text))
        self.transcript.append({"iteration": iteration, "stage": stage, "role": "user", "text": text})
        reply = self._send(conversation, temperature)
        conversation.append(("assistant", reply))
        self.transcript.append({"iteration": iteration, "stage": stage, "role": "assistant", "text": reply})
        return reply

    def _send(self, conversation, temperature):
        retries = self.settings.client_retries
        for attempt in range(retries + 1):
            try:
                return self.client.send(list(conversation), temperature=temperature, tag=self.tag)
            except ClientError as exc:
                if attempt == retries:
                    raise
                delay = self.settings.backoff_seconds * 2 ** attempt
                logger.warning("client error for %s (%s); retrying in %.1fs", self.tag, exc, delay)
                self.sleep(delay)


class Distiller:
    def __init__(self, client: ChatClient, templates: Optional[PromptTemplates] = None,
                 settings: Optional[DistillSettings] = None, sleep: Callable[[float], None] = time.sleep):
        self.client = client
        self.templates = templates or PromptTemplates()
        self.settings = settings or DistillSettings()
        self.sleep = sleep

    def _check(self, raw, masked, stage) -> CheckReport:
        return full_check(raw, masked.slots, masked.problem.answer, self.settings.pi_value,
                          self.settings.tolerance, concrete=(stage == STAGE_EQUATION))

    def _finish(self, attempt, report):
        attempt.equation = report.equation
        attempt.value = report.value
        attempt.status = AttemptStatus.ACCEPTED if report.result_ok else AttemptStatus.RESULT_FAIL
        return attempt

    def _run(self, session, masked, stage, iteration, opening, conversation):
        tpl = self.templates
        temp = self.settings.temperature_fresh
        session.ask(conversation, opening, temp, iteration, stage)
        raw = session.ask(conversation, tpl.extract_knowledge, temp, iteration, stage)
        attempt = AttemptResult(stage, iteration, raw, conversation=conversation)
        report = self._check(raw, masked, stage)
        if report.format_ok:
            return self._finish(attempt, report)
        return self._correct(session, masked, attempt, report)

    def _correct(self, session, masked, attempt, report):
        limit = self.settings.max_corrections
        while not report.format_ok:
            attempt.errors.append(report.error.value if report.error else None)
            if attempt.corrections_used >= limit:
                attempt.status = (AttemptStatus.UNCLASSIFIABLE if limit == 0 and report.error is None
                                  else AttemptStatus.FORMAT_TIMEOUT)
                return attempt
            prompt = self.templates.render_correction(report.error, attempt.raw_text, report.recovered)
            attempt.raw_text = session.ask(attempt.conversation, prompt, self.settings.temperature_correction,
                                           attempt.iteration, attempt.round)
            attempt.corrections_used += 1
            report = self._check(attempt.raw_text, masked, attempt.round)
        return self._finish(attempt, report)

    # public stage entry points ------------------------------------------------

    def generate_equation(self, record: ProblemRecord, iteration: int = 1,
                          session: Optional[_Session] = None) -> AttemptResult:
        masked = mask_problem(record)
        session = session or _Session(self.client, record.id, self.settings, self.sleep)
        return self._run(session, masked, STAGE_EQUATION, iteration, self.templates.render_cot(record), [])

    def generate_mask_equation(self, context: Sequence[Tuple[str, str]], masked: MaskedProblem,
                               iteration: int = 1, session: Optional[_Session] = None) -> AttemptResult:
        session = session or _Session(self.client, masked.id, self.settings, self.sleep)
        return self._run(session, masked, STAGE_MASK, iteration, self.templates.render_mask(masked),
                         list(context))

    def correct_format(self, attempt: AttemptResult, masked: MaskedProblem,
                       session: Optional[_Session] = None) -> AttemptResult:
        """Run the correction dialogue on a format-failed attempt."""
        session = session or _Session(self.client, masked.id, self.settings, self.sleep)
        report = self._check(attempt.raw_text, masked, attempt.round)
        return self._correct(session, masked, attempt, report)

    def distill_problem(self, record: ProblemRecord) -> DistillOutcome:
        masked = mask_problem(record)
        session = _Session(self.client, record.id, self.settings, self.sleep)
        attempts: List[AttemptResult] = []
        try:
            for k in range(1, self.settings.max_attempts + 1):
                first = self.generate_equation(record, k, session)
                attempts.append(first)
                if first.status == AttemptStatus.ACCEPTED:
                    return self._success(record, first, attempts, session)
                second = self.generate_mask_equation(first.conversation, masked, k, session)
                attempts.append(second)
                if second.status == AttemptStatus.ACCEPTED:
                    return self._success(record, second, attempts, session)
        except ClientError as exc:
            logger.error("giving up on %s after client errors: %s", record.id, exc)
            return DistillOutcome(record.id, "Unsuccessful", None, session.transcript, attempts,
                                  client_error=True)
        return DistillOutcome(record.id, "Unsuccessful", None, session.transcript, attempts)

    def _success(self, record, attempt, attempts, session):
        if attempt.corrections_used:
            stage = FORMAT_CORRECTION
        elif attempt.round == STAGE_EQUATION:
            stage = EQUATION_GENERATION
        else:
            stage = MASK_EQUATION_GENERATION
        return DistillOutcome(record.id, "Success", attempt.equation, session.transcript, attempts, stage)

    def distill_dataset(self, records: Sequence[ProblemRecord], concurrency_limit: int = 1) -> DistillResult:
        records = list(records)
        if concurrency_limit > 1 and len(records) > 1:
            with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
                outcomes = list(pool.map(self.distill_problem, records))
        else:
            outcomes = [self.distill_problem(r) for r in records]
        S, U, stats = [], [], StageStats()
        for record, outcome in zip(records, outcomes):
            stats.add(outcome)
            masked = mask_problem(record)
            if outcome.success:
                S.append(Pair(masked, outcome.equation, PROVENANCE[outcome.stage]))
            else:
                U.append(masked)
        return DistillResult(S, U, stats, outcomes)


def distill_dataset(records, client, templates=None, concurrency_limit=1, settings=None) -> DistillResult:
    return Distiller(client, templates, settings).distill_dataset(records, concurrency_limit)
