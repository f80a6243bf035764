"""Survey documents and the (population x questionnaire) job stream.

Two upload formats are accepted: a comma-delimited table with a header row
(question_id, text, answer_kind, options, answer_instruction) where the
options cell packs choice labels or numeric bounds with "|", and an
equivalent structured-text (YAML) document. Parsing is total: malformed
rows collect positioned errors instead of being dropped.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator

import yaml

SINGLE_CHOICE = "single-choice"
MULTI_CHOICE = "multi-choice"
LIKERT = "likert"
NUMERIC_RANGE = "numeric-range"
FREE_TEXT = "free-text"

ANSWER_KINDS = (SINGLE_CHOICE, MULTI_CHOICE, LIKERT, NUMERIC_RANGE, FREE_TEXT)

CHOICE_KINDS = (SINGLE_CHOICE, MULTI_CHOICE)

FORMAT_DELIMITED = "delimited-table"
FORMAT_STRUCTURED = "structured-text"


class SurveyParseError(Exception):
    """Carries every positioned problem found in an uploaded document."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class AnswerSchema:
    kind: str
    options: tuple[str, ...] = ()
    scale: tuple[int, int] | None = None
    bounds: tuple[float, float] | None = None

    def describe(self) -> str:
        if self.kind == SINGLE_CHOICE:
            return f"one of {', '.join(self.options)}"
        if self.kind == MULTI_CHOICE:
            return f"one or more of {', '.join(self.options)}"
        if self.kind == LIKERT:
            return f"an integer from {self.scale[0]} to {self.scale[1]}"
        if self.kind == NUMERIC_RANGE:
            return f"a number between {self.bounds[0]} and {self.bounds[1]}"
        return "free text"


@dataclass(frozen=True)
class SurveyQuestion:
    question_id: str
    text: str
    answer_schema: AnswerSchema
    answer_instruction: str = ""


@dataclass(frozen=True)
class SurveySpec:
    questions: tuple[SurveyQuestion, ...]

    def __len__(self) -> int:
        return len(self.questions)

    def question(self, question_id: str) -> SurveyQuestion | None:
        for q in self.questions:
            if q.question_id == question_id:
                return q
        return None


def _validate_answer_schema(kind: str, cell: str, where: str, problems: list[str]) -> AnswerSchema | None:
    parts = [p.strip() for p in cell.split("|") if p.strip()] if cell else []
    if kind in CHOICE_KINDS:
        if len(parts) < 2:
            problems.append(f"{where}: {kind} needs at least 2 options")
            return None
        if len(parts) != len(set(parts)):
            problems.append(f"{where}: duplicate option labels")
            return None
        return AnswerSchema(kind=kind, options=tuple(parts))
    if kind == LIKERT:
        try:
            low, high = (int(p) for p in parts)
        except (ValueError, TypeError):
            problems.append(f"{where}: likert scale must be two integers like 1|7")
            return None
        if low >= high:
            problems.append(f"{where}: likert bounds must satisfy low < high")
            return None
        return AnswerSchema(kind=kind, scale=(low, high))
    if kind == NUMERIC_RANGE:
        try:
            low, high = (float(p) for p in parts)
        except (ValueError, TypeError):
            problems.append(f"{where}: numeric-range needs two bounds like 0|100")
            return None
        if low > high:
            problems.append(f"{where}: numeric bounds inverted")
            return None
        return AnswerSchema(kind=kind, bounds=(low, high))
    if kind == FREE_TEXT:
        return AnswerSchema(kind=kind)
    problems.append(f"{where}: unknown answer kind {kind!r}")
    return None


def _finish(questions: list[SurveyQuestion], id_rows: dict[str, list[str]], problems: list[str]) -> SurveySpec:
    for qid, rows in id_rows.items():
        if len(rows) > 1:
            problems.append(f"duplicate question_id {qid!r} at {', '.join(rows)}")
    if not questions and not problems:
        problems.append("no questions found")
    if problems:
        raise SurveyParseError(problems)
    return SurveySpec(questions=tuple(questions))


def _parse_delimited(text: str) -> SurveySpec:
    problems: list[str] = []
    questions: list[SurveyQuestion] = []
    id_rows: dict[str, list[str]] = {}
    reader = csv.DictReader(io.StringIO(text))
    required = {"question_id", "text", "answer_kind"}
    if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
        raise SurveyParseError(
            [f"header row must contain {sorted(required)}; got {reader.fieldnames}"]
        )
    for number, row in enumerate(reader, start=2):  # header is row 1
        where = f"row {number}"
        qid = (row.get("question_id") or "").strip()
        qtext = (row.get("text") or "").strip()
        kind = (row.get("answer_kind") or "").strip()
        if not qid:
            problems.append(f"{where}: empty question_id")
            continue
        id_rows.setdefault(qid, []).append(where)
        if not qtext:
            problems.append(f"{where}: empty question text")
            continue
        schema = _validate_answer_schema(kind, row.get("options") or "", where, problems)
        if schema is None:
            continue
        questions.append(
            SurveyQuestion(
                question_id=qid,
                text=qtext,
                answer_schema=schema,
                answer_instruction=(row.get("answer_instruction") or "").strip(),
            )
        )
    return _finish(questions, id_rows, problems)


def _parse_structured(text: str) -> SurveySpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SurveyParseError([f"document is not valid structured text: {exc}"]) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("questions"), list):
        raise SurveyParseError(["document needs a top-level 'questions' list"])
    problems: list[str] = []
    questions: list[SurveyQuestion] = []
    id_rows: dict[str, list[str]] = {}
    for index, raw in enumerate(doc["questions"]):
        where = f"entry {index}"
        if not isinstance(raw, dict):
            problems.append(f"{where}: not a mapping")
            continue
        qid = str(raw.get("question_id", "")).strip()
        qtext = str(raw.get("text", "")).strip()
        kind = str(raw.get("answer_kind", "")).strip()
        if not qid:
            problems.append(f"{where}: empty question_id")
            continue
        id_rows.setdefault(qid, []).append(where)
        if not qtext:
            problems.append(f"{where}: empty question text")
            continue
        if kind in CHOICE_KINDS:
            cell = "|".join(str(o) for o in raw.get("options", []))
        elif kind == LIKERT:
            cell = "|".join(str(s) for s in raw.get("scale", []))
        elif kind == NUMERIC_RANGE:
            cell = "|".join(str(b) for b in raw.get("bounds", []))
        else:
            cell = ""
        schema = _validate_answer_schema(kind, cell, where, problems)
        if schema is None:
            continue
        questions.append(
            SurveyQuestion(
                question_id=qid,
                text=qtext,
                answer_schema=schema,
                answer_instruction=str(raw.get("answer_instruction", "")).strip(),
            )
        )
    return _finish(questions, id_rows, problems)


def parse_survey_document(data: bytes | str, format: str = FORMAT_DELIMITED) -> SurveySpec:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if not text.strip():
        raise SurveyParseError(["no questions found"])
    if format == FORMAT_DELIMITED:
        return _parse_delimited(text)
    if format == FORMAT_STRUCTURED:
        return _parse_structured(text)
    raise SurveyParseError([f"unknown survey format {format!r}"])


def survey_to_csv(survey: SurveySpec) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["question_id", "text", "answer_kind", "options", "answer_instruction"])
    for q in survey.questions:
        s = q.answer_schema
        if s.kind in CHOICE_KINDS:
            cell = "|".join(s.options)
        elif s.kind == LIKERT:
            cell = f"{s.scale[0]}|{s.scale[1]}"
        elif s.kind == NUMERIC_RANGE:
            cell = f"{s.bounds[0]}|{s.bounds[1]}"
        else:
            cell = ""
        writer.writerow([q.question_id, q.text, s.kind, cell, q.answer_instruction])
    return buf.getvalue()


def survey_to_yaml(survey: SurveySpec) -> str:
    entries = []
    for q in survey.questions:
        s = q.answer_schema
        entry: dict = {"question_id": q.question_id, "text": q.text, "answer_kind": s.kind}
        if s.kind in CHOICE_KINDS:
            entry["options"] = list(s.options)
        elif s.kind == LIKERT:
            entry["scale"] = list(s.scale)
        elif s.kind == NUMERIC_RANGE:
            entry["bounds"] = list(s.bounds)
        if q.answer_instruction:
            entry["answer_instruction"] = q.answer_instruction
        entries.append(entry)
    return yaml.safe_dump({"questions": entries}, sort_keys=False)


# --- job stream ----------------------------------------------------------

PENDING = "pending"
IN_FLIGHT = "in-flight"
COMPLETED = "completed"
EXHAUSTED = "exhausted"

_TRANSITIONS = {
    PENDING: {IN_FLIGHT},
    IN_FLIGHT: {PENDING, COMPLETED, EXHAUSTED},
    COMPLETED: set(),
    EXHAUSTED: set(),
}

JobId = tuple[str, str]


@dataclass
class RequestJob:
    """One (agent, question) unit of work; the prompt is filled at dispatch."""

    agent_id: str
    question_id: str
    agent_index: int
    question_index: int
    profile: object = None
    question: SurveyQuestion | None = None
    prompt: object = None
    attempt: int = 0
    status: str = field(default=PENDING)

    @property
    def job_id(self) -> JobId:
        return (self.agent_id, self.question_id)

    def transition(self, new_status: str) -> None:
        if new_status not in _TRANSITIONS[self.status]:
            raise ValueError(f"illegal job transition {self.status} -> {new_status}")
        self.status = new_status


def expand_jobs(
    population: list,
    survey: SurveySpec,
    cursor: tuple[int, int] | None = None,
    skip: set[JobId] | None = None,
) -> Iterator[RequestJob]:
    """Lazily yield jobs in agent-major order.

    ``cursor`` restarts the stream from an inclusive (agent_index,
    question_index) position; ``skip`` drops already-completed job ids so a
    resumed stream contains exactly the unfinished work.
    """
    start_agent, start_question = cursor if cursor is not None else (0, 0)
    for agent_index in range(start_agent, len(population)):
        profile = population[agent_index]
        first_q = start_question if agent_index == start_agent else 0
        for question_index in range(first_q, len(survey.questions)):
            question = survey.questions[question_index]
            job_id = (profile.agent_id, question.question_id)
            if skip and job_id in skip:
                continue
            yield RequestJob(
                agent_id=profile.agent_id,
                question_id=question.question_id,
                agent_index=agent_index,
                question_index=question_index,
                profile=profile,
                question=question,
            )
