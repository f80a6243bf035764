"""Result exports: delimited table and line-delimited records.

Both formats embed the run's config hash and directive version on every
record so any exported file is auditable on its own. The same functions
back the CLI output files and the service download endpoint, which is
what makes their exports byte-identical for identical runs.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable

from .records import AnswerRecord

CSV_COLUMNS = [
    "agent_id",
    "question_id",
    "agent_index",
    "question_index",
    "value",
    "reasoning",
    "raw",
    "input_tokens",
    "output_tokens",
    "attempts",
    "created_at",
    "status",
    "config_hash",
    "directive_version",
]


def results_to_csv(
    records: Iterable[AnswerRecord], config_hash: str, directive_version: str
) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.agent_id,
                r.question_id,
                r.agent_index,
                r.question_index,
                json.dumps(r.value, sort_keys=True),
                r.reasoning,
                r.raw,
                r.input_tokens,
                r.output_tokens,
                r.attempts,
                repr(r.created_at),
                r.status,
                config_hash,
                directive_version,
            ]
        )
    return buf.getvalue()


def results_to_jsonl(
    records: Iterable[AnswerRecord], config_hash: str, directive_version: str
) -> str:
    lines = []
    for r in records:
        mapping = r.to_mapping()
        mapping.pop("run_id", None)  # surface-assigned; config_hash is the audit key
        mapping["config_hash"] = config_hash
        mapping["directive_version"] = directive_version
        lines.append(json.dumps(mapping, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")
