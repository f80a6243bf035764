"""Shared run records: answers, manifests, and the snapshot wire format.

Manifest snapshots are append-only JSON lines, each carrying a checksum of
its payload. Recovery scans for the last line whose checksum verifies, so
a torn tail write can never corrupt resume accounting.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

JobId = tuple[str, str]

STATUS_OK = "ok"
STATUS_EXHAUSTED = "exhausted"

STOP_FINISHED = "finished"
STOP_CANCELLED = "cancelled"
STOP_FATAL = "fatal"
STOP_CHECKPOINT = "checkpoint"  # mid-run periodic snapshot, run still live

SNAPSHOT_VERSION = 1


@dataclass
class AnswerRecord:
    run_id: str
    agent_id: str
    question_id: str
    agent_index: int
    question_index: int
    value: object
    reasoning: str
    raw: str
    input_tokens: int
    output_tokens: int
    attempts: int
    created_at: float
    status: str = STATUS_OK

    @property
    def key(self) -> JobId:
        return (self.agent_id, self.question_id)

    def to_mapping(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "AnswerRecord":
        return cls(**mapping)


@dataclass
class UncompletedJob:
    agent_id: str
    question_id: str
    attempts: int = 0
    last_error: str | None = None

    @property
    def key(self) -> JobId:
        return (self.agent_id, self.question_id)


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    completed: set[JobId] = field(default_factory=set)
    uncompleted: list[UncompletedJob] = field(default_factory=list)
    cursor: tuple[int, int] | None = None
    stop_reason: str = STOP_FINISHED
    directive_version: str = ""

    def to_snapshot(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "completed": sorted([list(key) for key in self.completed]),
            "uncompleted": [
                {
                    "agent_id": u.agent_id,
                    "question_id": u.question_id,
                    "attempts": u.attempts,
                    "last_error": u.last_error,
                }
                for u in self.uncompleted
            ],
            "cursor": list(self.cursor) if self.cursor is not None else None,
            "stop_reason": self.stop_reason,
            "directive_version": self.directive_version,
        }

    @classmethod
    def from_snapshot(cls, snapshot: dict) -> "RunManifest":
        return cls(
            run_id=snapshot["run_id"],
            config_hash=snapshot["config_hash"],
            completed={(a, q) for a, q in snapshot["completed"]},
            uncompleted=[
                UncompletedJob(
                    agent_id=u["agent_id"],
                    question_id=u["question_id"],
                    attempts=u["attempts"],
                    last_error=u.get("last_error"),
                )
                for u in snapshot["uncompleted"]
            ],
            cursor=tuple(snapshot["cursor"]) if snapshot.get("cursor") else None,
            stop_reason=snapshot.get("stop_reason", STOP_FINISHED),
            directive_version=snapshot.get("directive_version", ""),
        )


def _checksum(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def encode_snapshot_line(manifest: RunManifest) -> str:
    payload = json.dumps(manifest.to_snapshot(), sort_keys=True)
    return json.dumps({"snapshot": payload, "checksum": _checksum(payload)})


def decode_snapshot_line(line: str) -> RunManifest | None:
    """One snapshot line back to a manifest; None when torn or tampered."""
    try:
        envelope = json.loads(line)
        payload = envelope["snapshot"]
        if _checksum(payload) != envelope["checksum"]:
            return None
        return RunManifest.from_snapshot(json.loads(payload))
    except (ValueError, KeyError, TypeError):
        return None


def latest_valid_snapshot(lines: list[str]) -> RunManifest | None:
    for line in reversed(lines):
        if not line.strip():
            continue
        manifest = decode_snapshot_line(line)
        if manifest is not None:
            return manifest
    return None
