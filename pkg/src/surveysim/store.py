"""Persistence: credential store, per-user simulation stores, privacy purge.

Credentials and simulation data live in physically separate SQLite files.
Simulation data is further partitioned one file per user, which turns the
privacy purge into a whole-partition drop: after purge, no scan of the
simulation store can find anything keyed to the user, while the credential
record survives and logins keep working.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .profiles import AgentProfile
from .records import AnswerRecord, RunManifest, encode_snapshot_line, latest_valid_snapshot

TOKEN_TTL_SECONDS = 3600.0

_SCRYPT_N = 2**14
_SCRYPT_R = 8
_SCRYPT_P = 1


class DuplicateLoginError(Exception):
    pass


class UnknownRunError(Exception):
    """Run not found for this user; cross-user probes get the same answer."""


def _hash_secret(secret: str, salt: bytes) -> str:
    digest = hashlib.scrypt(
        secret.encode("utf-8"), salt=salt, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P
    )
    return f"scrypt${_SCRYPT_N}${salt.hex()}${digest.hex()}"


def _verify_secret(secret: str, stored: str) -> bool:
    try:
        _, n, salt_hex, digest_hex = stored.split("$")
        digest = hashlib.scrypt(
            secret.encode("utf-8"), salt=bytes.fromhex(salt_hex), n=int(n), r=_SCRYPT_R, p=_SCRYPT_P
        )
        return secrets.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    login_name: str
    created_at: float


class CredentialStore:
    """User credentials and opaque bearer sessions with expiry."""

    def __init__(self, path: str | Path, clock=None, token_ttl: float = TOKEN_TTL_SECONDS):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._lock = threading.Lock()
        self._clock = clock
        self._token_ttl = token_ttl
        self._sessions: dict[str, tuple[str, float]] = {}
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS users ("
                " user_id TEXT PRIMARY KEY,"
                " login_name TEXT UNIQUE NOT NULL,"
                " credential_hash TEXT NOT NULL,"
                " created_at REAL NOT NULL)"
            )
            self._conn.commit()

    def _now(self) -> float:
        return self._clock.now() if self._clock is not None else time.monotonic()

    def create_user(self, login: str, secret: str) -> str:
        if not login:
            raise ValueError("login must be non-empty")
        user_id = uuid.uuid4().hex
        credential_hash = _hash_secret(secret, os.urandom(16))
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO users VALUES (?, ?, ?, ?)",
                    (user_id, login, credential_hash, self._now()),
                )
                self._conn.commit()
            except sqlite3.IntegrityError:
                raise DuplicateLoginError(login) from None
        return user_id

    def authenticate(self, login: str, secret: str) -> str | None:
        """Session token on success, None on denial.

        Unknown login and wrong secret take the same code path (a real
        hash comparison happens either way) and return the same None.
        """
        with self._lock:
            row = self._conn.execute(
                "SELECT user_id, credential_hash FROM users WHERE login_name = ?",
                (login,),
            ).fetchone()
        if row is None:
            _verify_secret(secret, _hash_secret("decoy", b"\x00" * 16))
            return None
        user_id, stored = row
        if not _verify_secret(secret, stored):
            return None
        token = secrets.token_urlsafe(32)
        self._sessions[token] = (user_id, self._now() + self._token_ttl)
        return token

    def resolve_token(self, token: str) -> str | None:
        entry = self._sessions.get(token)
        if entry is None:
            return None
        user_id, expires_at = entry
        if self._now() >= expires_at:
            del self._sessions[token]
            return None
        return user_id

    def get_user(self, user_id: str) -> UserRecord | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT user_id, login_name, created_at FROM users WHERE user_id = ?",
                (user_id,),
            ).fetchone()
        return UserRecord(*row) if row else None

    def user_count(self, user_id: str) -> int:
        with self._lock:
            (count,) = self._conn.execute(
                "SELECT COUNT(*) FROM users WHERE user_id = ?", (user_id,)
            ).fetchone()
        return count

    def close(self) -> None:
        self._conn.close()


_SIM_TABLES = """
CREATE TABLE IF NOT EXISTS uploads (
    upload_id TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    format TEXT NOT NULL,
    name TEXT NOT NULL,
    content BLOB NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS runs (
    run_id TEXT PRIMARY KEY,
    state TEXT NOT NULL,
    config_json TEXT NOT NULL,
    config_hash TEXT NOT NULL,
    directive_version TEXT NOT NULL,
    survey_upload_id TEXT,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS populations (
    run_id TEXT NOT NULL,
    agent_index INTEGER NOT NULL,
    agent_id TEXT NOT NULL,
    seed TEXT NOT NULL,
    attributes_json TEXT NOT NULL,
    narrative TEXT,
    PRIMARY KEY (run_id, agent_index)
);
CREATE TABLE IF NOT EXISTS answers (
    run_id TEXT NOT NULL,
    agent_id TEXT NOT NULL,
    question_id TEXT NOT NULL,
    agent_index INTEGER NOT NULL,
    question_index INTEGER NOT NULL,
    value_json TEXT NOT NULL,
    reasoning TEXT NOT NULL,
    raw TEXT NOT NULL,
    input_tokens INTEGER NOT NULL,
    output_tokens INTEGER NOT NULL,
    attempts INTEGER NOT NULL,
    created_at REAL NOT NULL,
    status TEXT NOT NULL,
    PRIMARY KEY (run_id, agent_id, question_id)
);
CREATE TABLE IF NOT EXISTS manifests (
    run_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    line TEXT NOT NULL,
    PRIMARY KEY (run_id, seq)
);
"""


class UserDataStore:
    """All simulation data of one user, linearizable per key."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.executescript(_SIM_TABLES)
            self._conn.commit()

    # -- uploads --

    def save_upload(self, kind: str, format: str, name: str, content: bytes) -> str:
        upload_id = uuid.uuid4().hex
        with self._lock:
            self._conn.execute(
                "INSERT INTO uploads VALUES (?, ?, ?, ?, ?, ?)",
                (upload_id, kind, format, name, content, time.time()),
            )
            self._conn.commit()
        return upload_id

    def get_upload(self, upload_id: str) -> tuple[str, str, str, bytes] | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT kind, format, name, content FROM uploads WHERE upload_id = ?",
                (upload_id,),
            ).fetchone()
        return row

    # -- runs --

    def create_run(
        self,
        run_id: str,
        state: str,
        config_json: str,
        config_hash: str,
        directive_version: str,
        survey_upload_id: str | None = None,
    ) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO runs VALUES (?, ?, ?, ?, ?, ?, ?)",
                (run_id, state, config_json, config_hash, directive_version, survey_upload_id, time.time()),
            )
            self._conn.commit()

    def set_run_state(self, run_id: str, state: str) -> None:
        with self._lock:
            self._conn.execute("UPDATE runs SET state = ? WHERE run_id = ?", (state, run_id))
            self._conn.commit()

    def get_run(self, run_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT run_id, state, config_json, config_hash, directive_version,"
                " survey_upload_id, created_at FROM runs WHERE run_id = ?",
                (run_id,),
            ).fetchone()
        if row is None:
            raise UnknownRunError(run_id)
        keys = ("run_id", "state", "config_json", "config_hash", "directive_version", "survey_upload_id", "created_at")
        return dict(zip(keys, row))

    def list_runs(self) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT run_id, state, config_hash, created_at FROM runs ORDER BY created_at"
            ).fetchall()
        return [
            {"run_id": r[0], "state": r[1], "config_hash": r[2], "created_at": r[3]}
            for r in rows
        ]

    # -- populations --

    def save_population(self, run_id: str, population: list) -> None:
        # seed stored as text: sub-seeds are unsigned 64-bit, beyond SQLite's
        # signed INTEGER range
        rows = [
            (run_id, i, p.agent_id, str(p.seed), json.dumps(p.attributes, sort_keys=True), p.narrative)
            for i, p in enumerate(population)
        ]
        with self._lock:
            self._conn.executemany(
                "INSERT OR REPLACE INTO populations VALUES (?, ?, ?, ?, ?, ?)", rows
            )
            self._conn.commit()

    def population_size(self, run_id: str) -> int:
        with self._lock:
            (count,) = self._conn.execute(
                "SELECT COUNT(*) FROM populations WHERE run_id = ?", (run_id,)
            ).fetchone()
        return count

    def load_population(self, run_id: str) -> list[AgentProfile]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT agent_id, seed, attributes_json, narrative FROM populations"
                " WHERE run_id = ? ORDER BY agent_index",
                (run_id,),
            ).fetchall()
        return [
            AgentProfile(
                agent_id=row[0],
                attributes=json.loads(row[2]),
                seed=int(row[1]),
                narrative=row[3],
            )
            for row in rows
        ]

    # -- answers --

    def save_answer(self, record: AnswerRecord) -> bool:
        """Idempotent on (run_id, agent_id, question_id)."""
        with self._lock:
            cursor = self._conn.execute(
                "INSERT OR IGNORE INTO answers VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    record.run_id,
                    record.agent_id,
                    record.question_id,
                    record.agent_index,
                    record.question_index,
                    json.dumps(record.value, sort_keys=True),
                    record.reasoning,
                    record.raw,
                    record.input_tokens,
                    record.output_tokens,
                    record.attempts,
                    record.created_at,
                    record.status,
                ),
            )
            self._conn.commit()
        return cursor.rowcount > 0

    def stream_results(self, run_id: str) -> Iterator[AnswerRecord]:
        self.get_run(run_id)  # raises UnknownRunError for absent/foreign runs
        with self._lock:
            rows = self._conn.execute(
                "SELECT run_id, agent_id, question_id, agent_index, question_index,"
                " value_json, reasoning, raw, input_tokens, output_tokens, attempts,"
                " created_at, status FROM answers WHERE run_id = ?"
                " ORDER BY agent_index, question_index",
                (run_id,),
            ).fetchall()
        for row in rows:
            yield AnswerRecord(
                run_id=row[0],
                agent_id=row[1],
                question_id=row[2],
                agent_index=row[3],
                question_index=row[4],
                value=json.loads(row[5]),
                reasoning=row[6],
                raw=row[7],
                input_tokens=row[8],
                output_tokens=row[9],
                attempts=row[10],
                created_at=row[11],
                status=row[12],
            )

    def count_answers(self, run_id: str) -> int:
        with self._lock:
            (count,) = self._conn.execute(
                "SELECT COUNT(*) FROM answers WHERE run_id = ?", (run_id,)
            ).fetchone()
        return count

    # -- manifests --

    def append_manifest(self, manifest: RunManifest) -> None:
        line = encode_snapshot_line(manifest)
        with self._lock:
            (seq,) = self._conn.execute(
                "SELECT COALESCE(MAX(seq), 0) + 1 FROM manifests WHERE run_id = ?",
                (manifest.run_id,),
            ).fetchone()
            self._conn.execute(
                "INSERT INTO manifests VALUES (?, ?, ?)", (manifest.run_id, seq, line)
            )
            self._conn.commit()

    def latest_manifest(self, run_id: str) -> RunManifest | None:
        with self._lock:
            rows = self._conn.execute(
                "SELECT line FROM manifests WHERE run_id = ? ORDER BY seq", (run_id,)
            ).fetchall()
        return latest_valid_snapshot([r[0] for r in rows])

    def table_counts(self) -> dict[str, int]:
        counts = {}
        with self._lock:
            for table in ("uploads", "runs", "populations", "answers", "manifests"):
                (counts[table],) = self._conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()
        return counts

    def close(self) -> None:
        self._conn.close()


class SimulationStore:
    """Root of all per-user data partitions."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._open: dict[str, UserDataStore] = {}

    def _user_path(self, user_id: str) -> Path:
        return self.root / f"user-{user_id}.db"

    def known_users(self) -> list[str]:
        return sorted(
            path.stem.removeprefix("user-") for path in self.root.glob("user-*.db")
        )

    def for_user(self, user_id: str) -> UserDataStore:
        store = self._open.get(user_id)
        if store is None:
            store = UserDataStore(self._user_path(user_id))
            self._open[user_id] = store
        return store

    def purge_user(self, user_id: str) -> dict[str, int]:
        """Drop the user's whole partition; idempotent."""
        store = self._open.pop(user_id, None)
        path = self._user_path(user_id)
        counts: dict[str, int] = {}
        if path.exists():
            if store is None:
                store = UserDataStore(path)
            counts = store.table_counts()
            store.close()
            path.unlink()
            for suffix in ("-wal", "-shm"):
                side = Path(str(path) + suffix)
                if side.exists():
                    side.unlink()
        elif store is not None:
            store.close()
        return counts

    def scan_user_records(self, user_id: str) -> int:
        """Full-store scan: total records still keyed to the user."""
        path = self._user_path(user_id)
        if not path.exists():
            return 0
        store = self._open.get(user_id) or UserDataStore(path)
        return sum(store.table_counts().values())

    def close(self) -> None:
        for store in self._open.values():
            store.close()
        self._open.clear()


class StoreCheckpointSink:
    """Checkpoint sink writing versioned snapshot lines into the store."""

    def __init__(self, store: UserDataStore):
        self._store = store

    def write(self, manifest: RunManifest) -> None:
        self._store.append_manifest(manifest)


class StoreAnswerSink:
    def __init__(self, store: UserDataStore):
        self._store = store

    def save(self, record: AnswerRecord) -> bool:
        return self._store.save_answer(record)
