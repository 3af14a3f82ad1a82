from __future__ import annotations

import asyncio
import hashlib
from dataclasses import dataclass
from pathlib import Path

import aiosqlite

from errors import UsageError


@dataclass(slots=True, frozen=True)
class SummaryKey:
    provider: str
    model: str
    max_words: int
    text_sha256: str

    @classmethod
    def for_text(cls, provider: str, model: str, max_words: int, text: str) -> SummaryKey:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return cls(provider=provider, model=model, max_words=max_words, text_sha256=digest)


class SummaryCache:
    """Remote summaries keyed by (provider, model, max_words, sha256(text))."""

    def __init__(self, db_path: str | Path):
        self.db_path = str(db_path)
        self._conn: aiosqlite.Connection | None = None
        self._lock = asyncio.Lock()

    async def initialize(self) -> None:
        path = Path(self.db_path)
        path.parent.mkdir(parents=True, exist_ok=True)

        self._conn = await aiosqlite.connect(self.db_path)
        await self._conn.execute("PRAGMA journal_mode=WAL;")
        await self._conn.execute("PRAGMA synchronous=NORMAL;")
        await self._conn.execute(
            """
            CREATE TABLE IF NOT EXISTS summaries (
                provider TEXT NOT NULL,
                model TEXT NOT NULL,
                max_words INTEGER NOT NULL,
                text_sha256 TEXT NOT NULL,
                summary TEXT NOT NULL,
                created_at TEXT NOT NULL DEFAULT CURRENT_TIMESTAMP,
                PRIMARY KEY (provider, model, max_words, text_sha256)
            )
            """
        )
        await self._conn.commit()

    async def close(self) -> None:
        if self._conn is not None:
            await self._conn.close()
            self._conn = None

    async def get(self, key: SummaryKey) -> str | None:
        async with self._lock:
            conn = self._require_conn()
            cursor = await conn.execute(
                """
                SELECT summary
                FROM summaries
                WHERE provider = ? AND model = ? AND max_words = ? AND text_sha256 = ?
                LIMIT 1
                """,
                (key.provider, key.model, key.max_words, key.text_sha256),
            )
            row = await cursor.fetchone()
            await cursor.close()
            return None if row is None else str(row[0])

    async def put(self, key: SummaryKey, summary: str) -> None:
        async with self._lock:
            conn = self._require_conn()
            await conn.execute(
                """
                INSERT INTO summaries (provider, model, max_words, text_sha256, summary)
                VALUES (?, ?, ?, ?, ?)
                ON CONFLICT(provider, model, max_words, text_sha256) DO UPDATE SET
                    summary = excluded.summary,
                    created_at = CURRENT_TIMESTAMP
                """,
                (key.provider, key.model, key.max_words, key.text_sha256, summary),
            )
            await conn.commit()

    async def count(self) -> int:
        async with self._lock:
            conn = self._require_conn()
            cursor = await conn.execute("SELECT COUNT(*) FROM summaries")
            row = await cursor.fetchone()
            await cursor.close()
            return int(row[0]) if row else 0

    def _require_conn(self) -> aiosqlite.Connection:
        if self._conn is None:
            raise UsageError("Summary cache is not initialized")
        return self._conn
