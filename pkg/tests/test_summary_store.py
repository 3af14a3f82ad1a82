from __future__ import annotations

import asyncio
from pathlib import Path

import pytest

from errors import UsageError
from summary_store import SummaryCache, SummaryKey


def test_key_hashes_the_text() -> None:
    key = SummaryKey.for_text("openai", "gpt", 20, "hello")
    assert key.text_sha256 == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
    assert key != SummaryKey.for_text("openai", "gpt", 10, "hello")


def test_put_get_upsert(tmp_path: Path) -> None:
    async def scenario() -> tuple[str | None, str | None, str | None, int]:
        cache = SummaryCache(tmp_path / "nested" / "cache.sqlite3")
        await cache.initialize()
        try:
            key = SummaryKey.for_text("groq", "llama", 20, "clip text")
            missing = await cache.get(key)
            await cache.put(key, "first")
            first = await cache.get(key)
            await cache.put(key, "second")
            second = await cache.get(key)
            return missing, first, second, await cache.count()
        finally:
            await cache.close()

    assert asyncio.run(scenario()) == (None, "first", "second", 1)


def test_entries_survive_reopening(tmp_path: Path) -> None:
    key = SummaryKey.for_text("gemini", "flash", 20, "clip text")

    async def write() -> None:
        cache = SummaryCache(tmp_path / "cache.sqlite3")
        await cache.initialize()
        await cache.put(key, "kept")
        await cache.close()

    async def read() -> str | None:
        cache = SummaryCache(tmp_path / "cache.sqlite3")
        await cache.initialize()
        try:
            return await cache.get(key)
        finally:
            await cache.close()

    asyncio.run(write())
    assert asyncio.run(read()) == "kept"


def test_use_before_initialize_fails(tmp_path: Path) -> None:
    cache = SummaryCache(tmp_path / "cache.sqlite3")
    with pytest.raises(UsageError):
        asyncio.run(cache.count())
