from __future__ import annotations

import asyncio
from pathlib import Path

import pytest

from client import (
    ExtractiveSummarizer,
    RemoteSummarizer,
    build_prompt,
    build_summarizer,
    extractive_summary,
    normalize_reply,
    split_sentences,
    truncate_words,
)
from config import SummarizerConfig
from errors import ConfigError, RemoteServiceError
from summary_store import SummaryCache


class FlakyTransport:
    """Fails `failures` times (raising, or replying blank), then answers."""

    def __init__(self, failures: int, reply: str = "a red square moves left", *, blank: bool = False):
        self.failures = failures
        self.reply = reply
        self.blank = blank
        self.prompts: list[str] = []

    async def __call__(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if len(self.prompts) <= self.failures:
            if self.blank:
                return "   "
            raise ConnectionError("connection reset")
        return self.reply


def _remote_config(**overrides: object) -> SummarizerConfig:
    settings: dict[str, object] = {"kind": "remote_chat", "retries": 2, "backoff_base": 0.01, "timeout": 5.0}
    settings.update(overrides)
    return SummarizerConfig(**settings)  # type: ignore[arg-type]


def test_sentence_splitting_and_truncation() -> None:
    assert split_sentences("One here. Two there! Three?") == ["One here.", "Two there!", "Three?"]
    assert truncate_words("a b  c d", 3) == "a b c"
    assert truncate_words("", 3) == ""


def test_extractive_summary_prefers_repeated_content() -> None:
    text = "A red square moves left. The sky is calm. A red square moves right."
    summary = extractive_summary(text, 10)
    assert summary == "A red square moves left. A red square moves right."
    assert len(extractive_summary(text, 3).split()) == 3
    assert extractive_summary("", 5) == ""


def test_extractive_summarizer_respects_the_word_cap() -> None:
    text = " ".join(f"Clip {i} shows a green circle." for i in range(10))
    summary = asyncio.run(ExtractiveSummarizer(12).summarize(text))
    assert 0 < len(summary.split()) <= 12
    assert asyncio.run(ExtractiveSummarizer(12).summarize("   ")) == ""


def test_normalize_reply() -> None:
    assert normalize_reply('  Summary: "a cat   sleeps"  ') == "a cat sleeps"
    assert normalize_reply("summary:  'two dogs run'") == "two dogs run"
    assert normalize_reply("plain text") == "plain text"
    assert build_prompt("Sum up: [SENTENCES].", "x y") == "Sum up: x y."


def test_retries_back_off_exponentially() -> None:
    transport = FlakyTransport(failures=2)
    summarizer = RemoteSummarizer(_remote_config(), transport=transport)
    assert asyncio.run(summarizer.summarize("A red square moves left.")) == "a red square moves left"
    assert summarizer.waits == pytest.approx([0.01, 0.02])
    assert summarizer.requests == 3
    assert "A red square moves left." in transport.prompts[0]


def test_blank_replies_count_as_failures() -> None:
    summarizer = RemoteSummarizer(_remote_config(), transport=FlakyTransport(failures=1, blank=True))
    assert asyncio.run(summarizer.summarize("text")) == "a red square moves left"
    assert summarizer.requests == 2


def test_exhausted_retries_raise_remote_error() -> None:
    summarizer = RemoteSummarizer(_remote_config(retries=1), transport=FlakyTransport(failures=5))
    with pytest.raises(RemoteServiceError):
        asyncio.run(summarizer.summarize("text"))
    assert summarizer.requests == 2


def test_timeout_is_a_failure() -> None:
    async def stalled(prompt: str) -> str:
        await asyncio.sleep(10)
        return "late"

    summarizer = RemoteSummarizer(_remote_config(retries=0, timeout=0.01), transport=stalled)
    with pytest.raises(RemoteServiceError):
        asyncio.run(summarizer.summarize("text"))


def test_cache_skips_the_transport(tmp_path: Path) -> None:
    async def scenario() -> tuple[str, str, int, int]:
        cache = SummaryCache(tmp_path / "cache.sqlite3")
        await cache.initialize()
        try:
            transport = FlakyTransport(failures=0)
            summarizer = RemoteSummarizer(_remote_config(), transport=transport, cache=cache)
            first = await summarizer.summarize("A red square moves left.")
            second = await summarizer.summarize("A red square moves left.")
            return first, second, len(transport.prompts), await cache.count()
        finally:
            await cache.close()

    first, second, calls, stored = asyncio.run(scenario())
    assert first == second == "a red square moves left"
    assert calls == 1
    assert stored == 1


def test_missing_token_is_a_config_error() -> None:
    with pytest.raises(ConfigError):
        RemoteSummarizer(_remote_config())


def test_build_summarizer_picks_the_kind() -> None:
    assert isinstance(build_summarizer(SummarizerConfig()), ExtractiveSummarizer)
    remote = build_summarizer(_remote_config(), transport=FlakyTransport(failures=0))
    assert isinstance(remote, RemoteSummarizer)
    assert remote.max_words == 20
