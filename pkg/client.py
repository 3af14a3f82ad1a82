from __future__ import annotations

import asyncio
import inspect
import logging
import re
from typing import Any, Awaitable, Callable, Protocol, cast

import backoff
from google import genai
from google.genai import types as genai_types
from groq import AsyncGroq
from nltk.probability import FreqDist
from nltk.tokenize import RegexpTokenizer

try:
    from openai import AsyncOpenAI
except ImportError:  # pragma: no cover - optional dependency at runtime
    AsyncOpenAI = None  # type: ignore[assignment]

from config import SummarizerConfig
from errors import ConfigError, RemoteServiceError
from summary_store import SummaryCache, SummaryKey

LOGGER = logging.getLogger(__name__)

ChatTransport = Callable[[str], Awaitable[str]]

# Small fixed list so scoring never depends on downloaded corpora.
STOPWORDS = frozenset(
    """
    a an and are as at be been but by for from has have he her his i in into is it its
    of on or our she so than that the their them then there these they this to was we
    were what when which while who will with you your
    """.split()
)
SENTENCE_TOKENIZER = RegexpTokenizer(r"[^.!?]+[.!?]*")
WORD_TOKENIZER = RegexpTokenizer(r"[A-Za-z0-9']+")
_SUMMARY_LABEL = re.compile(r"^\s*summary\s*:\s*", re.IGNORECASE)
_WRAPPING_QUOTES = "\"'`“”‘’"


class Summarizer(Protocol):
    max_words: int

    async def summarize(self, text: str) -> str: ...


def truncate_words(text: str, max_words: int) -> str:
    words = text.split()
    return " ".join(words[:max_words])


def split_sentences(text: str) -> list[str]:
    return [sentence.strip() for sentence in SENTENCE_TOKENIZER.tokenize(text) if sentence.strip()]


def content_words(text: str) -> list[str]:
    return [word for word in WORD_TOKENIZER.tokenize(text.lower()) if word not in STOPWORDS]


def sentence_scores(text: str) -> list[tuple[str, int]]:
    """Each sentence scored by the document frequencies of its non-stopword words."""
    sentences = split_sentences(text)
    frequencies = FreqDist(content_words(text))
    return [
        (sentence, sum(frequencies[word] for word in content_words(sentence)))
        for sentence in sentences
    ]


def extractive_summary(text: str, max_words: int) -> str:
    """Greedy pick of the highest-scoring sentences (earlier wins ties) within `max_words`."""
    scored = sentence_scores(text)
    if not scored:
        return ""
    order = sorted(range(len(scored)), key=lambda idx: (-scored[idx][1], idx))
    chosen: list[int] = []
    used = 0
    for idx in order:
        length = len(scored[idx][0].split())
        if used + length <= max_words:
            chosen.append(idx)
            used += length
    if not chosen:
        return truncate_words(scored[order[0]][0], max_words)
    return " ".join(scored[idx][0] for idx in sorted(chosen))


class ExtractiveSummarizer:
    def __init__(self, max_words: int = 20):
        self.max_words = max_words

    async def summarize(self, text: str) -> str:
        if not text.strip():
            LOGGER.warning("[gex] empty text; extractive summary is empty")
            return ""
        return extractive_summary(text, self.max_words)


def normalize_reply(reply: str) -> str:
    """Drop wrapping quotes and a leading `Summary:` label, collapse whitespace."""
    cleaned = " ".join(reply.split())
    cleaned = _SUMMARY_LABEL.sub("", cleaned)
    while len(cleaned) >= 2 and cleaned[0] in _WRAPPING_QUOTES and cleaned[-1] in _WRAPPING_QUOTES:
        cleaned = cleaned[1:-1].strip()
    return cleaned


def build_prompt(template: str, text: str) -> str:
    return template.replace("[SENTENCES]", text)


class RemoteSummarizer:
    """Chat-completion summarizer with exponential-backoff retries and an optional cache."""

    def __init__(
        self,
        config: SummarizerConfig,
        *,
        transport: ChatTransport | None = None,
        cache: SummaryCache | None = None,
    ):
        self.config = config
        self.max_words = config.max_words
        self.prompt_template = config.resolved_prompt()
        self.cache = cache
        self.waits: list[float] = []
        self.requests = 0
        self.openai_client: Any = None
        self.groq_client: Any = None
        self.gemini_client: Any = None
        if transport is None:
            token = config.token()
            if token is None:
                raise ConfigError(f"Missing {config.token_env} for the remote summarizer.")
            transport = self._sdk_transport(token)
        self._transport = transport

    def _sdk_transport(self, token: str) -> ChatTransport:
        provider = self.config.provider
        if provider == "openai":
            if AsyncOpenAI is None:
                raise ConfigError("OpenAI SDK not installed. Run: pip install -r requirements.txt")
            if not self.config.endpoint:
                raise ConfigError("Missing summarizer.endpoint for provider=openai.")
            self.openai_client = AsyncOpenAI(api_key=token, base_url=self.config.endpoint)
            return self._call_openai
        if provider == "groq":
            self.groq_client = AsyncGroq(api_key=token)
            return self._call_groq
        if provider == "gemini":
            self.gemini_client = genai.Client(api_key=token)
            return self._call_gemini
        raise ConfigError(f"Unsupported provider: {provider}")

    async def aclose(self) -> None:
        if self.groq_client and hasattr(self.groq_client, "close"):
            await self.groq_client.close()
        if self.openai_client and hasattr(self.openai_client, "close"):
            maybe_awaitable = self.openai_client.close()
            if inspect.isawaitable(maybe_awaitable):
                await maybe_awaitable

    async def summarize(self, text: str) -> str:
        if not text.strip():
            LOGGER.warning("[gex] empty text; skipping the remote summarizer")
            return ""
        key = SummaryKey.for_text(self.config.provider, self.config.model, self.max_words, text)
        if self.cache is not None:
            cached = await self.cache.get(key)
            if cached is not None:
                return cached

        summary = await self._request_with_retry(build_prompt(self.prompt_template, text))
        if self.cache is not None:
            await self.cache.put(key, summary)
        return summary

    async def _request_with_retry(self, prompt: str) -> str:
        def record_wait(details: dict[str, Any]) -> None:
            self.waits.append(float(details["wait"]))
            LOGGER.warning(
                "[gex] summarizer attempt %d failed; retrying in %.2fs",
                details["tries"],
                details["wait"],
            )

        @backoff.on_exception(
            backoff.expo,
            Exception,
            max_tries=self.config.retries + 1,
            factor=self.config.backoff_base,
            jitter=None,
            on_backoff=record_wait,
        )
        async def attempt() -> str:
            self.requests += 1
            reply = await asyncio.wait_for(self._transport(prompt), timeout=self.config.timeout)
            cleaned = normalize_reply(reply or "")
            if not cleaned:
                raise RemoteServiceError("summarizer returned an empty reply")
            return cleaned

        try:
            return await attempt()
        except Exception as exc:
            raise RemoteServiceError(
                f"summarizer failed after {self.config.retries + 1} attempt(s): {exc}"
            ) from exc

    async def _call_openai(self, prompt: str) -> str:
        chat_completion = await self.openai_client.chat.completions.create(
            model=self.config.model,
            messages=[{"role": "user", "content": prompt}],
            temperature=0,
        )
        content = chat_completion.choices[0].message.content
        return content if isinstance(content, str) else ""

    async def _call_groq(self, prompt: str) -> str:
        chat_completion = await self.groq_client.chat.completions.create(
            model=self.config.model,
            messages=[{"role": "user", "content": prompt}],
            temperature=0,
        )
        content = chat_completion.choices[0].message.content
        return content if isinstance(content, str) else ""

    async def _call_gemini(self, prompt: str) -> str:
        response = await self.gemini_client.aio.models.generate_content(
            model=self.config.model,
            contents=[
                genai_types.Content(role="user", parts=[genai_types.Part.from_text(text=prompt)])
            ],
            config=genai_types.GenerateContentConfig(temperature=0),
        )
        return self._extract_gemini_text(response)

    def _extract_gemini_text(self, response: Any) -> str:
        direct_text = cast(str | None, getattr(response, "text", None))
        if direct_text and direct_text.strip():
            return direct_text.strip()

        candidates = cast(list[Any], getattr(response, "candidates", []) or [])
        for candidate in candidates:
            content = getattr(candidate, "content", None)
            if content is None:
                continue
            parts = cast(list[Any], getattr(content, "parts", []) or [])
            text_parts = [
                str(part.text).strip()
                for part in parts
                if getattr(part, "text", None) and str(part.text).strip()
            ]
            if text_parts:
                return "\n".join(text_parts)
        return ""


def build_summarizer(
    config: SummarizerConfig,
    *,
    transport: ChatTransport | None = None,
    cache: SummaryCache | None = None,
) -> Summarizer:
    if config.kind == "extractive":
        return ExtractiveSummarizer(config.max_words)
    return RemoteSummarizer(config, transport=transport, cache=cache)
