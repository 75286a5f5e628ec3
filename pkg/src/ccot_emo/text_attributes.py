"""Transcript-level sentiment polarity and emotionally salient keywords.

Two interchangeable backends: a remote chat model prompted with versioned
templates, and an offline lexicon/term-frequency analyzer that is fully
deterministic (English only).
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Protocol

from .errors import BackendUnavailable, ClientError
from .model_client import GenerationParams, ModelClient, ModelRequest
from .resources import load_json, load_template

logger = logging.getLogger(__name__)

SENTIMENTS = ("positive", "negative", "neutral")
DEFAULT_K = 5
LEXICON_BOOST = 2

_WORD = re.compile(r"[a-z]+(?:'[a-z]+)*")


def transcript_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def tokenize(text: str) -> list[str]:
    """Lowercased English word tokens; apostrophes inside words are kept."""
    return _WORD.findall(text.lower().replace("’", "'"))


@dataclass(frozen=True)
class TextAttributes:
    sentiment: str
    keywords: tuple[str, ...]
    backend_id: str
    transcript_hash: str

    def __post_init__(self):
        if self.sentiment not in SENTIMENTS:
            raise ValueError(f"sentiment must be one of {SENTIMENTS}, got {self.sentiment!r}")
        kws = tuple(self.keywords)
        if any(not k for k in kws) or len(set(kws)) != len(kws):
            raise ValueError(f"keywords must be unique non-empty strings: {kws}")
        object.__setattr__(self, "keywords", kws)


class SentimentBackend(Protocol):
    backend_id: str

    def sentiment(self, transcript: str) -> str: ...


class KeywordBackend(Protocol):
    backend_id: str

    def keywords(self, transcript: str, k: int) -> list[str]: ...


class LexiconBackend:
    """Offline sentiment and keywords from the shipped lexicon."""

    def __init__(self, lexicon: dict | None = None):
        lex = lexicon or load_json("lexicon.json")
        self.positive = frozenset(lex["positive"])
        self.negative = frozenset(lex["negative"])
        self.emotion = frozenset(lex["emotion"]) | self.positive | self.negative
        self.stopwords = frozenset(lex["stopwords"])
        self.backend_id = f"offline-lexicon-v{lex.get('version', '0')}"

    def sentiment(self, transcript: str) -> str:
        tokens = tokenize(transcript)
        pos = sum(t in self.positive for t in tokens)
        neg = sum(t in self.negative for t in tokens)
        if pos > neg:
            return "positive"
        if neg > pos:
            return "negative"
        return "neutral"

    def keywords(self, transcript: str, k: int = DEFAULT_K) -> list[str]:
        if k < 1:
            raise ValueError("k must be >= 1")
        tf = Counter(t for t in tokenize(transcript) if t not in self.stopwords)
        scored = sorted(tf, key=lambda t: (-tf[t] * (LEXICON_BOOST if t in self.emotion else 1), t))
        return scored[:k]


class RemoteTextBackend:
    """Sentiment and keywords from a chat model; malformed sentiment gets one retry, then neutral."""

    def __init__(self, client: ModelClient, params: GenerationParams | None = None, prompt_dir=None):
        self.client = client
        self.params = params or GenerationParams(model_id=client.model_id, max_output_tokens=32)
        self.prompt_dir = prompt_dir
        self.backend_id = f"remote-{self.params.model_id}"

    def _ask(self, template: str, **kw) -> str:
        text = load_template(template, override_dir=self.prompt_dir).format(**kw)
        try:
            return self.client.query(ModelRequest.build(text, None, self.params)).text
        except ClientError as exc:
            raise BackendUnavailable(f"{self.backend_id}: {exc}") from exc

    def sentiment(self, transcript: str) -> str:
        for template in ("sentiment", "sentiment_retry"):
            answer = self._ask(template, transcript=transcript)
            label = answer.strip().strip(".!\"'").lower()
            if label in SENTIMENTS:
                return label
            logger.info("unreadable sentiment answer %r", answer[:60])
        logger.warning("sentiment fell back to neutral after retry")
        return "neutral"

    def keywords(self, transcript: str, k: int = DEFAULT_K) -> list[str]:
        if k < 1:
            raise ValueError("k must be >= 1")
        answer = self._ask("keywords", transcript=transcript, k=k)
        out: list[str] = []
        for part in re.split(r"[,\n]", answer):
            term = part.strip().strip(".\"'-*").strip().lower()
            if term and term not in out:
                out.append(term)
        return out[:k]


def analyze_sentiment(transcript: str, backend: SentimentBackend, fallback: SentimentBackend | None = None) -> str:
    if not transcript.strip():
        return "neutral"
    try:
        return backend.sentiment(transcript)
    except BackendUnavailable:
        if fallback is None:
            raise
        logger.warning("sentiment backend %s unavailable; using %s", backend.backend_id, fallback.backend_id)
        return fallback.sentiment(transcript)


def extract_keywords(transcript: str, backend: KeywordBackend, k: int = DEFAULT_K, fallback: KeywordBackend | None = None) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not transcript.strip():
        return []
    try:
        return backend.keywords(transcript, k)
    except BackendUnavailable:
        if fallback is None:
            raise
        logger.warning("keyword backend %s unavailable; using %s", backend.backend_id, fallback.backend_id)
        return fallback.keywords(transcript, k)


def analyze_text(
    transcript: str,
    sentiment_backend: SentimentBackend,
    keyword_backend: KeywordBackend | None = None,
    k: int = DEFAULT_K,
    fallback=None,
) -> TextAttributes:
    keyword_backend = keyword_backend or sentiment_backend
    sentiment = analyze_sentiment(transcript, sentiment_backend, fallback)
    keywords = extract_keywords(transcript, keyword_backend, k, fallback)
    ids = sorted({sentiment_backend.backend_id, keyword_backend.backend_id})
    return TextAttributes(sentiment, tuple(keywords), "+".join(ids), transcript_hash(transcript))
