"""Uniform access to chat-completion and embedding providers.

Speaks the OpenAI-compatible wire protocol over HTTP and ships a scripted
provider that replays a recorded transcript for offline, deterministic runs.
Every provider implements the same two calls (``chat`` / ``embed``) so the
rest of the pipeline never knows which one it is talking to.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field

import httpx

VALID_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for provider-side failures."""


class AuthFailed(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderUnreachable(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class TranscriptExhausted(GatewayError):
    pass


class DimensionMismatch(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass
class ChatRequest:
    """One chat-completion request. temperature defaults to 0 for reproducibility."""

    model_name: str
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int | None = None

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for m in self.messages:
            if m.role not in VALID_ROLES:
                raise ValueError(f"invalid role {m.role!r}")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass
class TokenUsage:
    prompt: int = 0
    completion: int = 0


@dataclass
class ChatResponse:
    content: str
    token_usage: TokenUsage
    latency: float  # wall-clock seconds, >= 0


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key: str = field(default="", repr=False)  # never logged or persisted
    default_model: str = "gpt-4o-mini"
    max_retries: int = 2
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def complete_chat(req: ChatRequest, cfg: ProviderConfig) -> ChatResponse:
    """Send ``req`` to the OpenAI-compatible endpoint named in ``cfg``.

    Transient failures (throttling, 5xx, network) are retried with exponential
    backoff starting at ``cfg.retry_backoff``, up to ``cfg.max_retries`` extra
    attempts.
    """
    req.validate()
    if not cfg.api_key:
        raise AuthFailed("api_key is empty")
    provider = OpenAIHttpProvider(cfg)
    return provider.chat(req)


def embed_texts(texts: list[str], cfg: ProviderConfig) -> list[EmbeddingVector]:
    if not texts or any(not t for t in texts):
        raise ValueError("texts must be non-empty and contain no empty strings")
    if not cfg.api_key:
        raise AuthFailed("api_key is empty")
    provider = OpenAIHttpProvider(cfg)
    return provider.embed(texts)


class OpenAIHttpProvider:
    """Chat-completions and embeddings over the OpenAI-compatible JSON protocol."""

    def __init__(self, cfg: ProviderConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=60.0)

    def _post(self, path: str, payload: dict) -> dict:
        url = self.cfg.base_url.rstrip("/") + path
        headers = {"Authorization": f"Bearer {self.cfg.api_key}"}
        delay = self.cfg.retry_backoff
        attempts = self.cfg.max_retries + 1
        last_throttle = False
        for attempt in range(attempts):
            try:
                resp = self._client.post(url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                if attempt + 1 < attempts:
                    time.sleep(delay)
                    delay *= 2
                    continue
                raise ProviderUnreachable(str(exc)) from exc
            if resp.status_code in (401, 403):
                raise AuthFailed(f"provider rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_throttle = resp.status_code == 429
                if attempt + 1 < attempts:
                    time.sleep(delay)
                    delay *= 2
                    continue
                if last_throttle:
                    raise RateLimited(f"throttled after {attempts} attempts")
                raise ProviderUnreachable(f"HTTP {resp.status_code} after {attempts} attempts")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse("response body is not JSON") from exc
        raise ProviderUnreachable("unreachable")  # pragma: no cover

    def chat(self, req: ChatRequest) -> ChatResponse:
        req.validate()
        payload: dict = {
            "model": req.model_name or self.cfg.default_model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
        }
        if req.max_tokens is not None:
            payload["max_tokens"] = req.max_tokens
        start = time.perf_counter()
        body = self._post("/chat/completions", payload)
        latency = time.perf_counter() - start
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion shape: {exc}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            content=content,
            token_usage=TokenUsage(
                prompt=int(usage.get("prompt_tokens", 0)),
                completion=int(usage.get("completion_tokens", 0)),
            ),
            latency=latency,
        )

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts or any(not t for t in texts):
            raise ValueError("texts must be non-empty and contain no empty strings")
        body = self._post("/embeddings", {"model": self.cfg.default_model, "input": texts})
        try:
            items = sorted(body["data"], key=lambda d: d["index"])
            vectors = [EmbeddingVector(tuple(float(x) for x in item["embedding"])) for item in items]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"unexpected embeddings shape: {exc}") from exc
        if len(vectors) != len(texts):
            raise MalformedResponse(f"{len(texts)} inputs but {len(vectors)} vectors")
        dims = {v.dimension for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"ragged embedding dimensions: {sorted(dims)}")
        return vectors


@dataclass
class TranscriptEntry:
    tag: str
    reply: str


class ScriptedProvider:
    """Replays a recorded transcript of replies, independent of request content.

    Consumption is serialized through a single ordered cursor so concurrent
    callers each get the next reply exactly once. Every consumed entry is
    logged together with the request it answered. With ``loop=True`` the
    cursor wraps around instead of exhausting (useful when one fixture
    transcript backs many demo sessions).
    """

    def __init__(self, transcript: list[TranscriptEntry], loop: bool = False):
        if not transcript:
            raise ValueError("transcript must be non-empty")
        self._transcript = list(transcript)
        self._cursor = 0
        self._loop = loop
        self._lock = threading.Lock()
        self.replay_log: list[tuple[ChatRequest, str]] = []

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._transcript) - self._cursor

    def chat(self, req: ChatRequest) -> ChatResponse:
        req.validate()
        start = time.perf_counter()
        with self._lock:
            if self._cursor >= len(self._transcript):
                if not self._loop:
                    raise TranscriptExhausted(
                        f"transcript has {len(self._transcript)} entries; call #{self._cursor + 1} has no reply"
                    )
                self._cursor = 0
            entry = self._transcript[self._cursor]
            self._cursor += 1
            self.replay_log.append((req, entry.reply))
        latency = time.perf_counter() - start
        return ChatResponse(content=entry.reply, token_usage=TokenUsage(), latency=latency)


def load_scripted_provider(transcript: list[tuple[str, str]], loop: bool = False) -> ScriptedProvider:
    """Build a ScriptedProvider from (tag, reply) pairs."""
    return ScriptedProvider([TranscriptEntry(tag=t, reply=r) for t, r in transcript], loop=loop)


def load_transcript_file(path: str, loop: bool = False) -> ScriptedProvider:
    """Load a transcript JSON file: a list of {"tag": ..., "reply": ...} objects."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return load_scripted_provider(
        [(e.get("tag", f"entry-{i}"), e["reply"]) for i, e in enumerate(raw)], loop=loop
    )


class DeterministicEmbedder:
    """Offline embedder: hashes each text into a fixed-dimension unit vector.

    Identical texts always map to identical vectors, which is all the retrieval
    tests and offline runs need. ``delay_per_text`` adds a constant per-text
    cost for the ingestion-scaling benchmark.
    """

    def __init__(self, dimension: int = 64, delay_per_text: float = 0.0):
        if dimension <= 0:
            raise ValueError("dimension must be > 0")
        self.dimension = dimension
        self.delay_per_text = delay_per_text

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts or any(not t for t in texts):
            raise ValueError("texts must be non-empty and contain no empty strings")
        out = []
        for text in texts:
            if self.delay_per_text:
                time.sleep(self.delay_per_text)
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            # stretch the 32-byte digest over the requested dimension
            raw = []
            counter = 0
            while len(raw) < self.dimension:
                block = hashlib.sha256(digest + counter.to_bytes(4, "big")).digest()
                raw.extend(b - 127.5 for b in block)
                counter += 1
            vec = raw[: self.dimension]
            norm = sum(x * x for x in vec) ** 0.5
            out.append(EmbeddingVector(tuple(x / norm for x in vec)))
        return out
