"""Uniform access to the four model roles: chat LLM, captioner, VQA, embedder.

Backends only know how to talk to a model. The module-level functions here
wrap every call with retries, latency measurement and trace accounting, so
each successful call adds exactly one event to the active trace and failed
transport attempts only bump the trace's retry counter.
"""

from __future__ import annotations

import os
import time
import weakref
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, TypeVar, runtime_checkable

import numpy as np

from cogniloop.errors import DimensionDrift, EmptyInput, MissingImage, ProtocolError, TransportError
from cogniloop.media import FrameRef
from cogniloop.trace import TraceEvent, active_trace

DEFAULT_CAPTION_PROMPT = "Describe the image/clip concisely."
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF_S = 0.5

T = TypeVar("T")


@dataclass
class ChatReply:
    """What a chat backend hands back; token counts are ``None`` when unreported."""

    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


@dataclass
class ChatExchange:
    messages: list[dict]
    temperature: float
    reply: str
    usage: tuple[int, int]
    latency_s: float
    estimated: bool = False
    backend_id: str = ""


@runtime_checkable
class ChatBackend(Protocol):
    backend_id: str

    def complete(self, messages: list[dict], temperature: float) -> ChatReply: ...


@runtime_checkable
class CaptionBackend(Protocol):
    backend_id: str

    def describe(self, frame: FrameRef, prompt: str) -> str: ...


@runtime_checkable
class VqaBackend(Protocol):
    backend_id: str

    def answer(self, frame: FrameRef, question: str) -> str: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    backend_id: str

    def embed_texts(self, texts: Sequence[str]) -> list[Sequence[float]]: ...

    def embed_images(self, frames: Sequence[FrameRef]) -> list[Sequence[float]]: ...


@dataclass
class BackendSuite:
    """The four backends one session talks to.

    ``retrieval_latency`` replaces the measured wall time of kernel work
    (similarity, clustering) when set; mock suites use it so that reports
    are reproducible byte for byte.
    """

    chat: ChatBackend
    captioner: CaptionBackend
    vqa: VqaBackend
    embedder: EmbeddingBackend
    caption_prompt: str = DEFAULT_CAPTION_PROMPT
    retrieval_latency: float | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for role in ("chat", "captioner", "vqa", "embedder"):
            backend = getattr(self, role)
            if backend is None or not getattr(backend, "backend_id", ""):
                raise ValueError(f"backend for role {role!r} is missing or has no backend_id")


def estimate_tokens(text: str) -> int:
    return len(text.split())


def _with_retries(backend, fn: Callable[[], T]) -> tuple[T, float]:
    retries = getattr(backend, "max_retries", DEFAULT_RETRIES)
    backoff = getattr(backend, "retry_backoff_s", DEFAULT_BACKOFF_S)
    attempt = 0
    while True:
        start = time.perf_counter()
        try:
            result = fn()
        except TransportError:
            if attempt >= retries:
                raise
            active_trace().note_retry()
            time.sleep(backoff * (2**attempt))
            attempt += 1
            continue
        elapsed = time.perf_counter() - start
        scripted = getattr(backend, "scripted_latency", None)
        return result, float(scripted if scripted is not None else elapsed)


def _check_image(backend, frame: FrameRef) -> None:
    if getattr(backend, "needs_image_files", True) and not os.path.isfile(frame.image_path):
        raise MissingImage(f"frame image not found: {frame.image_path}")


def chat(
    backend: ChatBackend,
    messages: list[dict],
    temperature: float = 0.0,
    purpose: str | None = None,
) -> ChatExchange:
    """One chat completion. The last message must come from the user."""
    if not messages:
        raise ValueError("messages must not be empty")
    if messages[-1].get("role") != "user":
        raise ValueError("the final message must have role 'user'")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    reply, latency = _with_retries(backend, lambda: backend.complete(messages, temperature))
    if not isinstance(reply.text, str) or not reply.text.strip():
        raise ProtocolError(f"{backend.backend_id}: empty chat reply")

    estimated = reply.prompt_tokens is None or reply.completion_tokens is None
    if estimated:
        prompt_tokens = sum(estimate_tokens(_content_text(m)) for m in messages)
        completion_tokens = estimate_tokens(reply.text)
    else:
        prompt_tokens, completion_tokens = int(reply.prompt_tokens), int(reply.completion_tokens)

    active_trace().record(
        TraceEvent(
            category="llm",
            latency_s=latency,
            payload={
                "purpose": purpose,
                "prompt": _content_text(messages[-1]),
                "reply": reply.text,
                "n_messages": len(messages),
            },
            tokens={"prompt": prompt_tokens, "completion": completion_tokens, "estimated": estimated},
            backend=backend.backend_id,
        )
    )
    return ChatExchange(
        messages=list(messages),
        temperature=temperature,
        reply=reply.text,
        usage=(prompt_tokens, completion_tokens),
        latency_s=latency,
        estimated=estimated,
        backend_id=backend.backend_id,
    )


def _content_text(message: dict) -> str:
    content = message.get("content", "")
    if isinstance(content, str):
        return content
    return "\n".join(part.get("text", "") for part in content if isinstance(part, dict))


def caption(backend: CaptionBackend, frame: FrameRef, prompt: str = DEFAULT_CAPTION_PROMPT) -> str:
    _check_image(backend, frame)
    text, latency = _with_retries(backend, lambda: backend.describe(frame, prompt))
    if not isinstance(text, str) or not text.strip():
        raise ProtocolError(f"{backend.backend_id}: empty caption for {frame.key}")
    text = text.strip()
    active_trace().record(
        TraceEvent(
            category="caption",
            latency_s=latency,
            payload={"frame": frame.key, "caption": text},
            frames=[frame.timestamp_s],
            backend=backend.backend_id,
        )
    )
    return text


def vqa(backend: VqaBackend, frame: FrameRef, question: str) -> str:
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    _check_image(backend, frame)
    text, latency = _with_retries(backend, lambda: backend.answer(frame, question))
    if not isinstance(text, str) or not text.strip():
        raise ProtocolError(f"{backend.backend_id}: empty answer for {frame.key}")
    text = text.strip()
    active_trace().record(
        TraceEvent(
            category="qa",
            latency_s=latency,
            payload={"frame": frame.key, "question": question, "answer": text},
            frames=[frame.timestamp_s],
            backend=backend.backend_id,
        )
    )
    return text


_dims: "weakref.WeakKeyDictionary[object, int]" = weakref.WeakKeyDictionary()


def _checked(backend, vectors, expected_count: int) -> list[np.ndarray]:
    if len(vectors) != expected_count:
        raise ProtocolError(
            f"{backend.backend_id}: expected {expected_count} embeddings, got {len(vectors)}"
        )
    out = []
    for v in vectors:
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ProtocolError(f"{backend.backend_id}: malformed embedding")
        known = _dims.get(backend)
        if known is None:
            _dims[backend] = arr.size
        elif known != arr.size:
            raise DimensionDrift(f"{backend.backend_id}: dimension changed from {known} to {arr.size}")
        out.append(arr)
    return out


def embed_text(backend: EmbeddingBackend, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyInput("cannot embed empty text")
    vectors, latency = _with_retries(backend, lambda: backend.embed_texts([text]))
    (vec,) = _checked(backend, vectors, 1)
    active_trace().record(
        TraceEvent(
            category="embedding",
            latency_s=latency,
            payload={"kind": "text", "text": text},
            backend=backend.backend_id,
        )
    )
    return vec


def embed_frames(backend: EmbeddingBackend, frames: Sequence[FrameRef]) -> list[np.ndarray]:
    """Embed a batch of frames; the output order matches the input order."""
    if not frames:
        raise EmptyInput("cannot embed an empty frame list")
    for f in frames:
        _check_image(backend, f)
    vectors, latency = _with_retries(backend, lambda: backend.embed_images(list(frames)))
    out = _checked(backend, vectors, len(frames))
    active_trace().record(
        TraceEvent(
            category="embedding",
            latency_s=latency,
            payload={"kind": "frames", "count": len(frames)},
            backend=backend.backend_id,
        )
    )
    return out
