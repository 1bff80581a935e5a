"""Scripted, deterministic stand-ins for every model role.

A :class:`MockScript` is a plain JSON document::

    {
      "strict": true,
      "embedding_dim": 8,
      "chat_responses": [
        "plain queued reply",
        {"pattern": "(?s)^You are a Perception Agent", "reply": ["first", "second"]},
        {"pattern": "Reflection", "reply": "always this", "usage": [120, 8]}
      ],
      "caption_map": {"clip@46.00": "a boy holds a bag"},
      "vqa_map": [{"frame": "clip@46.00", "pattern": "holding", "answer": "a bag"}],
      "embedding_map": {"clip@46.00": [0, 1, 0], "text:bag": [0, 1, 0]},
      "hallucination_overrides": [{"frame": "clip@46.00", "caption": "a boy holds a teddy bear"}],
      "latency": {"llm": 1.0, "caption": 0.5, "qa": 0.25, "embedding": 0.125, "retrieval": 0.0625}
    }

Frame keys are ``<video_id>@<seconds to 2 decimals>``; ``*@46.00`` matches
any video. Text embeddings are looked up under ``text:<query>``.

Chat resolution: the first pattern rule whose regex matches the final user
message answers (a list reply is consumed one item per call); otherwise the
next plain string in the queue is used. Running out is an error.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cogniloop.errors import ScriptExhausted, UnscriptedCall
from cogniloop.gateway import BackendSuite, ChatReply
from cogniloop.media import FrameRef


@dataclass
class ChatRule:
    pattern: re.Pattern
    replies: list[str]
    repeat: bool
    usage: tuple[int, int] | None = None


@dataclass
class MockScript:
    chat_responses: list = field(default_factory=list)
    caption_map: dict[str, str] = field(default_factory=dict)
    vqa_map: list[dict] = field(default_factory=list)
    embedding_map: dict[str, list[float]] = field(default_factory=dict)
    hallucination_overrides: list[dict] = field(default_factory=list)
    latency: dict[str, float] = field(default_factory=dict)
    strict: bool = True
    embedding_dim: int = 16

    def to_dict(self) -> dict:
        return {
            "chat_responses": self.chat_responses,
            "caption_map": self.caption_map,
            "vqa_map": self.vqa_map,
            "embedding_map": self.embedding_map,
            "hallucination_overrides": self.hallucination_overrides,
            "latency": self.latency,
            "strict": self.strict,
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> MockScript:
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown mock script fields: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | os.PathLike) -> MockScript:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _lookup(mapping: dict, frame: FrameRef):
    for key in (frame.key, f"*@{frame.timestamp_s:.2f}"):
        if key in mapping:
            return mapping[key]
    return None


def _matches_frame(key: str, frame: FrameRef) -> bool:
    return key in (frame.key, f"*@{frame.timestamp_s:.2f}")


class _MockBase:
    needs_image_files = False
    max_retries = 2
    retry_backoff_s = 0.0

    def __init__(self, script: MockScript, role: str, backend_id: str | None = None):
        self.script = script
        self.backend_id = backend_id or f"mock-{role}"
        self.scripted_latency = float(script.latency.get(role, 0.0))


class MockChat(_MockBase):
    def __init__(self, script: MockScript, backend_id: str | None = None):
        super().__init__(script, "llm", backend_id)
        self._lock = threading.Lock()
        self._queue: list[tuple[str, tuple[int, int] | None]] = []
        self._rules: list[ChatRule] = []
        for entry in script.chat_responses:
            if isinstance(entry, str):
                self._queue.append((entry, None))
            elif "pattern" in entry:
                reply = entry["reply"]
                self._rules.append(
                    ChatRule(
                        pattern=re.compile(entry["pattern"]),
                        replies=list(reply) if isinstance(reply, list) else [reply],
                        repeat=not isinstance(reply, list),
                        usage=tuple(entry["usage"]) if entry.get("usage") else None,
                    )
                )
            else:
                self._queue.append((entry["reply"], tuple(entry["usage"]) if entry.get("usage") else None))
        self.calls = 0

    def complete(self, messages: list[dict], temperature: float) -> ChatReply:
        prompt = messages[-1]["content"]
        if not isinstance(prompt, str):
            prompt = json.dumps(prompt)
        with self._lock:
            self.calls += 1
            for rule in self._rules:
                if rule.pattern.search(prompt):
                    if not rule.replies:
                        raise ScriptExhausted(f"rule {rule.pattern.pattern!r} has no replies left")
                    text = rule.replies[0] if rule.repeat else rule.replies.pop(0)
                    return _reply(text, rule.usage)
            if not self._queue:
                raise ScriptExhausted(f"chat script exhausted at call {self.calls}")
            text, usage = self._queue.pop(0)
            return _reply(text, usage)


def _reply(text: str, usage: tuple[int, int] | None) -> ChatReply:
    if usage is None:
        return ChatReply(text)
    return ChatReply(text, usage[0], usage[1])


class MockCaptioner(_MockBase):
    def __init__(self, script: MockScript, backend_id: str | None = None):
        super().__init__(script, "caption", backend_id)

    def describe(self, frame: FrameRef, prompt: str) -> str:
        for override in self.script.hallucination_overrides:
            if _matches_frame(override["frame"], frame):
                return override["caption"]
        text = _lookup(self.script.caption_map, frame)
        if text is not None:
            return text
        if self.script.strict:
            raise UnscriptedCall(f"no scripted caption for {frame.key}")
        return f"a scene at {frame.timestamp_s:.2f} seconds"


class MockVqa(_MockBase):
    def __init__(self, script: MockScript, backend_id: str | None = None):
        super().__init__(script, "qa", backend_id)

    def answer(self, frame: FrameRef, question: str) -> str:
        for rule in self.script.vqa_map:
            if _matches_frame(rule["frame"], frame) and re.search(rule["pattern"], question, re.I):
                return rule["answer"]
        if self.script.strict:
            raise UnscriptedCall(f"no scripted answer for {frame.key}: {question!r}")
        return "unknown"


class MockEmbedder(_MockBase):
    def __init__(self, script: MockScript, backend_id: str | None = None):
        super().__init__(script, "embedding", backend_id)

    def _vector(self, key: str, fallback_key: str | None = None) -> list[float]:
        for k in (key, fallback_key):
            if k is not None and k in self.script.embedding_map:
                return list(self.script.embedding_map[k])
        if self.script.strict:
            raise UnscriptedCall(f"no scripted embedding for {key}")
        seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
        return np.random.default_rng(seed).standard_normal(self.script.embedding_dim).tolist()

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._vector(f"text:{t}") for t in texts]

    def embed_images(self, frames: Sequence[FrameRef]) -> list[list[float]]:
        return [self._vector(f.key, f"*@{f.timestamp_s:.2f}") for f in frames]


def mock_suite(script: MockScript, caption_prompt: str | None = None) -> BackendSuite:
    """A suite whose four roles all read from ``script``."""
    kwargs = {}
    if caption_prompt:
        kwargs["caption_prompt"] = caption_prompt
    return BackendSuite(
        chat=MockChat(script),
        captioner=MockCaptioner(script),
        vqa=MockVqa(script),
        embedder=MockEmbedder(script),
        retrieval_latency=float(script.latency.get("retrieval", 0.0)),
        **kwargs,
    )
