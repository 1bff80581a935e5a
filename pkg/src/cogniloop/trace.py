"""Per-session event log.

Every model call and every kernel invocation inside a tool appends one
:class:`TraceEvent` to the *active* trace. A trace is made active for the
current thread/task with :meth:`SessionTrace.activated`; calls made while no
trace is active go to a throwaway trace.
"""

from __future__ import annotations

import contextvars
import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from cogniloop.errors import ParseError

CATEGORIES = ("embedding", "retrieval", "caption", "qa", "llm")


@dataclass
class TraceEvent:
    category: str
    latency_s: float
    payload: dict = field(default_factory=dict)
    tokens: dict | None = None
    frames: list[float] | None = None
    phase: str | None = None
    backend: str | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown trace category {self.category!r}")
        if self.latency_s < 0:
            raise ValueError("latency must be non-negative")

    def to_dict(self) -> dict:
        out = {"category": self.category, "latency_s": self.latency_s, "payload": self.payload}
        for name in ("tokens", "frames", "phase", "backend"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> TraceEvent:
        return cls(
            category=data["category"],
            latency_s=data["latency_s"],
            payload=data.get("payload", {}),
            tokens=data.get("tokens"),
            frames=data.get("frames"),
            phase=data.get("phase"),
            backend=data.get("backend"),
        )


_active: contextvars.ContextVar[SessionTrace | None] = contextvars.ContextVar(
    "cogniloop_trace", default=None
)
_phase: contextvars.ContextVar[str | None] = contextvars.ContextVar("cogniloop_phase", default=None)


@dataclass
class SessionTrace:
    """Full record of one video-question session."""

    sample_id: str = ""
    config: dict = field(default_factory=dict)
    sample: dict = field(default_factory=dict)
    events: list[TraceEvent] = field(default_factory=list)
    memory: dict | None = None
    decisions: list[dict] = field(default_factory=list)
    answer_index: int | None = None
    failed: bool = False
    error: str | None = None
    retries: int = 0
    warnings: list[str] = field(default_factory=list)
    complete: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, event: TraceEvent) -> TraceEvent:
        if event.phase is None:
            event.phase = _phase.get()
        with self._lock:
            self.events.append(event)
        return event

    def note_retry(self) -> None:
        with self._lock:
            self.retries += 1

    @contextmanager
    def activated(self) -> Iterator[SessionTrace]:
        token = _active.set(self)
        try:
            yield self
        finally:
            _active.reset(token)

    def totals(self) -> dict[str, float]:
        out = {c: 0.0 for c in CATEGORIES}
        for e in self.events:
            out[e.category] += e.latency_s
        return out

    def llm_calls(self) -> int:
        return sum(1 for e in self.events if e.category == "llm")

    def llm_tokens(self) -> int:
        return sum(
            e.tokens.get("prompt", 0) + e.tokens.get("completion", 0)
            for e in self.events
            if e.category == "llm" and e.tokens
        )

    # serialization: one JSON object per line, each tagged with "type"
    def to_lines(self) -> list[str]:
        header = {
            "type": "header",
            "sample_id": self.sample_id,
            "config": self.config,
            "sample": self.sample,
        }
        lines = [header]
        lines += [{"type": "event", **e.to_dict()} for e in self.events]
        lines += [{"type": "decision", **d} for d in self.decisions]
        if self.memory is not None:
            lines.append({"type": "memory", "memory": self.memory})
        if self.complete:
            lines.append(
                {
                    "type": "end",
                    "answer_index": self.answer_index,
                    "failed": self.failed,
                    "error": self.error,
                    "retries": self.retries,
                    "warnings": self.warnings,
                }
            )
        return [json.dumps(obj, sort_keys=True) for obj in lines]

    def write(self, path: str | os.PathLike) -> None:
        """Write atomically: readers see the old file or the new one, never half."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".part")
        tmp.write_text("\n".join(self.to_lines()) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_lines(cls, lines: list[str]) -> SessionTrace:
        trace = cls()
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "header":
                    trace.sample_id = obj["sample_id"]
                    trace.config = obj.get("config", {})
                    trace.sample = obj.get("sample", {})
                elif kind == "event":
                    trace.events.append(TraceEvent.from_dict(obj))
                elif kind == "decision":
                    trace.decisions.append(obj)
                elif kind == "memory":
                    trace.memory = obj["memory"]
                elif kind == "end":
                    trace.answer_index = obj["answer_index"]
                    trace.failed = obj["failed"]
                    trace.error = obj.get("error")
                    trace.retries = obj.get("retries", 0)
                    trace.warnings = obj.get("warnings", [])
                    trace.complete = True
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(exc), row=n) from exc
        return trace

    @classmethod
    def load(cls, path: str | os.PathLike) -> SessionTrace:
        return cls.from_lines(Path(path).read_text().splitlines())


def active_trace() -> SessionTrace:
    trace = _active.get()
    return trace if trace is not None else SessionTrace(sample_id="<detached>")


@contextmanager
def phase(name: str) -> Iterator[None]:
    """Tag events recorded inside the block (e.g. ``"verification"``)."""
    token = _phase.set(name)
    try:
        yield
    finally:
        _phase.reset(token)


@contextmanager
def ensure_active() -> Iterator[SessionTrace]:
    """Yield the active trace, activating a fresh one if there is none."""
    trace = _active.get()
    if trace is not None:
        yield trace
        return
    trace = SessionTrace(sample_id="<detached>")
    with trace.activated():
        yield trace
