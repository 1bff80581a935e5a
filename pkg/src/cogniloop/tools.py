"""Perception tools: divergent search, temporal focus, spatial focus, quick preview.

Each tool turns a request into an :class:`Observation`, a time-ordered list
of captions or VQA answers plus the frames that were captioned or queried.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

from cogniloop import gateway
from cogniloop.errors import EmptySpan, OutOfRangeTimestamp
from cogniloop.gateway import BackendSuite
from cogniloop.grammar import DIVERGENT_SEARCH, SPATIAL_FOCUS, TEMPORAL_FOCUS, ToolCall
from cogniloop.kernels import (
    build_profile,
    kmeans,
    segment_watershed,
    select_peak_representatives,
    select_topk,
    select_uniform,
)
from cogniloop.media import FrameIndexTable, FrameRef, frames_in_span, nearest_frame
from cogniloop.trace import CATEGORIES, SessionTrace, TraceEvent, ensure_active

QUICK_PREVIEW = "quick_preview"
STRATEGIES = ("watershed", "topk", "uniform")


@dataclass(frozen=True)
class ObservationItem:
    timestamp_s: float
    text: str
    kind: str  # "caption" | "vqa_answer"


@dataclass
class Observation:
    tool: str
    items: list[ObservationItem]
    frames_touched: list[FrameRef]
    elapsed: dict[str, float] = field(default_factory=dict)

    def render(self) -> str:
        return "\n".join(f"[t={i.timestamp_s:05.2f}] {i.text}" for i in self.items)

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "items": [{"timestamp_s": i.timestamp_s, "text": i.text, "kind": i.kind} for i in self.items],
            "frames_touched": [
                {"video_id": f.video_id, "index": f.index, "timestamp_s": f.timestamp_s, "image_path": f.image_path}
                for f in self.frames_touched
            ],
            "elapsed": self.elapsed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Observation:
        return cls(
            tool=data["tool"],
            items=[ObservationItem(i["timestamp_s"], i["text"], i["kind"]) for i in data["items"]],
            frames_touched=[
                FrameRef(f["video_id"], f["index"], f["timestamp_s"], f["image_path"])
                for f in data["frames_touched"]
            ],
            elapsed=dict(data.get("elapsed", {})),
        )


@contextmanager
def _tool_run() -> Iterator[tuple[SessionTrace, dict]]:
    """Collect per-category latency of the events recorded inside the block."""
    elapsed: dict[str, float] = {}
    with ensure_active() as trace:
        start = len(trace.events)
        yield trace, elapsed
        totals = {c: 0.0 for c in CATEGORIES}
        for e in trace.events[start:]:
            totals[e.category] += e.latency_s
        elapsed.update(totals)


@contextmanager
def _retrieval(trace: SessionTrace, suite: BackendSuite, what: str) -> Iterator[dict]:
    payload = {"op": what}
    start = time.perf_counter()
    yield payload
    latency = suite.retrieval_latency
    if latency is None:
        latency = time.perf_counter() - start
    trace.record(TraceEvent(category="retrieval", latency_s=latency, payload=payload))


def _unique(frames: list[FrameRef]) -> list[FrameRef]:
    seen, out = set(), []
    for f in sorted(frames, key=lambda f: f.index):
        if f.index not in seen:
            seen.add(f.index)
            out.append(f)
    return out


def _caption_all(frames: list[FrameRef], suite: BackendSuite) -> list[ObservationItem]:
    return [
        ObservationItem(f.timestamp_s, gateway.caption(suite.captioner, f, suite.caption_prompt), "caption")
        for f in sorted(frames, key=lambda f: f.index)
    ]


def _span_frames(table: FrameIndexTable, span: tuple[float, float]) -> list[FrameRef]:
    frames = frames_in_span(table, span)
    if not frames:
        raise EmptySpan(f"no frames of {table.video_id} in span {span}")
    return frames


def divergent_search(
    query: str,
    span: tuple[float, float],
    table: FrameIndexTable,
    suite: BackendSuite,
    n_f: int = 5,
    window: int = 5,
    strategy: str = "watershed",
) -> Observation:
    """Find up to ``n_f`` frames in ``span`` related to ``query`` and caption them.

    ``strategy`` picks the selector: one representative per above-mean peak
    region (``"watershed"``), the highest-scoring frames (``"topk"``), or
    even spacing that ignores the query (``"uniform"``).
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    if n_f < 1:
        raise ValueError("n_f must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    frames = _span_frames(table, span)
    with _tool_run() as (trace, elapsed):
        q_vec = gateway.embed_text(suite.embedder, query)
        f_vecs = gateway.embed_frames(suite.embedder, frames)
        with _retrieval(trace, suite, "similarity") as payload:
            profile = build_profile(q_vec, f_vecs, [f.timestamp_s for f in frames], span, window)
            if len(frames) == 1:
                picked = [0]
            elif strategy == "watershed":
                regions = segment_watershed(profile.smoothed, profile.threshold)
                picked = select_peak_representatives(profile, regions, n_f)
                if not picked:
                    # flat profile: nothing strictly above the mean
                    picked = select_topk(profile, 1)
                payload["regions"] = len(regions)
            elif strategy == "topk":
                picked = select_topk(profile, n_f)
            else:
                picked = select_uniform(len(frames), n_f)
            payload.update(strategy=strategy, frames=len(frames), selected=[frames[i].timestamp_s for i in picked])
        chosen = [frames[i] for i in picked]
        items = _caption_all(chosen, suite)
    return Observation(DIVERGENT_SEARCH, items, _unique(chosen), elapsed)


def _cluster_and_caption(
    frames: list[FrameRef], k: int, seed: int, suite: BackendSuite, trace: SessionTrace
) -> tuple[list[FrameRef], list[ObservationItem]]:
    vecs = gateway.embed_frames(suite.embedder, frames)
    with _retrieval(trace, suite, "clustering") as payload:
        result = kmeans(vecs, k, seed)
        reps = sorted((frames[i] for i in result.representatives), key=lambda f: f.index)
        payload.update(k=result.k, frames=len(frames), selected=[f.timestamp_s for f in reps])
    return reps, _caption_all(reps, suite)


def temporal_focus(
    spans: list[tuple[float, float]],
    table: FrameIndexTable,
    suite: BackendSuite,
    k_t: int = 3,
    seed: int = 0,
) -> Observation:
    """Caption the ``k_t`` k-means representatives of each span."""
    if not spans:
        raise ValueError("at least one span is required")
    if k_t < 1:
        raise ValueError("k_t must be >= 1")
    per_span = [_span_frames(table, s) for s in spans]
    touched: list[FrameRef] = []
    items: list[ObservationItem] = []
    with _tool_run() as (trace, elapsed):
        for frames in per_span:
            reps, span_items = _cluster_and_caption(frames, k_t, seed, suite, trace)
            touched += reps
            items += span_items
    items.sort(key=lambda i: i.timestamp_s)
    return Observation(TEMPORAL_FOCUS, items, _unique(touched), elapsed)


def spatial_focus(
    queries: list[tuple[str, float]],
    table: FrameIndexTable,
    suite: BackendSuite,
) -> Observation:
    """Ask each question of the frame nearest its timestamp; input order is kept."""
    if not queries:
        raise ValueError("at least one (question, timestamp) pair is required")
    for q, t in queries:
        if not q or not q.strip():
            raise ValueError("questions must be non-empty")
        if t < 0 or t > table.duration_s:
            raise OutOfRangeTimestamp(f"timestamp {t} outside [0, {table.duration_s}]")
    items, touched = [], []
    with _tool_run() as (trace, elapsed):
        for q, t in queries:
            frame = nearest_frame(table, t)
            answer = gateway.vqa(suite.vqa, frame, q)
            items.append(ObservationItem(frame.timestamp_s, f"Q: {q} A: {answer}", "vqa_answer"))
            touched.append(frame)
    return Observation(SPATIAL_FOCUS, items, _unique(touched), elapsed)


def quick_preview(table: FrameIndexTable, suite: BackendSuite, k_m: int = 5, seed: int = 0) -> Observation:
    """Scene summary of the whole video: caption ``k_m`` k-means representatives."""
    if k_m < 1:
        raise ValueError("k_m must be >= 1")
    if not table.frames:
        raise EmptySpan(f"table for {table.video_id} has no frames")
    with _tool_run() as (trace, elapsed):
        reps, items = _cluster_and_caption(list(table.frames), k_m, seed, suite, trace)
    return Observation(QUICK_PREVIEW, items, reps, elapsed)


def run_tool(call: ToolCall, table: FrameIndexTable, suite: BackendSuite, config) -> Observation:
    """Dispatch a parsed tool call using the knobs in a session config."""
    if call.tool == DIVERGENT_SEARCH:
        query, span = call.parsed
        return divergent_search(query, span, table, suite, config.n_f, config.window, config.strategy)
    if call.tool == TEMPORAL_FOCUS:
        return temporal_focus(call.parsed, table, suite, config.k_t, config.seed)
    if call.tool == SPATIAL_FOCUS:
        return spatial_focus(call.parsed, table, suite)
    raise ValueError(f"unknown tool {call.tool!r}")
