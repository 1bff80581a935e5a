"""Benchmark runs: datasets, per-sample traces, the frames metric and reports.

A run directory looks like::

    out/
      traces/<sample_id>.jsonl   one per finished sample, written atomically
      report.json
      report.txt

Reports are rebuilt from the trace files alone, so a run that was
interrupted and resumed produces the same report as one that was not.
"""

from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from cogniloop.agents import run_session
from cogniloop.config import SessionConfig
from cogniloop.errors import DuplicateId, OutOfRange, ParseError
from cogniloop.gateway import BackendSuite
from cogniloop.media import FrameIndexTable, index_video
from cogniloop.memory import WorkingMemory, render_context
from cogniloop.trace import CATEGORIES, SessionTrace

TRACE_DIR = "traces"
FRAMES_RULE = "frames = distinct frame timestamps sent to the captioner or the VQA model (preview and verification included)"
_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    video_path: str
    question: str
    options: tuple[str, ...]
    answer_index: int | None = None

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValueError(f"sample {self.sample_id!r} needs at least two options")
        if self.answer_index is not None and not 0 <= self.answer_index < len(self.options):
            raise ValueError(f"sample {self.sample_id!r}: answer_index {self.answer_index} out of range")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "video_path": self.video_path,
            "question": self.question,
            "options": list(self.options),
            "answer_index": self.answer_index,
        }


def load_dataset(path: str | os.PathLike) -> list[Sample]:
    """Read a JSONL dataset; relative video paths resolve against the file's directory."""
    path = Path(path)
    base = path.resolve().parent
    samples, seen = [], set()
    for row, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record must be a JSON object")
            unknown = set(obj) - {"sample_id", "video_path", "question", "options", "answer_index"}
            if unknown:
                raise ValueError(f"unknown fields {sorted(unknown)}")
            options = obj["options"]
            if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
                raise ValueError("options must be a list of strings")
            answer = obj.get("answer_index")
            if answer is not None and (not isinstance(answer, int) or isinstance(answer, bool)):
                raise ValueError("answer_index must be an integer")
            video = Path(obj["video_path"])
            sample = Sample(
                str(obj["sample_id"]),
                str(video if video.is_absolute() else base / video),
                str(obj["question"]),
                tuple(options),
                answer,
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), row=row) from exc
        if sample.sample_id in seen:
            raise DuplicateId(f"row {row}: duplicate sample_id {sample.sample_id!r}")
        seen.add(sample.sample_id)
        samples.append(sample)
    return samples


def frames_metric(trace: SessionTrace) -> int:
    """Number of distinct frames that were captioned or queried by VQA."""
    return len({t for e in trace.events if e.category in ("caption", "qa") for t in (e.frames or ())})


def judge_answer(predicted: int | None, truth: int, n_options: int) -> bool:
    """Strict equality; ``None`` (a failed session) is never correct."""
    if not 0 <= truth < n_options:
        raise OutOfRange(f"truth {truth} outside 0-{n_options - 1}")
    if predicted is None:
        return False
    if not 0 <= predicted < n_options:
        raise OutOfRange(f"prediction {predicted} outside 0-{n_options - 1}")
    return predicted == truth


# -- running ------------------------------------------------------------------


def default_indexer(fps: float, workdir: str | os.PathLike) -> Callable[[Sample], FrameIndexTable]:
    """Videos are extracted with ffmpeg; a ``.json`` path is taken as a ready frame table."""

    def index(sample: Sample) -> FrameIndexTable:
        if sample.video_path.endswith(".json"):
            return FrameIndexTable.load(sample.video_path)
        return index_video(sample.video_path, fps, workdir)

    return index


def trace_path(out_dir: str | os.PathLike, sample_id: str) -> Path:
    return Path(out_dir) / TRACE_DIR / f"{_SAFE_ID.sub('_', sample_id)}.jsonl"


def _finished(path: Path) -> bool:
    if not path.exists():
        return False
    try:
        return SessionTrace.load(path).complete
    except ParseError:
        return False


def _run_one(
    sample: Sample,
    config: SessionConfig,
    suite: BackendSuite,
    indexer: Callable[[Sample], FrameIndexTable],
    out_dir: Path,
) -> None:
    try:
        table = indexer(sample)
    except Exception as exc:
        trace = SessionTrace(sample.sample_id, config.to_dict(), sample.to_dict())
        trace.failed, trace.complete = True, True
        trace.error = f"{type(exc).__name__}: {exc}"
    else:
        trace = run_session(
            table, sample.question, sample.options, config, suite, sample.sample_id, sample.to_dict()
        ).trace
    trace.write(trace_path(out_dir, sample.sample_id))


def run_benchmark(
    samples: list[Sample],
    config: SessionConfig,
    suite: BackendSuite,
    out_dir: str | os.PathLike,
    parallelism: int = 1,
    indexer: Callable[[Sample], FrameIndexTable] | None = None,
    workdir: str | os.PathLike | None = None,
) -> Report:
    """Run every sample not already finished in ``out_dir``, then write and return the report."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DuplicateId("duplicate sample ids in benchmark input")
    out_dir = Path(out_dir)
    (out_dir / TRACE_DIR).mkdir(parents=True, exist_ok=True)
    indexer = indexer or default_indexer(config.fps, workdir or out_dir / "frames")
    todo = [s for s in samples if not _finished(trace_path(out_dir, s.sample_id))]

    pool = ThreadPoolExecutor(max_workers=parallelism, thread_name_prefix="cogniloop")
    try:
        futures = [pool.submit(_run_one, s, config, suite, indexer, out_dir) for s in todo]
        for f in futures:
            f.result()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)

    report = build_report(out_dir, ids)
    report.write(out_dir)
    return report


# -- reporting ----------------------------------------------------------------


@dataclass(frozen=True)
class SampleRow:
    sample_id: str
    answer_index: int | None
    truth: int | None
    correct: bool | None
    failed: bool
    frames: int
    times: dict[str, float]
    llm_calls: int
    llm_tokens: int
    tokens_estimated: bool
    error: str | None

    @property
    def total_time(self) -> float:
        return math.fsum(self.times[c] for c in CATEGORIES)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "answer_index": self.answer_index,
            "truth": self.truth,
            "correct": self.correct,
            "failed": self.failed,
            "frames": self.frames,
            "times": self.times,
            "total_time": self.total_time,
            "llm_calls": self.llm_calls,
            "llm_tokens": self.llm_tokens,
            "tokens_estimated": self.tokens_estimated,
            "error": self.error,
        }


def row_from_trace(trace: SessionTrace) -> SampleRow:
    truth = trace.sample.get("answer_index")
    correct = None
    if truth is not None:
        correct = judge_answer(None if trace.failed else trace.answer_index, truth, len(trace.sample["options"]))
    totals = {c: math.fsum(e.latency_s for e in trace.events if e.category == c) for c in CATEGORIES}
    return SampleRow(
        sample_id=trace.sample_id,
        answer_index=trace.answer_index,
        truth=truth,
        correct=correct,
        failed=trace.failed,
        frames=frames_metric(trace),
        times=totals,
        llm_calls=trace.llm_calls(),
        llm_tokens=trace.llm_tokens(),
        tokens_estimated=any(e.tokens.get("estimated") for e in trace.events if e.category == "llm" and e.tokens),
        error=trace.error,
    )


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


@dataclass(frozen=True)
class Report:
    rows: tuple[SampleRow, ...]
    accuracy: float | None
    mean_frames: float | None
    mean_times: dict[str, float | None]
    mean_total_time: float | None
    mean_llm_calls: float | None
    mean_llm_tokens: float | None
    n_failed: int
    frames_rule: str = field(default=FRAMES_RULE)

    @classmethod
    def from_rows(cls, rows: list[SampleRow]) -> Report:
        rows = sorted(rows, key=lambda r: r.sample_id)
        ok = [r for r in rows if not r.failed]
        labeled = [r for r in rows if r.correct is not None]
        accuracy = 100.0 * sum(r.correct for r in labeled) / len(labeled) if labeled else None
        return cls(
            rows=tuple(rows),
            accuracy=accuracy,
            mean_frames=_mean([r.frames for r in ok]),
            mean_times={c: _mean([r.times[c] for r in ok]) for c in CATEGORIES},
            mean_total_time=_mean([r.total_time for r in ok]),
            mean_llm_calls=_mean([r.llm_calls for r in ok]),
            mean_llm_tokens=_mean([r.llm_tokens for r in ok]),
            n_failed=len(rows) - len(ok),
        )

    def to_dict(self) -> dict:
        return {
            "frames_rule": self.frames_rule,
            "n_samples": len(self.rows),
            "n_failed": self.n_failed,
            "accuracy": self.accuracy,
            "mean_frames": self.mean_frames,
            "mean_times": self.mean_times,
            "mean_total_time": self.mean_total_time,
            "mean_llm_calls": self.mean_llm_calls,
            "mean_llm_tokens": self.mean_llm_tokens,
            "tokens_estimated": any(r.tokens_estimated for r in self.rows),
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        def num(x, fmt="{:.2f}"):
            return "-" if x is None else fmt.format(x)

        headers = [
            "Sample", "Correct", "Frames", "Embedding Time", "Retrieval Time", "Caption Time",
            "QA Time", "LLM Time", "Total Time", "LLM Calls", "LLM Tokens",
        ]
        body = []
        for r in self.rows:
            verdict = "FAILED" if r.failed else {True: "yes", False: "no", None: "-"}[r.correct]
            body.append(
                [r.sample_id, verdict, str(r.frames)]
                + [f"{r.times[c]:.2f}" for c in CATEGORIES]
                + [f"{r.total_time:.2f}", str(r.llm_calls), str(r.llm_tokens)]
            )
        body.append(
            ["mean", num(self.accuracy, "{:.1f}%"), num(self.mean_frames, "{:.1f}")]
            + [num(self.mean_times[c]) for c in CATEGORIES]
            + [num(self.mean_total_time), num(self.mean_llm_calls, "{:.1f}"), num(self.mean_llm_tokens, "{:.0f}")]
        )
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(headers)]
        fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        lines = [f"# {self.frames_rule}", f"# samples: {len(self.rows)}, failed: {self.n_failed}"]
        if any(r.tokens_estimated for r in self.rows):
            lines.append("# some token counts are estimated (backend did not report usage)")
        lines += [fmt(headers), fmt(["-" * w for w in widths])]
        lines += [fmt(row) for row in body[:-1]]
        lines += [fmt(["-" * w for w in widths]), fmt(body[-1])]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike) -> None:
        out_dir = Path(out_dir)
        for name, text in (("report.json", self.to_json()), ("report.txt", self.render_table())):
            tmp = out_dir / f"{name}.part"
            tmp.write_text(text)
            os.replace(tmp, out_dir / name)


def load_traces(out_dir: str | os.PathLike, sample_ids: list[str] | None = None) -> list[SessionTrace]:
    folder = Path(out_dir) / TRACE_DIR
    if sample_ids is None:
        paths = sorted(folder.glob("*.jsonl"))
    else:
        paths = [trace_path(out_dir, s) for s in sample_ids]
    traces = []
    for p in paths:
        if p.exists():
            trace = SessionTrace.load(p)
            if trace.complete:
                traces.append(trace)
    return traces


def build_report(out_dir: str | os.PathLike, sample_ids: list[str] | None = None) -> Report:
    """Report over the finished traces in ``out_dir`` (optionally only the given samples)."""
    return Report.from_rows([row_from_trace(t) for t in load_traces(out_dir, sample_ids)])


# -- inspection ---------------------------------------------------------------


def _event_summary(e) -> str:
    p = e.payload
    if e.category == "llm":
        reply = (p.get("reply") or "").strip().splitlines()
        return f"{p.get('purpose') or 'chat'} -> {reply[0] if reply else ''}" + (" ..." if len(reply) > 1 else "")
    if e.category == "caption":
        return f"t={e.frames[0]:.2f} {p.get('caption', '')}" if e.frames else str(p.get("caption", ""))
    if e.category == "qa":
        return f"t={e.frames[0]:.2f} Q: {p.get('question', '')} A: {p.get('answer', '')}"
    if e.category == "retrieval":
        return f"{p.get('op', '')} selected={p.get('selected', [])}"
    if p.get("kind") == "text":
        return f"text {p.get('text', '')!r}"
    return f"{p.get('count', 0)} frames"


def render_trace(trace: SessionTrace) -> str:
    lines = [f"Sample: {trace.sample_id}"]
    if trace.sample.get("question"):
        lines.append(f"Question: {trace.sample['question']}")
    for i, opt in enumerate(trace.sample.get("options", ())):
        lines.append(f"  {i}. {opt}")
    if trace.complete:
        status = "FAILED" if trace.failed else f"answer {trace.answer_index}"
        lines.append(f"Result: {status}" + (f" ({trace.error})" if trace.error else ""))
    if not trace.events and trace.memory is None and not trace.decisions:
        return "\n".join(lines) + "\n"

    if trace.events:
        lines += ["", "Events:"]
        for n, e in enumerate(trace.events, 1):
            lines.append(f"  {n:3d} {e.phase or '-':<12} {e.category:<9} {e.latency_s:8.3f}s  {_event_summary(e)}")
    if trace.decisions:
        lines += ["", "Decisions:"]
        for d in trace.decisions:
            kind = d.get("kind")
            if kind == "verification":
                verdicts = ", ".join(f"{c!r}: {v}" for c, v in d.get("verdicts", [])) or "no key information"
                lines.append(f"  step {d['step']}: verification -> {verdicts}")
            elif kind == "action":
                lines.append(f"  step {d['step']}: action {d['tool']} {d['raw_input']}")
            elif kind == "continue":
                lines.append(f"  step {d['step']}: continue; guidance: {d['guidance']}")
            else:
                final = " (forced)" if d.get("final") else ""
                lines.append(f"  step {d['step']}: terminate{final}; answer {d['answer_index']}")
    if trace.memory is not None:
        lines += ["", "Working memory:", render_context(WorkingMemory.from_dict(trace.memory))]
    totals = trace.totals()
    lines += [
        "",
        "Totals: frames={} {} total={:.3f}s llm_calls={} llm_tokens={} retries={}".format(
            frames_metric(trace),
            " ".join(f"{c}={totals[c]:.3f}s" for c in CATEGORIES),
            math.fsum(totals.values()),
            trace.llm_calls(),
            trace.llm_tokens(),
            trace.retries,
        ),
    ]
    return "\n".join(lines) + "\n"


def inspect_trace(path: str | os.PathLike) -> str:
    return render_trace(SessionTrace.load(path))
