"""Working memory: the append-only record of actions and observations.

Entry 0 is always the quick preview. Verification results are attached to
the entry they checked as annotations; contradicted claims stay in memory
and are flagged when rendered, so the agents can see what turned out false.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from cogniloop.errors import StepGap
from cogniloop.grammar import ToolCall
from cogniloop.tools import QUICK_PREVIEW, Observation

VERDICTS = ("confirmed", "contradicted", "unverifiable")


@dataclass(frozen=True)
class Evidence:
    question: str
    answer: str
    timestamp_s: float


@dataclass(frozen=True)
class Annotation:
    claim: str
    verdict: str
    evidence: tuple[Evidence, ...] = ()

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def render(self) -> str:
        if self.verdict == "confirmed":
            return f"[VERIFIED] {self.claim}"
        if self.verdict == "contradicted":
            facts = "; ".join(f"{e.question} -> {e.answer}" for e in self.evidence) or "no evidence"
            return f"[CONTRADICTED: {facts}] {self.claim}"
        return f"[UNVERIFIABLE] {self.claim}"


@dataclass(frozen=True)
class MemoryEntry:
    step: int
    action: ToolCall | None  # None marks the quick preview
    observation: Observation
    annotations: tuple[Annotation, ...] = ()

    @property
    def tool(self) -> str:
        return QUICK_PREVIEW if self.action is None else self.action.tool


@dataclass(frozen=True)
class WorkingMemory:
    question: str
    options: tuple[str, ...]
    entries: tuple[MemoryEntry, ...] = field(default=())

    @property
    def iterations(self) -> int:
        return len(self.entries) - 1

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "options": list(self.options),
            "entries": [
                {
                    "step": e.step,
                    "action": None if e.action is None else e.action.to_dict(),
                    "observation": e.observation.to_dict(),
                    "annotations": [
                        {
                            "claim": a.claim,
                            "verdict": a.verdict,
                            "evidence": [
                                {"question": x.question, "answer": x.answer, "timestamp_s": x.timestamp_s}
                                for x in a.evidence
                            ],
                        }
                        for a in e.annotations
                    ],
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> WorkingMemory:
        entries = tuple(
            MemoryEntry(
                step=e["step"],
                action=None if e["action"] is None else ToolCall.from_dict(e["action"]),
                observation=Observation.from_dict(e["observation"]),
                annotations=tuple(
                    Annotation(
                        a["claim"],
                        a["verdict"],
                        tuple(Evidence(x["question"], x["answer"], x["timestamp_s"]) for x in a["evidence"]),
                    )
                    for a in e["annotations"]
                ),
            )
            for e in data["entries"]
        )
        return cls(data["question"], tuple(data["options"]), entries)


def init_memory(
    question: str,
    options: list[str] | tuple[str, ...],
    preview: Observation,
    annotations: list[Annotation] | tuple[Annotation, ...] = (),
) -> WorkingMemory:
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    return WorkingMemory(question, tuple(options), (MemoryEntry(0, None, preview, tuple(annotations)),))


def append_entry(
    memory: WorkingMemory,
    action: ToolCall,
    observation: Observation,
    annotations: list[Annotation] | tuple[Annotation, ...] = (),
    step: int | None = None,
) -> WorkingMemory:
    """Return a new memory with one more entry; ``memory`` itself is untouched."""
    expected = memory.entries[-1].step + 1 if memory.entries else 0
    if step is None:
        step = expected
    if step != expected:
        raise StepGap(f"expected step {expected}, got {step}")
    entry = MemoryEntry(step, action, observation, tuple(annotations))
    return replace(memory, entries=memory.entries + (entry,))


def render_context(memory: WorkingMemory) -> str:
    """Deterministic text form of the memory for prompt slots."""
    blocks = []
    for e in memory.entries:
        head = f"Step {e.step}: {e.tool}"
        if e.action is not None:
            head += f" {e.action.raw_input}"
        lines = [head]
        lines += [f"  [t={i.timestamp_s:05.2f}] {i.text}" for i in e.observation.items]
        lines += [f"  {a.render()}" for a in e.annotations]
        blocks.append("\n".join(lines))
    return "\n".join(blocks)
