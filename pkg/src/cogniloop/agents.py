"""The perception agent, the reflection agent and the session loop that binds them.

A session runs::

    quick preview -> (verify preview) -> memory
    repeat up to t_max times:
        evaluate memory      -> terminate with an answer, or continue with guidance
        select an action     -> tool call
        run the tool         -> observation
        (verify observation) -> annotations
        append to memory
    if the budget ran out: evaluate once more, answering is mandatory

Every chat reply is parsed strictly. A reply that does not parse is sent
back with the parser's complaint, at most ``max_parse_retries`` times.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, TypeVar

from cogniloop import gateway, prompts
from cogniloop.config import SessionConfig
from cogniloop.errors import AnswerOutOfRange, GrammarMismatch, MalformedAgentOutput
from cogniloop.gateway import BackendSuite
from cogniloop.grammar import TOOLS, ToolCall, make_tool_call, parse_question_list
from cogniloop.media import FrameIndexTable, nearest_frame
from cogniloop.memory import Annotation, Evidence, WorkingMemory, append_entry, init_memory, render_context
from cogniloop.tools import Observation, ObservationItem, quick_preview, run_tool
from cogniloop.trace import SessionTrace, phase

T = TypeVar("T")

CONTINUE = "continue"
TERMINATE = "terminate"
NO_GUIDANCE = "None yet. Choose the tool that best fills the gaps in the working memory."


@dataclass(frozen=True)
class Guidance:
    text: str
    step: int


@dataclass(frozen=True)
class Decision:
    kind: str
    guidance: Guidance | None = None
    answer_index: int | None = None
    explanation: str = ""

    def __post_init__(self):
        if self.kind == CONTINUE and (self.guidance is None or self.answer_index is not None):
            raise ValueError("a continue decision carries guidance and no answer")
        if self.kind == TERMINATE and (self.answer_index is None or self.guidance is not None):
            raise ValueError("a terminate decision carries an answer and no guidance")
        if self.kind not in (CONTINUE, TERMINATE):
            raise ValueError(f"unknown decision kind {self.kind!r}")


@dataclass(frozen=True)
class VerificationOutcome:
    key_info_present: bool
    questions: tuple[tuple[str, float], ...] = ()
    facts: tuple[Evidence, ...] = ()
    verdicts: tuple[tuple[str, str], ...] = ()
    annotations: tuple[Annotation, ...] = ()

    def to_dict(self) -> dict:
        return {
            "key_info_present": self.key_info_present,
            "questions": [list(q) for q in self.questions],
            "facts": [{"question": f.question, "answer": f.answer, "timestamp_s": f.timestamp_s} for f in self.facts],
            "verdicts": [list(v) for v in self.verdicts],
        }


@dataclass
class SessionResult:
    answer_index: int | None
    trace: SessionTrace
    memory: WorkingMemory | None
    iterations: int
    failed: bool


# -- reply parsing ------------------------------------------------------------


def _lines(reply: str) -> list[str]:
    return [line.strip() for line in reply.strip().splitlines() if line.strip()]


def parse_action(reply: str) -> ToolCall:
    """Exactly ``Tool Name: <tool>`` then ``Tool Input: <input>``, nothing else."""
    lines = _lines(reply)
    if len(lines) != 2:
        raise MalformedAgentOutput(
            f"expected exactly two lines 'Tool Name: ...' and 'Tool Input: ...', got {len(lines)} lines"
        )
    name = re.fullmatch(r"Tool Name:\s*(.+)", lines[0])
    raw = re.fullmatch(r"Tool Input:\s*(.+)", lines[1])
    if not name or not raw:
        raise MalformedAgentOutput("expected 'Tool Name:' on the first line and 'Tool Input:' on the second")
    tool = name.group(1).strip().replace("\\_", "_")
    if tool not in TOOLS:
        raise MalformedAgentOutput(f"unknown tool {tool!r}; choose one of {', '.join(TOOLS)}")
    return make_tool_call(tool, raw.group(1))


def parse_key_information(reply: str, duration_s: float) -> list[tuple[str, float]]:
    """Verification questions from a step-1 reply; empty when the key information is absent."""
    lines = _lines(reply)
    if not lines:
        raise MalformedAgentOutput("empty reply")
    m = re.fullmatch(r"Key Information:\s*(YES|NO)", lines[0], re.IGNORECASE)
    if not m:
        raise MalformedAgentOutput("first line must be 'Key Information: YES' or 'Key Information: NO'")
    if m.group(1).upper() == "NO":
        if len(lines) != 1:
            raise MalformedAgentOutput("nothing may follow 'Key Information: NO'")
        return []
    if len(lines) != 2:
        raise MalformedAgentOutput("'Key Information: YES' must be followed by one 'Verification Questions:' line")
    q = re.fullmatch(r"Verification Questions:\s*(.+)", lines[1])
    if not q:
        raise MalformedAgentOutput("second line must start with 'Verification Questions:'")
    questions = parse_question_list(q.group(1))
    if not 2 <= len(questions) <= 3:
        raise MalformedAgentOutput(f"need two or three verification questions, got {len(questions)}")
    for _, t in questions:
        if not 0 <= t <= duration_s:
            raise MalformedAgentOutput(f"timestamp {t} is outside the video (0 to {duration_s:.2f} s)")
    return questions


def parse_final_answer(line: str, n_options: int) -> int:
    m = re.fullmatch(r"Final Answer:\s*(\d+)", line.strip())
    if not m:
        raise MalformedAgentOutput("expected 'Final Answer: <option number>'")
    index = int(m.group(1))
    if index >= n_options:
        raise AnswerOutOfRange(f"answer {index} is outside 0-{n_options - 1}")
    return index


def parse_decision(reply: str, n_options: int, step: int = 0, final: bool = False) -> Decision:
    lines = _lines(reply)
    at = [i for i, line in enumerate(lines) if re.fullmatch(r"Decision:\s*\S+", line)]
    if len(at) != 1:
        raise MalformedAgentOutput("expected exactly one 'Decision:' line")
    i = at[0]
    kind = lines[i].split(":", 1)[1].strip().lower()
    before = " ".join(lines[:i])
    explanation = re.sub(r"^Analysis:\s*", "", before)
    rest = lines[i + 1 :]
    if kind == CONTINUE:
        if final:
            raise MalformedAgentOutput("the budget is spent: the decision must be 'terminate'")
        if not rest or not rest[0].startswith("Guidance:"):
            raise MalformedAgentOutput("'Decision: continue' must be followed by 'Guidance: ...'")
        if any(line.startswith("Final Answer:") for line in rest):
            raise MalformedAgentOutput("'Decision: continue' must not carry a final answer")
        text = "\n".join([rest[0][len("Guidance:") :].strip(), *rest[1:]]).strip()
        if not text:
            raise MalformedAgentOutput("guidance must not be empty")
        return Decision(CONTINUE, guidance=Guidance(text, step), explanation=explanation)
    if kind == TERMINATE:
        if len(rest) != 1:
            raise MalformedAgentOutput("'Decision: terminate' must be followed by one 'Final Answer:' line")
        return Decision(TERMINATE, answer_index=parse_final_answer(rest[0], n_options), explanation=explanation)
    raise MalformedAgentOutput(f"decision must be 'continue' or 'terminate', got {kind!r}")


_VERDICT_LINE = re.compile(r"Claim\s+(\d+):\s*(confirmed|contradicted|unverifiable)", re.IGNORECASE)


def parse_verdicts(reply: str, n_claims: int) -> list[str]:
    lines = _lines(reply)
    if len(lines) != n_claims:
        raise MalformedAgentOutput(f"expected {n_claims} 'Claim N:' lines, got {len(lines)}")
    out = []
    for n, line in enumerate(lines, 1):
        m = _VERDICT_LINE.fullmatch(line)
        if not m or int(m.group(1)) != n:
            raise MalformedAgentOutput(f"line {n} must read 'Claim {n}: confirmed|contradicted|unverifiable'")
        out.append(m.group(2).lower())
    return out


# -- chat with re-prompting ---------------------------------------------------


def _ask(
    suite: BackendSuite,
    prompt: str,
    parse: Callable[[str], T],
    purpose: str,
    temperature: float = 0.0,
    max_retries: int = 2,
) -> T:
    messages = [{"role": "user", "content": prompt}]
    last: Exception | None = None
    for _ in range(max_retries + 1):
        reply = gateway.chat(suite.chat, messages, temperature, purpose=purpose).reply
        try:
            return parse(reply)
        except (MalformedAgentOutput, GrammarMismatch) as exc:
            last = exc
            messages = messages + [
                {"role": "assistant", "content": reply},
                {
                    "role": "user",
                    "content": f"Your reply could not be parsed: {exc}\n"
                    "Reply again using ONLY the required format.",
                },
            ]
    kind = type(last) if isinstance(last, MalformedAgentOutput) else MalformedAgentOutput
    raise kind(f"{purpose}: no parseable reply after {max_retries} retries; last error: {last}") from last


# -- the agents ---------------------------------------------------------------


def mgpa_select_action(
    question: str,
    memory: WorkingMemory,
    guidance: Guidance | None,
    duration_s: float,
    suite: BackendSuite,
    temperature: float = 0.0,
    max_retries: int = 2,
) -> ToolCall:
    """Ask the perception agent for the next tool call."""
    prompt = prompts.fill(
        prompts.PERCEPTION,
        question=prompts.format_question(question, memory.options),
        video_duration=prompts.format_duration(duration_s),
        memory=render_context(memory),
        guidance=guidance.text if guidance else NO_GUIDANCE,
        tools=prompts.template(prompts.TOOLS_DOC).strip(),
    )
    return _ask(suite, prompt, parse_action, "perception", temperature, max_retries)


def _claims_for(latest: Observation, questions: list[tuple[str, float]]) -> tuple[list[ObservationItem], list[int]]:
    """Observation items nearest each question timestamp; returns the claims and each question's claim index."""
    claims: list[ObservationItem] = []
    owner = []
    for _, t in questions:
        item = min(latest.items, key=lambda i: (abs(i.timestamp_s - t), i.timestamp_s))
        if item not in claims:
            claims.append(item)
        owner.append(claims.index(item))
    return claims, owner


def vera_verify(
    question: str,
    latest: Observation,
    duration_s: float,
    suite: BackendSuite,
    table: FrameIndexTable,
    options: list[str] | tuple[str, ...] = (),
    temperature: float = 0.0,
    max_retries: int = 2,
) -> VerificationOutcome:
    """Check the key claims of ``latest`` against VQA answers on the frames they came from."""
    if not latest.items:
        raise ValueError("cannot verify an empty observation")
    prompt = prompts.fill(
        prompts.VERIFICATION,
        question=prompts.format_question(question, options),
        video_duration=prompts.format_duration(duration_s),
        latest_observation="\n" + latest.render(),
    )
    questions = _ask(
        suite, prompt, lambda r: parse_key_information(r, duration_s), "verification", temperature, max_retries
    )
    if not questions:
        return VerificationOutcome(False)

    facts = []
    for q, t in questions:
        frame = nearest_frame(table, t)
        facts.append(Evidence(q, gateway.vqa(suite.vqa, frame, q), frame.timestamp_s))

    claims, owner = _claims_for(latest, questions)
    prompt = prompts.fill(
        prompts.CROSSCHECK,
        question=prompts.format_question(question, options),
        claims="\n".join(f"Claim {n}: [t={c.timestamp_s:05.2f}] {c.text}" for n, c in enumerate(claims, 1)),
        facts="\n".join(f"- [t={f.timestamp_s:05.2f}] Q: {f.question} A: {f.answer}" for f in facts),
    )
    verdicts = _ask(
        suite, prompt, lambda r: parse_verdicts(r, len(claims)), "crosscheck", temperature, max_retries
    )
    annotations = tuple(
        Annotation(c.text, v, tuple(f for f, o in zip(facts, owner) if o == n))
        for n, (c, v) in enumerate(zip(claims, verdicts))
    )
    return VerificationOutcome(
        True,
        tuple(questions),
        tuple(facts),
        tuple((c.text, v) for c, v in zip(claims, verdicts)),
        annotations,
    )


def vera_evaluate(
    question: str,
    options: list[str] | tuple[str, ...],
    memory: WorkingMemory,
    duration_s: float,
    suite: BackendSuite,
    step: int = 0,
    final: bool = False,
    temperature: float = 0.0,
    max_retries: int = 2,
) -> Decision:
    """Decide whether memory suffices; ``final=True`` forces an answer."""
    prompt = prompts.fill(
        prompts.FINAL if final else prompts.SUFFICIENCY,
        n_options=len(options),
        question=prompts.format_question(question, options),
        video_duration=prompts.format_duration(duration_s),
        working_memory=render_context(memory),
    )
    return _ask(
        suite,
        prompt,
        lambda r: parse_decision(r, len(options), step, final),
        "final" if final else "sufficiency",
        temperature,
        max_retries,
    )


# -- the loop -----------------------------------------------------------------


def _decision_record(d: Decision, step: int, final: bool) -> dict:
    return {
        "kind": d.kind,
        "step": step,
        "final": final,
        "guidance": d.guidance.text if d.guidance else None,
        "answer_index": d.answer_index,
        "explanation": d.explanation,
    }


@dataclass
class _State:
    memory: WorkingMemory | None = None
    iterations: int = 0
    answer: int | None = None


def _verify(trace, step, question, options, obs, table, suite, config) -> tuple[Annotation, ...]:
    with phase("verification"):
        outcome = vera_verify(
            question, obs, table.duration_s, suite, table, options, config.temperature, config.max_parse_retries
        )
    trace.decisions.append({"kind": "verification", "step": step, **outcome.to_dict()})
    return outcome.annotations


def _run(state: _State, trace: SessionTrace, table, question, options, config: SessionConfig, suite) -> None:
    duration = table.duration_s
    knobs = {"temperature": config.temperature, "max_retries": config.max_parse_retries}

    with phase("preview"):
        preview = quick_preview(table, suite, config.k_m, config.seed)
    annotations: tuple[Annotation, ...] = ()
    if config.verification_enabled:
        annotations = _verify(trace, 0, question, options, preview, table, suite, config)
    state.memory = init_memory(question, options, preview, annotations)

    for step in range(1, config.t_max + 1):
        guidance = None
        if config.reflection_enabled:
            with phase("reflection"):
                decision = vera_evaluate(question, options, state.memory, duration, suite, step, **knobs)
            trace.decisions.append(_decision_record(decision, step, False))
            if decision.kind == TERMINATE:
                state.answer = decision.answer_index
                return
            guidance = decision.guidance

        with phase("perception"):
            call = mgpa_select_action(question, state.memory, guidance, duration, suite, **knobs)
        trace.decisions.append(
            {"kind": "action", "step": step, "tool": call.tool, "raw_input": call.raw_input, "warnings": list(call.warnings)}
        )
        trace.warnings.extend(call.warnings)
        with phase("tool"):
            obs = run_tool(call, table, suite, config)
        annotations = ()
        if config.verification_enabled:
            annotations = _verify(trace, step, question, options, obs, table, suite, config)
        state.memory = append_entry(state.memory, call, obs, annotations)
        state.iterations = step

    with phase("reflection"):
        decision = vera_evaluate(question, options, state.memory, duration, suite, config.t_max + 1, final=True, **knobs)
    trace.decisions.append(_decision_record(decision, config.t_max + 1, True))
    state.answer = decision.answer_index


def run_session(
    table: FrameIndexTable,
    question: str,
    options: list[str] | tuple[str, ...],
    config: SessionConfig,
    suite: BackendSuite,
    sample_id: str = "",
    sample: dict | None = None,
) -> SessionResult:
    """Answer one multiple-choice question about an indexed video.

    Any exception inside the loop ends the session with ``failed=True``; the
    error text and everything recorded so far stay in the trace.
    """
    if len(options) < 2:
        raise ValueError("at least two options are required")
    trace = SessionTrace(
        sample_id=sample_id or table.video_id,
        config=config.to_dict(),
        sample=sample
        or {"video_id": table.video_id, "duration_s": table.duration_s, "question": question, "options": list(options)},
    )
    state = _State()
    with trace.activated():
        try:
            _run(state, trace, table, question, list(options), config, suite)
        except Exception as exc:
            trace.failed = True
            trace.error = f"{type(exc).__name__}: {exc}"
    trace.memory = state.memory.to_dict() if state.memory is not None else None
    trace.answer_index = None if trace.failed else state.answer
    trace.complete = True
    return SessionResult(trace.answer_index, trace, state.memory, state.iterations, trace.failed)
