"""Strict parsers for the three tool-input grammars.

    divergent_search   ('query text', (start, end))
    temporal_focus     [(start, end), (start, end), ...]
    spatial_focus      [('question', t), ('question', t), ...]

Strings take single or double quotes with backslash escapes; numbers are
plain decimals (ints allowed). Whitespace between tokens is ignored and
nothing else is tolerated: no trailing commas, no extra text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from cogniloop.errors import GrammarMismatch

DIVERGENT_SEARCH = "divergent_search"
TEMPORAL_FOCUS = "temporal_focus"
SPATIAL_FOCUS = "spatial_focus"
TOOLS = (DIVERGENT_SEARCH, TEMPORAL_FOCUS, SPATIAL_FOCUS)

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class ToolCall:
    """A parsed perception action.

    ``parsed`` is ``(query, (start, end))`` for divergent search, a list of
    ``(start, end)`` spans for temporal focus and a list of
    ``(question, t)`` pairs for spatial focus.
    """

    tool: str
    raw_input: str
    parsed: object
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {"tool": self.tool, "raw_input": self.raw_input, "warnings": list(self.warnings)}

    @classmethod
    def from_dict(cls, data: dict) -> ToolCall:
        return cls(
            data["tool"],
            data["raw_input"],
            parse_tool_input(data["tool"], data["raw_input"]),
            tuple(data.get("warnings", ())),
        )


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str, pos: int | None = None):
        raise GrammarMismatch(message, self.pos if pos is None else pos, self.text)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            self.fail(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def string(self) -> str:
        quote = self.peek()
        if quote not in ("'", '"'):
            self.fail("expected a quoted string")
        start = self.pos
        self.pos += 1
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\" and self.pos + 1 < len(self.text):
                out.append(self.text[self.pos + 1])
                self.pos += 2
                continue
            if ch == quote:
                self.pos += 1
                value = "".join(out)
                if not value.strip():
                    self.fail("string must not be empty", start)
                return value
            out.append(ch)
            self.pos += 1
        self.fail("unterminated string", start)

    def number(self) -> float:
        self.skip_ws()
        m = _NUMBER.match(self.text, self.pos)
        if not m:
            self.fail("expected a number")
        self.pos = m.end()
        return float(m.group())

    def span(self) -> tuple[float, float]:
        self.skip_ws()
        start_pos = self.pos
        self.expect("(")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect(")")
        if a > b:
            self.fail(f"span start {a} is after end {b}", start_pos)
        return (a, b)

    def question(self) -> tuple[str, float]:
        self.expect("(")
        q = self.string()
        self.expect(",")
        t = self.number()
        self.expect(")")
        return (q, t)

    def listof(self, item):
        self.expect("[")
        items = [item()]
        while self.peek() == ",":
            self.pos += 1
            items.append(item())
        self.expect("]")
        return items

    def end(self) -> None:
        self.skip_ws()
        if self.pos != len(self.text):
            self.fail("unexpected trailing text")


def parse_tool_input(tool: str, raw: str):
    """Parse ``raw`` according to the grammar of ``tool``.

    Raises:
        GrammarMismatch: with ``position`` set to where parsing stopped.
    """
    if not raw or not raw.strip():
        raise GrammarMismatch("empty tool input", 0, raw)
    r = _Reader(raw)
    if tool == DIVERGENT_SEARCH:
        r.expect("(")
        q = r.string()
        r.expect(",")
        span = r.span()
        r.expect(")")
        result = (q, span)
    elif tool == TEMPORAL_FOCUS:
        result = r.listof(r.span)
    elif tool == SPATIAL_FOCUS:
        result = r.listof(r.question)
    else:
        raise GrammarMismatch(f"unknown tool {tool!r}", 0, raw)
    r.end()
    return result


def parse_question_list(raw: str) -> list[tuple[str, float]]:
    """``[('question', t), ...]``; also used for verification questions."""
    return parse_tool_input(SPATIAL_FOCUS, raw)


def lint_tool_input(tool: str, parsed) -> list[str]:
    """Rule violations that the grammar itself accepts."""
    warnings = []
    if tool == DIVERGENT_SEARCH:
        q = parsed[0].strip()
        if len(q) == 1:
            warnings.append(f"single-letter query {q!r}; use specific objects, actions or descriptive terms")
    return warnings


def make_tool_call(tool: str, raw: str) -> ToolCall:
    parsed = parse_tool_input(tool, raw)
    return ToolCall(tool, raw.strip(), parsed, tuple(lint_tool_input(tool, parsed)))
