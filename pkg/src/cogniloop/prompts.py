"""Prompt templates and slot filling.

Templates live in ``templates/*.txt`` next to this module. Slots are
``{name}`` markers replaced literally, so braces inside filled-in text
(captions, tool inputs) never need escaping.
"""

from __future__ import annotations

import re
from functools import cache
from importlib import resources

PROMPT_VERSION = "1"

PERCEPTION = "perception"
VERIFICATION = "verification"
SUFFICIENCY = "sufficiency"
FINAL = "final"
CROSSCHECK = "crosscheck"
TOOLS_DOC = "tools"

_SLOT = re.compile(r"\{([a-z_]+)\}")
_ANSWER_RANGE = "[number 0-4]"


@cache
def template(name: str) -> str:
    return resources.files("cogniloop").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def slots(name: str) -> set[str]:
    return set(_SLOT.findall(template(name)))


def fill(name: str, n_options: int | None = None, **values: str) -> str:
    """Substitute every slot of template ``name``; missing or extra values are errors."""
    text = template(name)
    wanted = slots(name)
    if set(values) != wanted:
        raise KeyError(f"template {name!r} needs slots {sorted(wanted)}, got {sorted(values)}")
    # single pass so substituted text is never re-scanned for slots
    text = _SLOT.sub(lambda m: str(values[m.group(1)]), text)
    if n_options is not None:
        if n_options < 2:
            raise ValueError("at least two options are required")
        text = text.replace(_ANSWER_RANGE, f"[number 0-{n_options - 1}]")
    return text


def format_question(question: str, options: list[str] | tuple[str, ...]) -> str:
    """Question text with numbered options, as placed in the ``{question}`` slot."""
    if not options:
        return question
    return question + "\nOptions:\n" + "\n".join(f"{i}. {o}" for i, o in enumerate(options))


def format_duration(seconds: float) -> str:
    return f"{seconds:.2f}"
