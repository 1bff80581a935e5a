"""Exception hierarchy shared by all cogniloop modules."""

from __future__ import annotations


class CogniloopError(Exception):
    """Base class for every error raised by this package."""


# numeric kernels
class DimensionMismatch(CogniloopError, ValueError):
    pass


class ZeroVector(CogniloopError, ValueError):
    pass


class EvenWindow(CogniloopError, ValueError):
    pass


class EmptyInput(CogniloopError, ValueError):
    pass


# media index
class ExtractorNotFound(CogniloopError):
    pass


class ExtractionFailed(CogniloopError):
    pass


class UnreadableVideo(CogniloopError):
    pass


class InvertedSpan(CogniloopError, ValueError):
    pass


class EmptyTable(CogniloopError, ValueError):
    pass


# model gateway
class TransportError(CogniloopError):
    """Network failure or timeout; retried by the gateway."""


class ProtocolError(CogniloopError):
    """The service answered, but not in the expected shape."""


class ScriptExhausted(CogniloopError):
    pass


class MissingImage(CogniloopError, FileNotFoundError):
    pass


class DimensionDrift(CogniloopError):
    pass


# perception tools
class EmptySpan(CogniloopError, ValueError):
    pass


class OutOfRangeTimestamp(CogniloopError, ValueError):
    pass


class GrammarMismatch(CogniloopError, ValueError):
    """Tool input text does not match the tool grammar.

    ``position`` is the 0-based character offset where parsing stopped.
    """

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


# working memory
class StepGap(CogniloopError, ValueError):
    pass


# agents
class MalformedAgentOutput(CogniloopError, ValueError):
    pass


class AnswerOutOfRange(MalformedAgentOutput):
    pass


# harness
class ParseError(CogniloopError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DuplicateId(CogniloopError, ValueError):
    pass


class OutOfRange(CogniloopError, ValueError):
    pass


class UnscriptedCall(CogniloopError, LookupError):
    """A strict mock was asked for something its script does not cover."""
