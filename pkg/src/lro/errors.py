"""Exception hierarchy shared across the engine.

Exit-code mapping for the CLI: LroError -> 1 (domain), UsageError -> 2,
BackendError / GatewayTimeout -> 3.
"""

from __future__ import annotations


class LroError(Exception):
    """Base class for all engine errors."""


class SchemaError(LroError):
    """Relation construction or column lookup failed."""


class GranularityError(LroError):
    """An operator/granularity pairing that the taxonomy leaves undefined."""


class VariantError(LroError):
    """An implementation variant not valid for the requested operator."""


class ParseError(LroError):
    """Plan text could not be parsed.

    ``line`` and ``column`` are 1-based positions of the offending token.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class MalformedOutputError(LroError):
    """LLM completion did not yield the expected payload, after repair."""


class BackendError(LroError):
    """Transport or HTTP failure talking to the completion endpoint."""


class ContextOverflowError(BackendError):
    """Request would exceed the configured context length.

    Signals the caller to shrink the batch; no ledger entry is written.
    """


class GatewayTimeout(BackendError):
    """The per-query timeout elapsed before the batch completed."""


class UsageError(LroError):
    """Invalid flag/parameter combination at the CLI or config boundary."""
