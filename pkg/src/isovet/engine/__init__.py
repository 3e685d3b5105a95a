"""Reference transactional engine (MVCC + row locks + fault switches)."""

from .core import (
    Completion,
    Engine,
    EngineBusy,
    EngineEvent,
    FaultSwitch,
    StatementResult,
)
from .sqlparse import SqlError, SqlSemanticError, SqlSyntaxError, parse_statement

__all__ = [
    "Completion",
    "Engine",
    "EngineBusy",
    "EngineEvent",
    "FaultSwitch",
    "StatementResult",
    "SqlError",
    "SqlSemanticError",
    "SqlSyntaxError",
    "parse_statement",
]
