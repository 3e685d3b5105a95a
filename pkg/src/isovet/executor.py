"""Scheduled execution of composed cases against a database adapter.

The coordinator owns the schedule loop: it sweeps the global statement
list, submitting each not-yet-done statement on its transaction's session,
skipping transactions that are blocked, harvesting sessions whose blocked
statement has since completed, and breaking the run on terminal messages.
The output is an ExecutionTrace: one OpRecord per completed statement with
the rows/versions it touched, suitable for dependency analysis.

Adapters expose sessions, asynchronous completions and a backend identity;
the reference engine implements the contract in-process and records writes
natively, while trigger-based recording is emitted for external backends
that support it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from .compose import TransactionCase
from .engine import Completion, Engine
from .schema import ID_COLUMN, VERS_COLUMN, Schema


class ExecutorError(Exception):
    pass


class TriggerUnsupported(ExecutorError):
    pass


# Message classes (phase-1 vocabulary).
CRASH = "Crash"
ASSERTION_FAILURE = "AssertionFailure"
DEADLOCK = "Deadlock"
LOCK_TIMEOUT = "LockTimeout"
SYNTAX_ERROR = "SyntaxError"
SEMANTIC_ERROR = "SemanticError"
OTHER = "Other"

# Classes that invalidate the whole run (the trace is not analyzed).
DISCARD_CLASSES = frozenset({DEADLOCK, LOCK_TIMEOUT, SYNTAX_ERROR, SEMANTIC_ERROR})
# Classes that are reported directly as explicit failures.
EXPLICIT_CLASSES = frozenset({CRASH, ASSERTION_FAILURE})
TERMINAL_CLASSES = DISCARD_CLASSES | EXPLICIT_CLASSES


class DbAdapter(Protocol):
    """Wire contract between the executor and a backend.

    Sessions are per-transaction; ``submit`` returns a completion that may
    finish later (a blocked statement), and submitting on a session with an
    in-flight statement is a caller error.  ``connection_id`` ties trigger
    log rows back to sessions on backends that record via triggers.
    """

    supports_triggers: bool

    def open_session(self) -> int: ...

    def submit(self, session_id: int, sql: str) -> Completion: ...

    def connection_id(self, session_id: int) -> int: ...

    def close_session(self, session_id: int) -> None: ...

    def backend_identity(self) -> str: ...


class EngineAdapter:
    """In-process adapter over the reference engine."""

    supports_triggers = False

    def __init__(self, engine: Engine):
        self.engine = engine

    def open_session(self) -> int:
        return self.engine.open_session()

    def submit(self, session_id: int, sql: str) -> Completion:
        return self.engine.submit(session_id, sql)

    def connection_id(self, session_id: int) -> int:
        return self.engine.connection_id(session_id)

    def close_session(self, session_id: int) -> None:
        self.engine.close_session(session_id)

    def backend_identity(self) -> str:
        faults = ",".join(sorted(f.value for f in self.engine.faults)) or "none"
        return f"reference-engine[faults={faults}]"


STATUS_OK = "OK"
STATUS_BLOCKED_OK = "Blocked-then-OK"


@dataclass
class OpRecord:
    """One completed statement in a trace."""

    global_seq: int
    txn: int  # case transaction index (1-based); 0 for init statements
    op_kind: str  # Read | Write | Begin | Commit | Rollback | Set
    stmt_text: str
    touched: list = field(default_factory=list)  # (table, row_id, vers[, subkind])
    timestamp: int = 0
    status: str = STATUS_OK  # OK | Blocked-then-OK | Error(<class>)
    error_class: str | None = None
    error_message: str | None = None
    rows: list = field(default_factory=list)  # read result values, for reports

    @property
    def is_error(self) -> bool:
        return self.error_class is not None


@dataclass
class ExecutionTrace:
    case: TransactionCase | None
    records: list[OpRecord] = field(default_factory=list)
    final_outcomes: dict[int, str] = field(default_factory=dict)  # txn -> Committed/Aborted/Undetermined
    terminal_message: str | None = None
    terminal_class: str | None = None
    degraded_recording: bool = False

    def records_for(self, txn: int) -> list[OpRecord]:
        return [r for r in self.records if r.txn == txn]


def classify_message(message: str | None, error_class: str | None = None) -> str:
    """Map a backend message (and structured class, when present) to the
    phase-1 vocabulary; unknown messages are Other."""
    if error_class:
        known = {
            "Deadlock": DEADLOCK,
            "SyntaxError": SYNTAX_ERROR,
            "SemanticError": SEMANTIC_ERROR,
            "LockTimeout": LOCK_TIMEOUT,
            "Crash": CRASH,
            "AssertionFailure": ASSERTION_FAILURE,
        }
        if error_class in known:
            return known[error_class]
    if not message:
        return OTHER
    text = message.lower()
    if "assertion" in text:
        return ASSERTION_FAILURE
    if "crash" in text or ("connection" in text and "lost" in text) or "server restart" in text:
        return CRASH
    if "deadlock" in text:
        return DEADLOCK
    if "lock wait timeout" in text:
        return LOCK_TIMEOUT
    if "syntax" in text:
        return SYNTAX_ERROR
    return OTHER


def emit_trigger_sql(schema: Schema) -> list[str]:
    """Per-table log tables and AFTER INSERT/UPDATE/DELETE triggers.

    Used on trigger-capable backends to capture write results; the
    reference engine records natively instead.
    """
    stmts: list[str] = []
    for table in schema.tables:
        t = table.name
        stmts.append(
            f"CREATE TABLE {t}_log (operation_type TEXT, txn_id INT, row_id INT, version INT, time TEXT);"
        )
        for op, row_ref in (("INSERT", "NEW"), ("UPDATE", "NEW"), ("DELETE", "OLD")):
            vers_ref = "NEW" if op != "DELETE" else "OLD"
            stmts.append(
                f"CREATE TRIGGER tri_{op.lower()}_{t} AFTER {op} ON {t} FOR EACH ROW "
                f"BEGIN INSERT INTO {t}_log (operation_type, txn_id, row_id, version, time) "
                f"VALUES ('{op}', CONNECTION_ID(), {row_ref}.{ID_COLUMN}, {vers_ref}.{VERS_COLUMN}, SYSDATE(6)); END;"
            )
    return stmts


def install_recording(adapter: DbAdapter, schema: Schema) -> bool:
    """Install write recording; returns False when the run is degraded
    (no triggers and no native log)."""
    if isinstance(adapter, EngineAdapter):
        return True  # native event log
    if not getattr(adapter, "supports_triggers", False):
        raise TriggerUnsupported(f"{adapter.backend_identity()} cannot record writes")
    session = adapter.open_session()
    try:
        for sql in emit_trigger_sql(schema):
            completion = adapter.submit(session, sql)
            if not completion.done or completion.result.kind == "error":
                raise TriggerUnsupported(f"trigger installation failed: {sql}")
    finally:
        adapter.close_session(session)
    return True


_KIND_BY_STMT = {
    "select": "Read",
    "select_join": "Read",
    "update": "Write",
    "insert": "Write",
    "delete": "Write",
    "commit": "Commit",
    "rollback": "Rollback",
    "begin": "Begin",
    "set": "Set",
}


def _record_from_result(seq: int, txn: int, sql: str, op_kind: str, result) -> OpRecord:
    record = OpRecord(global_seq=seq, txn=txn, op_kind=op_kind, stmt_text=sql, timestamp=result.ts)
    if result.kind == "error":
        record.status = f"Error({result.error_class})"
        record.error_class = result.error_class
        record.error_message = result.error_message
    elif result.was_blocked:
        record.status = STATUS_BLOCKED_OK
    if op_kind == "Read":
        record.touched = [tuple(t) for t in result.touched_reads]
        record.rows = [dict(r) for r in result.rows]
    elif op_kind == "Write":
        record.touched = [tuple(w) for w in result.writes]
    return record


def run_schedule(
    case: TransactionCase,
    adapter: DbAdapter,
    max_sweeps: int = 10_000,
) -> ExecutionTrace:
    """Execute a composed case in schedule order and collect the trace.

    Init statements run first on a dedicated session.  The schedule loop
    then follows the blocking-tolerant sweep: done/blocked transactions
    are skipped, blocked sessions join the wait list, completed waiters
    are harvested after every completed statement, and a terminal message
    breaks the loop.
    """
    trace = ExecutionTrace(case=case)
    seq = 0

    init_session = adapter.open_session()
    try:
        for sql in case.setup_sql:
            completion = adapter.submit(init_session, sql)
            if not completion.done:
                raise ExecutorError(f"init statement blocked: {sql}")
            result = completion.result
            kind = "Write" if result.writes else ("Read" if result.kind == "rows" else "Set")
            record = _record_from_result(seq, 0, sql, kind, result)
            seq += 1
            trace.records.append(record)
            if record.is_error:
                trace.terminal_message = record.error_message
                trace.terminal_class = classify_message(record.error_message, record.error_class)
                return trace
    finally:
        adapter.close_session(init_session)

    sessions: dict[int, int] = {}
    for txn in case.txns:
        sessions[txn] = adapter.open_session()

    slots = case.slots
    done = [False] * len(slots)
    blocked: dict[int, tuple[int, Completion]] = {}  # txn -> (slot index, completion)
    outcomes: dict[int, str] = {txn: "Undetermined" for txn in case.txns}

    def note(result, txn: int) -> None:
        if result.txn_state == "committed":
            outcomes[txn] = "Committed"
        elif result.txn_state == "aborted":
            outcomes[txn] = "Aborted"

    def harvest() -> list[OpRecord]:
        nonlocal seq
        out = []
        for txn in list(blocked):
            slot_index, completion = blocked[txn]
            if completion.done:
                slot = slots[slot_index]
                record = _record_from_result(seq, txn, slot.sql, _KIND_BY_STMT[slot.kind], completion.result)
                seq += 1
                trace.records.append(record)
                note(completion.result, txn)
                done[slot_index] = True
                del blocked[txn]
                out.append(record)
        return out

    sweeps = 0
    terminal = None
    while not all(done) and terminal is None:
        sweeps += 1
        if sweeps > max_sweeps:
            trace.terminal_message = "schedule did not converge (timeout)"
            trace.terminal_class = OTHER
            break
        progressed = False
        for i, slot in enumerate(slots):
            if done[i] or slot.txn in blocked:
                continue
            completion = adapter.submit(sessions[slot.txn], slot.sql)
            if not completion.done:
                blocked[slot.txn] = (i, completion)
                progressed = True
                continue
            result = completion.result
            record = _record_from_result(seq, slot.txn, slot.sql, _KIND_BY_STMT[slot.kind], result)
            seq += 1
            trace.records.append(record)
            note(result, slot.txn)
            done[i] = True
            progressed = True
            if record.is_error:
                cls = classify_message(record.error_message, record.error_class)
                if cls in TERMINAL_CLASSES:
                    terminal = (record.error_message, cls)
                    break
            for harvested in harvest():
                if harvested.is_error:
                    cls = classify_message(harvested.error_message, harvested.error_class)
                    if cls in TERMINAL_CLASSES:
                        terminal = (harvested.error_message, cls)
            if terminal is not None:
                break
        if not progressed and blocked:
            # A blocked completion may have been filled by a deadlock-victim
            # abort; harvest before declaring a stall.
            harvested_any = harvest()
            for harvested in harvested_any:
                if harvested.is_error:
                    cls = classify_message(harvested.error_message, harvested.error_class)
                    if cls in TERMINAL_CLASSES:
                        terminal = (harvested.error_message, cls)
            if harvested_any:
                continue
            trace.terminal_message = "all remaining transactions are blocked"
            trace.terminal_class = OTHER
            break

    if terminal is not None:
        trace.terminal_message, trace.terminal_class = terminal

    for txn, session in sessions.items():
        adapter.close_session(session)
    trace.final_outcomes = outcomes
    return trace


# --- trace file format ------------------------------------------------------
#
# Line-delimited, one record per line, tab-separated fields in the order
# (global_seq, txn, op_kind, stmt_text, touched, timestamp, status).


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def render_trace(trace: ExecutionTrace) -> str:
    lines = []
    for txn in sorted(trace.final_outcomes):
        lines.append(f"# outcome\t{txn}\t{trace.final_outcomes[txn]}")
    if trace.terminal_message is not None:
        lines.append(f"# terminal\t{trace.terminal_class}\t{_escape(trace.terminal_message)}")
    for r in trace.records:
        touched = ";".join(",".join(str(part) for part in t) for t in r.touched)
        lines.append(
            "\t".join(
                [
                    str(r.global_seq),
                    str(r.txn),
                    r.op_kind,
                    _escape(r.stmt_text),
                    touched,
                    str(r.timestamp),
                    r.status,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> ExecutionTrace:
    trace = ExecutionTrace(case=None)
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if raw.startswith("# outcome\t"):
            _, txn, outcome = raw.split("\t")
            trace.final_outcomes[int(txn)] = outcome
            continue
        if raw.startswith("# terminal\t"):
            _, cls, message = raw.split("\t", 2)
            trace.terminal_class = cls
            trace.terminal_message = _unescape(message)
            continue
        parts = raw.split("\t")
        if len(parts) != 7:
            raise ExecutorError(f"malformed trace line: {raw!r}")
        seq, txn, op_kind, stmt, touched_text, timestamp, status = parts
        touched = []
        if touched_text:
            for item in touched_text.split(";"):
                bits = item.split(",")
                entry = [bits[0], int(bits[1]), int(bits[2])]
                if len(bits) > 3:
                    entry.append(bits[3])
                touched.append(tuple(entry))
        record = OpRecord(
            global_seq=int(seq),
            txn=int(txn),
            op_kind=op_kind,
            stmt_text=_unescape(stmt),
            touched=touched,
            timestamp=int(timestamp),
            status=status,
        )
        if status.startswith("Error("):
            record.error_class = status[len("Error(") : -1]
            record.error_message = record.error_class
        trace.records.append(record)
    for record in trace.records:
        if record.txn not in trace.final_outcomes and record.txn != 0:
            trace.final_outcomes[record.txn] = "Undetermined"
    return trace
