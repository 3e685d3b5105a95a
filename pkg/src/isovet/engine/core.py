"""In-process transactional engine with injectable isolation faults.

The engine implements the toolkit's SQL subset over in-memory MVCC row
version chains plus exclusive row locks, and serves as the deterministic
oracle target for the pipeline:

- RC reads the latest committed state per statement;
- RR reads from a transaction snapshot established at the first SELECT
  (or at BEGIN for START TRANSACTION WITH CONSISTENT SNAPSHOT), with
  first-updater-wins write conflicts;
- SER additionally pins the snapshot at the transaction's first statement
  of any kind and validates the read set at commit, aborting when a read
  row gained a newer committed version.

Writes block on conflicting row locks; wait-for cycles abort the youngest
transaction.  Commands are serialized internally, so a fixed submission
order yields a byte-identical history (timestamps come from a logical
microsecond clock).

Fault switches selectively disable one of these mechanisms to emulate a
confirmed bug class (dirty reads, dirty writes, lost updates, stale
snapshots, serializable-as-snapshot), which is what makes detection
verifiable without a real DBMS.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..patterns import IsolationLevel
from . import sqlparse as ast
from .sqlparse import SqlError, SqlSemanticError, parse_statement

ID_COLUMN = "ID"
VERS_COLUMN = "VERS"


class FaultSwitch(enum.Enum):
    ALLOW_DIRTY_READ = "allow_dirty_read"
    ALLOW_DIRTY_WRITE = "allow_dirty_write"
    ALLOW_LOST_UPDATE = "allow_lost_update"
    ALLOW_NON_REPEATABLE_READ = "allow_non_repeatable_read"
    ALLOW_WRITE_SKEW = "allow_write_skew"
    SNAPSHOT_SEES_LATER_COMMITS = "snapshot_sees_later_commits"
    SERIALIZABLE_AS_SNAPSHOT = "serializable_as_snapshot"

    @classmethod
    def from_name(cls, name: str) -> "FaultSwitch":
        key = name.strip().lower()
        for f in cls:
            if f.value == key or f.name.lower() == key:
                return f
        raise ValueError(f"unknown fault switch {name!r}")


class EngineBusy(Exception):
    """Fault switches may only be toggled while no transaction is open."""


class _StatementError(Exception):
    """Internal: statement failed with a classified error."""

    def __init__(self, error_class: str, message: str, aborts_txn: bool = False):
        super().__init__(message)
        self.error_class = error_class
        self.aborts_txn = aborts_txn


class _WouldBlock(Exception):
    """Internal: statement must wait for a row lock."""


@dataclass
class Version:
    vers: int
    values: dict
    writer: int  # session/connection id
    commit_ts: int | None = None
    deleted: bool = False


@dataclass
class RowState:
    row_id: int
    committed: list[Version] = field(default_factory=list)
    pending: list[Version] = field(default_factory=list)

    def latest_committed(self) -> Version | None:
        return self.committed[-1] if self.committed else None

    def latest_any(self) -> Version | None:
        if self.pending:
            return self.pending[-1]
        return self.latest_committed()

    def own_pending(self, conn: int) -> Version | None:
        for v in reversed(self.pending):
            if v.writer == conn:
                return v
        return None


@dataclass
class TableRuntime:
    name: str
    columns: list[ast.ColumnSpec]
    rows: dict[int, RowState] = field(default_factory=dict)
    next_row_id: int = 1
    autoinc: dict[str, int] = field(default_factory=dict)

    def column(self, name: str) -> ast.ColumnSpec | None:
        for c in self.columns:
            if c.name == name:
                return c
        return None


@dataclass
class Txn:
    conn: int
    begin_ts: int
    level: IsolationLevel
    consistent_snapshot: bool = False
    snapshot_ts: int | None = None
    status: str = "active"  # active | committed | aborted
    did_work: bool = False
    autocommit: bool = False
    locks: set = field(default_factory=set)
    read_set: dict = field(default_factory=dict)  # (table, row_id) -> first observed vers
    write_rows: list = field(default_factory=list)  # (table, row_id) in install order


@dataclass
class StatementResult:
    """Outcome of one statement: rows or ack or a classified error."""

    kind: str  # "rows" | "ack" | "error"
    ts: int
    rows: list = field(default_factory=list)  # list of value dicts (reads)
    touched_reads: list = field(default_factory=list)  # (table, row_id, vers)
    writes: list = field(default_factory=list)  # (table, row_id, vers, subkind)
    row_touches: list = field(default_factory=list)  # per result row: [(table, row_id, vers)]
    error_class: str | None = None
    error_message: str | None = None
    txn_state: str | None = None  # active | committed | aborted
    was_blocked: bool = False


@dataclass
class Completion:
    """Handle for a possibly deferred statement outcome."""

    done: bool = False
    result: StatementResult | None = None


@dataclass
class Session:
    id: int
    level: IsolationLevel = IsolationLevel.RR
    txn: Txn | None = None
    pending_sql: str | None = None
    pending_ast: object | None = None
    pending_completion: Completion | None = None


@dataclass(frozen=True)
class EngineEvent:
    """Native write-capture record; the substitute for log-table triggers."""

    op: str  # insert | update | delete
    conn: int
    table: str
    row_id: int
    vers: int
    ts: int


class Engine:
    """The reference transactional engine.  One instance per test case."""

    supports_triggers = False

    def __init__(self, faults: set[FaultSwitch] | None = None):
        self.tables: dict[str, TableRuntime] = {}
        self.sessions: dict[int, Session] = {}
        self.faults: set[FaultSwitch] = set(faults or ())
        self.lock_owner: dict[tuple[str, int], int] = {}
        self.lock_queue: dict[tuple[str, int], list[int]] = {}
        self.wait_for: dict[int, tuple[str, int]] = {}
        self.events: list[EngineEvent] = []
        self._clock = 1_000_000  # logical microseconds
        self._next_session = 1
        self._wake_keys: list[tuple[str, int]] = []
        self._draining = False

    # -- adapter surface

    def open_session(self) -> int:
        sid = self._next_session
        self._next_session += 1
        self.sessions[sid] = Session(sid)
        return sid

    def connection_id(self, session_id: int) -> int:
        return session_id

    def close_session(self, session_id: int) -> None:
        session = self.sessions.get(session_id)
        if session and session.txn and session.txn.status == "active":
            self._rollback_txn(session)
            self._drain_wakes()
        self.sessions.pop(session_id, None)

    def submit(self, session_id: int, sql: str) -> Completion:
        """Execute one statement; returns an unfinished Completion when the
        statement blocks on a row lock."""
        session = self.sessions[session_id]
        if session.pending_completion is not None and not session.pending_completion.done:
            raise RuntimeError(f"session {session_id} already has an in-flight statement")
        completion = Completion()
        try:
            stmt = parse_statement(sql)
        except SqlError as exc:
            completion.done = True
            completion.result = self._error_result(session, exc.error_class, str(exc))
            return completion
        try:
            result = self._execute(session, stmt, sql)
        except _WouldBlock:
            session.pending_sql = sql
            session.pending_ast = stmt
            session.pending_completion = completion
            return completion
        except _StatementError as exc:
            result = self._statement_error(session, exc)
            if session.txn is not None and session.txn.autocommit and session.txn.status == "active":
                self._rollback_txn(session)
        completion.done = True
        completion.result = result
        self._drain_wakes()
        return completion

    def set_fault(self, fault: FaultSwitch, on: bool) -> None:
        if any(s.txn is not None and s.txn.status == "active" for s in self.sessions.values()):
            raise EngineBusy("fault switches require an idle engine")
        if on:
            self.faults.add(fault)
        else:
            self.faults.discard(fault)

    def event_log(self) -> list[EngineEvent]:
        return list(self.events)

    # -- clock / errors

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def _error_result(self, session: Session, error_class: str, message: str) -> StatementResult:
        return StatementResult(
            kind="error",
            ts=self._tick(),
            error_class=error_class,
            error_message=message,
            txn_state=session.txn.status if session.txn else None,
        )

    def _statement_error(self, session: Session, exc: _StatementError) -> StatementResult:
        if exc.aborts_txn and session.txn is not None and session.txn.status == "active":
            self._rollback_txn(session)
            session.txn.status = "aborted"
        return self._error_result(session, exc.error_class, str(exc))

    # -- statement dispatch

    def _execute(self, session: Session, stmt, sql: str) -> StatementResult:
        if isinstance(stmt, ast.SetIsolation):
            return self._set_isolation(session, stmt)
        if isinstance(stmt, ast.Begin):
            return self._begin(session, stmt)
        if isinstance(stmt, ast.Commit):
            return self._commit(session)
        if isinstance(stmt, ast.Rollback):
            return self._explicit_rollback(session)

        txn = session.txn
        if txn is not None and txn.status == "aborted":
            raise _StatementError("Other", "current transaction is aborted; statements ignored until COMMIT/ROLLBACK")
        if txn is None or txn.status != "active":
            txn = self._start_txn(session, autocommit=True)
        # Faults-off SER pins its snapshot at the first statement of any kind.
        if (
            txn.level == IsolationLevel.SER
            and FaultSwitch.SERIALIZABLE_AS_SNAPSHOT not in self.faults
            and txn.snapshot_ts is None
        ):
            txn.snapshot_ts = self._tick()
        try:
            if isinstance(stmt, ast.CreateTable):
                result = self._create_table(session, stmt)
            elif isinstance(stmt, ast.Insert):
                result = self._insert(session, stmt)
            elif isinstance(stmt, ast.Update):
                result = self._update(session, stmt)
            elif isinstance(stmt, ast.Delete):
                result = self._delete(session, stmt)
            elif isinstance(stmt, ast.Select):
                result = self._select(session, stmt)
            else:
                raise _StatementError("SyntaxError", f"unsupported statement {type(stmt).__name__}")
        except _WouldBlock:
            raise
        except SqlError as exc:
            raise _StatementError(exc.error_class, str(exc)) from exc
        txn.did_work = True
        if txn.autocommit:
            self._commit_txn(session)
            result.txn_state = None
        else:
            result.txn_state = txn.status
        return result

    # -- session control statements

    def _set_isolation(self, session: Session, stmt: ast.SetIsolation) -> StatementResult:
        txn = session.txn
        if txn is not None and txn.status == "active" and txn.did_work:
            raise _StatementError("SemanticError", "cannot change isolation level mid-transaction")
        session.level = stmt.level
        if txn is not None and txn.status == "active":
            txn.level = stmt.level
        return StatementResult(kind="ack", ts=self._tick(), txn_state=txn.status if txn else None)

    def _start_txn(self, session: Session, consistent_snapshot: bool = False, autocommit: bool = False) -> Txn:
        txn = Txn(
            conn=session.id,
            begin_ts=self._tick(),
            level=session.level,
            consistent_snapshot=consistent_snapshot,
            autocommit=autocommit,
        )
        if consistent_snapshot:
            txn.snapshot_ts = txn.begin_ts
        session.txn = txn
        return txn

    def _begin(self, session: Session, stmt: ast.Begin) -> StatementResult:
        txn = session.txn
        if txn is not None and txn.status == "active":
            if txn.did_work:
                self._commit_txn(session)  # implicit commit, MySQL-style
            else:
                session.txn = None
        self._start_txn(session, consistent_snapshot=stmt.consistent_snapshot)
        return StatementResult(kind="ack", ts=self._tick(), txn_state="active")

    def _commit(self, session: Session) -> StatementResult:
        txn = session.txn
        if txn is None or txn.status != "active":
            state = txn.status if txn else None
            return StatementResult(kind="ack", ts=self._tick(), txn_state=state)
        if not self._validate_reads(txn):
            self._rollback_txn(session)
            txn.status = "aborted"
            result = self._error_result(
                session,
                "SerializationFailure",
                "could not serialize access: read row was updated by a committed transaction",
            )
            self._drain_wakes()
            return result
        self._commit_txn(session)
        result = StatementResult(kind="ack", ts=self._tick(), txn_state="committed")
        self._drain_wakes()
        return result

    def _explicit_rollback(self, session: Session) -> StatementResult:
        txn = session.txn
        if txn is None or txn.status == "committed":
            return StatementResult(kind="ack", ts=self._tick(), txn_state=txn.status if txn else None)
        if txn.status == "active":
            self._rollback_txn(session)
        result = StatementResult(kind="ack", ts=self._tick(), txn_state="aborted")
        self._drain_wakes()
        return result

    def _validate_reads(self, txn: Txn) -> bool:
        """Commit-time read validation for faults-off SERIALIZABLE."""
        if txn.level != IsolationLevel.SER or self.faults:
            return True
        for (tname, row_id), observed in txn.read_set.items():
            table = self.tables.get(tname)
            if table is None:
                continue
            row = table.rows.get(row_id)
            if row is None:
                continue
            latest = row.latest_committed()
            if latest is not None and latest.vers > observed:
                return False
        return True

    def _commit_txn(self, session: Session) -> None:
        txn = session.txn
        commit_ts = self._tick()
        for tname, row_id in txn.write_rows:
            row = self.tables[tname].rows.get(row_id)
            if row is None:
                continue
            own = [v for v in row.pending if v.writer == session.id]
            for version in own:
                row.pending.remove(version)
                version.commit_ts = commit_ts
                row.committed.append(version)
            row.committed.sort(key=lambda v: v.vers)
        txn.status = "committed"
        self._release_locks(session)

    def _rollback_txn(self, session: Session) -> None:
        txn = session.txn
        for tname, row_id in txn.write_rows:
            table = self.tables[tname]
            row = table.rows.get(row_id)
            if row is None:
                continue
            row.pending = [v for v in row.pending if v.writer != session.id]
            if not row.pending and not row.committed:
                del table.rows[row_id]  # rolled-back insert; row id is not reused
        txn.status = "aborted"
        self._release_locks(session)

    def _release_locks(self, session: Session) -> None:
        txn = session.txn
        for key in sorted(txn.locks):
            if self.lock_owner.get(key) == session.id:
                del self.lock_owner[key]
                if self.lock_queue.get(key):
                    self._wake_keys.append(key)
        txn.locks.clear()

    # -- locking / deadlock

    def _acquire_lock(self, session: Session, key: tuple[str, int]) -> None:
        """Take the exclusive row lock or raise _WouldBlock after queueing."""
        owner = self.lock_owner.get(key)
        if owner is None or owner == session.id:
            self.lock_owner[key] = session.id
            session.txn.locks.add(key)
            return
        cycle = self._find_cycle(session.id, key)
        if cycle:
            victim = max(cycle, key=lambda sid: (self.sessions[sid].txn.begin_ts, sid))
            if victim == session.id:
                self._remove_from_queues(session.id)
                raise _StatementError(
                    "Deadlock", "deadlock found when trying to get lock; transaction rolled back",
                    aborts_txn=True,
                )
            self._abort_victim(victim)
            owner = self.lock_owner.get(key)
            if owner is None or owner == session.id:
                self.lock_owner[key] = session.id
                session.txn.locks.add(key)
                return
        queue = self.lock_queue.setdefault(key, [])
        if session.id not in queue:
            queue.append(session.id)
        self.wait_for[session.id] = key
        raise _WouldBlock()

    def _find_cycle(self, start: int, key: tuple[str, int]) -> list[int]:
        chain = [start]
        current = self.lock_owner.get(key)
        while current is not None:
            if current == start:
                return chain
            if current in chain:
                return []  # cycle not involving the requester; its members detect it
            chain.append(current)
            next_key = self.wait_for.get(current)
            if next_key is None:
                return []
            current = self.lock_owner.get(next_key)
        return []

    def _abort_victim(self, victim_id: int) -> None:
        victim = self.sessions[victim_id]
        self._remove_from_queues(victim_id)
        self._rollback_txn(victim)
        victim.txn.status = "aborted"
        if victim.pending_completion is not None and not victim.pending_completion.done:
            result = self._error_result(
                victim, "Deadlock", "deadlock found when trying to get lock; transaction rolled back"
            )
            result.txn_state = "aborted"
            result.was_blocked = True
            victim.pending_completion.done = True
            victim.pending_completion.result = result
        victim.pending_completion = None
        victim.pending_ast = None
        victim.pending_sql = None

    def _remove_from_queues(self, session_id: int) -> None:
        self.wait_for.pop(session_id, None)
        for queue in self.lock_queue.values():
            if session_id in queue:
                queue.remove(session_id)

    def _drain_wakes(self) -> None:
        """Re-run pending statements whose lock became free, FIFO per lock."""
        if self._draining:
            return  # the outer drain loop will consume newly queued keys
        self._draining = True
        try:
            while self._wake_keys:
                key = self._wake_keys.pop(0)
                queue = self.lock_queue.get(key, [])
                while queue and self.lock_owner.get(key) is None:
                    sid = queue.pop(0)
                    self.wait_for.pop(sid, None)
                    session = self.sessions.get(sid)
                    if session is None or session.pending_ast is None:
                        continue
                    self._run_pending(session)
        finally:
            self._draining = False

    def _run_pending(self, session: Session) -> None:
        stmt, sql = session.pending_ast, session.pending_sql
        completion = session.pending_completion
        try:
            result = self._execute(session, stmt, sql)
        except _WouldBlock:
            return  # re-queued on some lock; completion stays pending
        except _StatementError as exc:
            result = self._statement_error(session, exc)
        result.was_blocked = True
        session.pending_ast = None
        session.pending_sql = None
        session.pending_completion = None
        completion.done = True
        completion.result = result

    # -- visibility

    def _effective_level(self, txn: Txn) -> IsolationLevel:
        if txn.level == IsolationLevel.SER and FaultSwitch.SERIALIZABLE_AS_SNAPSHOT in self.faults:
            return IsolationLevel.RR
        return txn.level

    def _read_mode(self, txn: Txn) -> tuple[str, int | None]:
        level = self._effective_level(txn)
        if FaultSwitch.ALLOW_DIRTY_READ in self.faults or level == IsolationLevel.RU:
            return "dirty", None
        if level == IsolationLevel.RC:
            return "committed", None
        if (
            FaultSwitch.ALLOW_NON_REPEATABLE_READ in self.faults
            or FaultSwitch.SNAPSHOT_SEES_LATER_COMMITS in self.faults
        ):
            return "committed", None
        if txn.snapshot_ts is None:
            txn.snapshot_ts = self._tick()  # first read establishes the snapshot
        return "snapshot", txn.snapshot_ts

    def _visible_version(self, row: RowState, txn: Txn, mode: str, snapshot_ts: int | None) -> Version | None:
        own = row.own_pending(txn.conn)
        if own is not None:
            return None if own.deleted else own
        if mode == "dirty":
            v = row.latest_any()
        elif mode == "committed":
            v = row.latest_committed()
        else:
            v = None
            for candidate in row.committed:
                if candidate.commit_ts is not None and candidate.commit_ts <= snapshot_ts:
                    v = candidate
        if v is None or v.deleted:
            return None
        return v

    def _visible_rows(self, table: TableRuntime, txn: Txn, mode: str, snapshot_ts: int | None):
        out = []
        for row_id in sorted(table.rows):
            v = self._visible_version(table.rows[row_id], txn, mode, snapshot_ts)
            if v is not None:
                out.append((row_id, v))
        return out

    def _current_version(self, row: RowState, conn: int) -> Version | None:
        """Write-targeting view: own pending overlay on latest committed."""
        own = row.own_pending(conn)
        if own is not None:
            return None if own.deleted else own
        v = row.latest_committed()
        if v is None or v.deleted:
            return None
        return v

    # -- DDL

    def _create_table(self, session: Session, stmt: ast.CreateTable) -> StatementResult:
        if stmt.table in self.tables:
            raise _StatementError("SemanticError", f"table {stmt.table} already exists")
        seen = set()
        for col in stmt.columns:
            if col.name in seen:
                raise _StatementError("SemanticError", f"duplicate column {col.name}")
            seen.add(col.name)
            if col.auto_increment and (col.datatype != "INT" or not col.primary_key):
                raise _StatementError("SemanticError", "AUTO_INCREMENT requires an INT PRIMARY KEY")
            if col.fk_table is not None:
                parent = self.tables.get(col.fk_table)
                if parent is None:
                    raise _StatementError("SemanticError", f"FK references unknown table {col.fk_table}")
                ref = parent.column(col.fk_column)
                if ref is None or not (ref.primary_key or ref.unique) or ref.datatype != col.datatype:
                    raise _StatementError(
                        "SemanticError",
                        f"FK must reference a type-matched PRIMARY KEY/UNIQUE column, got {col.fk_table}({col.fk_column})",
                    )
        self.tables[stmt.table] = TableRuntime(stmt.table, list(stmt.columns))
        return StatementResult(kind="ack", ts=self._tick())

    # -- helpers shared by DML

    def _table(self, name: str) -> TableRuntime:
        table = self.tables.get(name)
        if table is None:
            raise _StatementError("SemanticError", f"unknown table {name}")
        return table

    def _eval_const(self, expr) -> object:
        return ast.eval_expr(expr, {}, lambda ref, row: self._no_column(ref))

    def _no_column(self, ref):
        raise SqlSemanticError(f"column {ref.name} is not allowed here")

    def _check_type(self, table: TableRuntime, column: str, value) -> None:
        spec = table.column(column)
        if spec is None:
            raise _StatementError("SemanticError", f"{table.name} has no column {column}")
        if value is None:
            return
        expected = spec.datatype
        if expected == "INT" and (isinstance(value, bool) or not isinstance(value, int)):
            raise _StatementError("SemanticError", f"{column} expects INT, got {value!r}")
        if expected == "TEXT" and not isinstance(value, str):
            raise _StatementError("SemanticError", f"{column} expects TEXT, got {value!r}")
        if expected == "BOOLEAN" and not isinstance(value, bool):
            raise _StatementError("SemanticError", f"{column} expects BOOLEAN, got {value!r}")

    def _log_write(self, op: str, conn: int, table: str, row_id: int, vers: int) -> int:
        ts = self._tick()
        self.events.append(EngineEvent(op, conn, table, row_id, vers, ts))
        return ts

    # -- INSERT

    def _insert(self, session: Session, stmt: ast.Insert) -> StatementResult:
        table = self._table(stmt.table)
        columns = stmt.columns or [c.name for c in table.columns]
        for name in columns:
            if table.column(name) is None:
                raise _StatementError("SemanticError", f"{table.name} has no column {name}")
        writes = []
        for row_exprs in stmt.rows:
            if len(row_exprs) != len(columns):
                raise _StatementError("SemanticError", "INSERT value count does not match column list")
            values = {}
            for name, expr in zip(columns, row_exprs):
                value = self._eval_const(expr)
                self._check_type(table, name, value)
                values[name] = value
            row_id, version = self._insert_row(session, table, values)
            self._log_write("insert", session.id, table.name, row_id, version.vers)
            writes.append((table.name, row_id, version.vers, "insert"))
        return StatementResult(kind="ack", ts=self._tick(), writes=writes)

    def _insert_row(self, session: Session, table: TableRuntime, values: dict):
        txn = session.txn
        # Fill auto-increment columns; explicit values advance the counter,
        # and the counter never rolls back.
        for col in table.columns:
            if col.auto_increment:
                if values.get(col.name) is None:
                    table.autoinc[col.name] = table.autoinc.get(col.name, 0) + 1
                    values[col.name] = table.autoinc[col.name]
                else:
                    table.autoinc[col.name] = max(table.autoinc.get(col.name, 0), values[col.name])
        # Row identity: a declared ID column supplies the row id; otherwise
        # the internal counter does.
        id_col = table.column(ID_COLUMN)
        explicit_id = values.get(ID_COLUMN) if id_col is not None else None
        if explicit_id is not None:
            if not isinstance(explicit_id, int) or explicit_id < 1:
                raise _StatementError("ConstraintViolation", f"ID must be a positive integer, got {explicit_id!r}", aborts_txn=True)
            row_id = explicit_id
        else:
            row_id = table.next_row_id
        if row_id in table.rows and (table.rows[row_id].committed or table.rows[row_id].pending):
            raise _StatementError("ConstraintViolation", f"duplicate row id {row_id} in {table.name}", aborts_txn=True)
        table.next_row_id = max(table.next_row_id, row_id + 1)
        if id_col is not None:
            values[ID_COLUMN] = row_id
        if table.column(VERS_COLUMN) is not None:
            values[VERS_COLUMN] = 0
        # NOT NULL, uniqueness and FK checks against the current state.
        for col in table.columns:
            value = values.get(col.name)
            if value is None:
                if col.not_null:
                    raise _StatementError("ConstraintViolation", f"{col.name} is NOT NULL", aborts_txn=True)
                values.setdefault(col.name, None)
                continue
            if (col.primary_key or col.unique) and col.name != ID_COLUMN:
                for other_id, other in table.rows.items():
                    existing = other.latest_any()
                    if existing is not None and not existing.deleted and existing.values.get(col.name) == value:
                        raise _StatementError(
                            "ConstraintViolation", f"duplicate value {value!r} for unique column {col.name}", aborts_txn=True
                        )
            if col.fk_table is not None:
                parent = self._table(col.fk_table)
                ok = any(
                    v is not None and not v.deleted and v.values.get(col.fk_column) == value
                    for v in (r.latest_any() for r in parent.rows.values())
                )
                if not ok:
                    raise _StatementError(
                        "ConstraintViolation", f"FK value {value!r} not present in {col.fk_table}.{col.fk_column}", aborts_txn=True
                    )
        if FaultSwitch.ALLOW_DIRTY_WRITE not in self.faults:
            self._acquire_lock(session, (table.name, row_id))
        version = Version(vers=0, values=values, writer=session.id)
        state = table.rows.setdefault(row_id, RowState(row_id))
        state.pending.append(version)
        txn.write_rows.append((table.name, row_id))
        return row_id, version

    # -- UPDATE / DELETE

    def _write_targets(self, session: Session, table: TableRuntime, where) -> list[int]:
        targets = []
        for row_id in sorted(table.rows):
            current = self._current_version(table.rows[row_id], session.id)
            if current is None:
                continue
            if where is None or ast.eval_expr(
                where, current.values, self._column_resolver(table), self._subselect_runner(session)
            ):
                targets.append(row_id)
        return targets

    def _column_resolver(self, table: TableRuntime):
        def resolve(ref: ast.ColumnRef, row: dict):
            if ref.table is not None and ref.table != table.name:
                raise SqlSemanticError(f"unknown table qualifier {ref.table}")
            if table.column(ref.name) is None:
                raise SqlSemanticError(f"{table.name} has no column {ref.name}")
            return row.get(ref.name)

        return resolve

    def _mutate_rows(self, session: Session, table: TableRuntime, where, make_values) -> StatementResult:
        """Shared UPDATE/DELETE path: target, lock, validate, install."""
        txn = session.txn
        dirty_write = FaultSwitch.ALLOW_DIRTY_WRITE in self.faults
        # Lock acquisition can block; on wake the statement re-runs from the
        # top, so targets are recomputed until they are all locked.
        while True:
            targets = self._write_targets(session, table, where)
            if dirty_write:
                break
            missing = [r for r in targets if self.lock_owner.get((table.name, r)) != session.id]
            if not missing:
                break
            self._acquire_lock(session, (table.name, missing[0]))
        # First-updater-wins at RR/SER: a row whose committed head changed
        # after this transaction began is a serialization conflict.
        level = self._effective_level(txn)
        if (
            level in (IsolationLevel.RR, IsolationLevel.SER)
            and FaultSwitch.ALLOW_LOST_UPDATE not in self.faults
        ):
            for row_id in targets:
                head = table.rows[row_id].latest_committed()
                if head is not None and head.commit_ts is not None and head.commit_ts > txn.begin_ts:
                    raise _StatementError(
                        "SerializationFailure",
                        f"could not serialize access: concurrent update on {table.name} row {row_id}",
                        aborts_txn=True,
                    )
        writes = []
        op_name = None
        for row_id in targets:
            row = table.rows[row_id]
            base = row.latest_any()
            base_vers = base.vers if base is not None else 0
            current = self._current_version(row, session.id)
            new_values, deleted, op_name = make_values(dict(current.values))
            new_vers = base_vers + 1
            if table.column(VERS_COLUMN) is not None:
                new_values[VERS_COLUMN] = new_vers
            version = Version(vers=new_vers, values=new_values, writer=session.id, deleted=deleted)
            row.pending.append(version)
            txn.write_rows.append((table.name, row_id))
            self._log_write(op_name, session.id, table.name, row_id, new_vers)
            writes.append((table.name, row_id, new_vers, op_name))
        return StatementResult(kind="ack", ts=self._tick(), writes=writes)

    def _update(self, session: Session, stmt: ast.Update) -> StatementResult:
        table = self._table(stmt.table)
        resolver = self._column_resolver(table)
        runner = self._subselect_runner(session)

        def make_values(values: dict):
            for column, expr in stmt.sets:
                value = ast.eval_expr(expr, values, resolver, runner)
                self._check_type(table, column, value)
                values[column] = value
            return values, False, "update"

        return self._mutate_rows(session, table, stmt.where, make_values)

    def _delete(self, session: Session, stmt: ast.Delete) -> StatementResult:
        table = self._table(stmt.table)

        def make_values(values: dict):
            return values, True, "delete"

        return self._mutate_rows(session, table, stmt.where, make_values)

    # -- SELECT

    def _subselect_runner(self, session: Session):
        def run(select: ast.Select) -> list:
            result = self._select(session, select, record_reads=False)
            out = []
            for row in result.rows:
                if row:
                    out.append(next(iter(row.values())))
            return out

        return run

    def _select_source(self, session: Session, stmt: ast.Select, mode: str, snapshot_ts):
        """Rows for the FROM clause: (values, touched) pairs."""
        txn = session.txn
        if stmt.subquery is not None:
            inner = self._select(session, stmt.subquery, record_reads=False)
            return [(dict(r), t) for r, t in zip(inner.rows, inner.row_touches)], None
        table = self._table(stmt.table)
        rows = []
        for row_id, version in self._visible_rows(table, txn, mode, snapshot_ts):
            rows.append((dict(version.values), [(table.name, row_id, version.vers)]))
        return rows, table

    def _select(self, session: Session, stmt: ast.Select, record_reads: bool = True) -> StatementResult:
        txn = session.txn
        mode, snapshot_ts = self._read_mode(txn)
        base_rows, base_table = self._select_source(session, stmt, mode, snapshot_ts)
        join = stmt.join
        if join is not None:
            if stmt.subquery is not None:
                raise _StatementError("SemanticError", "joins over derived tables are not supported")
            right_table = self._table(join.table)
            right_rows = [
                (dict(v.values), [(right_table.name, rid, v.vers)])
                for rid, v in self._visible_rows(right_table, txn, mode, snapshot_ts)
            ]
            base_rows = self._join_rows(base_table, right_table, join, base_rows, right_rows)
        combined = []
        resolver = self._make_row_resolver(stmt, base_table, join)
        runner = self._subselect_runner(session)
        for values, touched in base_rows:
            if stmt.where is None or ast.eval_expr(stmt.where, values, resolver, runner):
                combined.append((values, touched))
        if stmt.order_by is not None:
            key_ref = stmt.order_by

            def sort_key(item):
                value = resolver(key_ref, item[0])
                if value is None:
                    return (0, 0)
                if isinstance(value, bool):
                    return (1, int(value))
                return (1, value)

            combined.sort(key=sort_key, reverse=stmt.order_desc)
        if stmt.limit is not None:
            combined = combined[: stmt.limit]
        projected = []
        touched_all = []
        for values, touched in combined:
            projected.append(self._project(stmt, values, resolver))
            touched_all.append(touched)
        result = StatementResult(kind="rows", ts=self._tick())
        result.rows = projected
        result.row_touches = touched_all
        flat = []
        for touched in touched_all:
            for item in touched:
                if item not in flat:
                    flat.append(item)
        result.touched_reads = flat
        if record_reads:
            for tname, row_id, vers in flat:
                txn.read_set.setdefault((tname, row_id), vers)
        return result

    def _join_rows(self, left_table, right_table, join: ast.Join, left_rows, right_rows):
        def qualify(values: dict, table_name: str) -> dict:
            return {f"{table_name}.{k}": v for k, v in values.items()}

        out = []
        if join.join_type == "CROSS":
            for lv, lt in left_rows:
                for rv, rt in right_rows:
                    out.append(({**qualify(lv, left_table.name), **qualify(rv, right_table.name)}, lt + rt))
            return out
        lref, rref = join.on_left, join.on_right

        # ON references may name either side in either order.
        def on_value(ref, lv, rv):
            if ref.table == left_table.name:
                return lv.get(ref.name)
            if ref.table == right_table.name:
                return rv.get(ref.name)
            raise SqlSemanticError(f"unknown qualifier {ref.table} in JOIN ON")

        matched_right = set()
        for lv, lt in left_rows:
            hit = False
            for ri, (rv, rt) in enumerate(right_rows):
                if on_value(lref, lv, rv) is not None and on_value(lref, lv, rv) == on_value(rref, lv, rv):
                    out.append(({**qualify(lv, left_table.name), **qualify(rv, right_table.name)}, lt + rt))
                    matched_right.add(ri)
                    hit = True
            if not hit and join.join_type == "LEFT":
                empty = {f"{right_table.name}.{c.name}": None for c in right_table.columns}
                out.append(({**qualify(lv, left_table.name), **empty}, list(lt)))
        if join.join_type == "RIGHT":
            for ri, (rv, rt) in enumerate(right_rows):
                if ri not in matched_right:
                    empty = {f"{left_table.name}.{c.name}": None for c in left_table.columns}
                    out.append(({**empty, **qualify(rv, right_table.name)}, list(rt)))
        return out

    def _make_row_resolver(self, stmt: ast.Select, base_table, join):
        if join is not None:
            def resolve(ref: ast.ColumnRef, row: dict):
                if ref.table is not None:
                    key = f"{ref.table}.{ref.name}"
                    if key not in row:
                        raise SqlSemanticError(f"unknown column {key}")
                    return row[key]
                hits = [k for k in row if k.endswith(f".{ref.name}")]
                if len(hits) != 1:
                    raise SqlSemanticError(f"ambiguous or unknown column {ref.name}")
                return row[hits[0]]

            return resolve

        def resolve(ref: ast.ColumnRef, row: dict):
            if ref.table is not None and base_table is not None and ref.table != base_table.name:
                raise SqlSemanticError(f"unknown table qualifier {ref.table}")
            if ref.name not in row:
                raise SqlSemanticError(f"unknown column {ref.name}")
            return row[ref.name]

        return resolve

    def _project(self, stmt: ast.Select, values: dict, resolver) -> dict:
        if stmt.projection == ["*"]:
            return dict(values)
        out = {}
        for ref in stmt.projection:
            label = ref.name if ref.table is None else f"{ref.table}.{ref.name}"
            out[label] = resolver(ref, values)
        return out
