"""Composition of multi-transaction test cases from a pattern's constraints.

The pipeline mirrors the three generation steps: select pool statements
satisfying each transaction's statement-type tuple, bind pattern variables
to concrete rows (recency-biased, distinct), align every statement's
condition onto its variable's row, then arrange statements in the
pattern's schedule order with SET ISOLATION + BEGIN prefixes per
transaction.

A write may be realized by an INSERT, in which case the variable binds to
the row id the insert will create and later writes to that variable are
updates (or a final delete) on that row.  A transaction whose first
pattern op comes after another transaction's terminal is given START
TRANSACTION WITH CONSISTENT SNAPSHOT so its snapshot predates the other's
commit; otherwise the begin variant is a weighted random choice.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field

from . import sqlgen
from .constraints import (
    DataAccessConstraint,
    OpHandle,
    ScheduleOrder,
    StmtTypeConstraint,
    extract_data_access,
    extract_schedule,
    extract_stmt_type,
)
from .patterns import AnomalyPattern, IsolationLevel, OpKind
from .schema import Schema
from .sqlgen import Condition, Statement, align_condition, gen_condition


class GenerationError(Exception):
    pass


class PoolExhausted(GenerationError):
    """The statement pool lacks a required statement kind/table."""


class InsufficientRows(GenerationError):
    """Fewer seeded rows than distinct pattern variables."""


class ConsistencyError(GenerationError):
    """Compose inputs disagree with each other or with the pattern."""


class ReproducerParseError(Exception):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def derive_seed(seed: int, *tags) -> int:
    """Stable sub-seed derivation (hashlib, not hash(): reproducible)."""
    text = ":".join([str(seed)] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


BEGIN_VARIANTS = (
    "BEGIN;",
    "START TRANSACTION;",
    "START TRANSACTION WITH CONSISTENT SNAPSHOT;",
)
CONSISTENT_SNAPSHOT_BEGIN = BEGIN_VARIANTS[2]


@dataclass
class ComposeConfig:
    p_id: float = 0.8
    p_empty: float = 0.05
    insert_var_probability: float = 0.3
    delete_terminal_probability: float = 0.25
    join_read_probability: float = 0.15
    begin_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    recency_decay: float = 0.6  # geometric weight toward recently inserted rows


@dataclass
class BoundVar:
    table: str
    row_id: int
    insert_mode: bool  # True when the first write creates the row
    versions: list[int] = field(default_factory=list)  # version sequence from the pattern


@dataclass
class VarBinding:
    vars: dict[str, BoundVar]

    def target(self, var: str) -> tuple[str, int]:
        bound = self.vars[var]
        return bound.table, bound.row_id


@dataclass
class CaseSlot:
    """One globally scheduled statement of a case."""

    txn: int
    sql: str
    kind: str  # sqlgen kind constant
    op_handle: OpHandle | None = None  # set for pattern ops


@dataclass
class TransactionCase:
    pattern_id: str
    isolation: IsolationLevel
    seed: int
    schema: Schema | None
    setup_sql: list[str]
    slots: list[CaseSlot]
    binding: VarBinding | None = None

    @property
    def txns(self) -> list[int]:
        return sorted({s.txn for s in self.slots})

    @property
    def schedule(self) -> list[int]:
        return [s.txn for s in self.slots]

    def statements_for(self, txn: int) -> list[str]:
        return [s.sql for s in self.slots if s.txn == txn]


def statement_kind(sql: str) -> str:
    word = sql.lstrip().split(None, 1)
    head = word[0].upper().rstrip(";") if word else ""
    return {
        "SELECT": sqlgen.SELECT,
        "UPDATE": sqlgen.UPDATE,
        "INSERT": sqlgen.INSERT,
        "DELETE": sqlgen.DELETE,
        "COMMIT": sqlgen.COMMIT,
        "ROLLBACK": sqlgen.ROLLBACK,
        "BEGIN": sqlgen.BEGIN,
        "START": sqlgen.BEGIN,
        "SET": sqlgen.SET_ISOLATION,
        "CREATE": "create",
    }.get(head, "other")


# --- statement selection ----------------------------------------------------


def select_statements(
    pool: list[Statement],
    constraint: StmtTypeConstraint,
    seed: int,
    requirements: list[tuple[str, tuple[str, ...], str | None]] | None = None,
) -> list[Statement]:
    """Pick statements matching the type counts, in pattern-op order.

    ``requirements`` optionally pins each read/write slot to allowed kinds
    and a table (the composer derives these from the variable binding).
    Without it, reads draw from selects and writes from any write kind.
    Raises PoolExhausted when the pool cannot satisfy a slot.
    """
    rng = random.Random(seed)
    if requirements is None:
        requirements = [("R", sqlgen.READ_KINDS, None)] * constraint.n_reads + [
            ("W", sqlgen.WRITE_KINDS, None)
        ] * constraint.n_writes
        terminal = ["B"] * constraint.n_rollbacks + ["C"] * constraint.n_commits
        requirements = requirements + [(t, (), None) for t in terminal]
    chosen: list[Statement] = []
    for role, kinds, table in requirements:
        if role == "C":
            chosen.append(Statement(sqlgen.COMMIT))
            continue
        if role == "B":
            chosen.append(Statement(sqlgen.ROLLBACK))
            continue
        # Joins align their condition onto the left table, so a bound table
        # must be the statement's primary table, not just appear in the join.
        candidates = [
            s
            for s in pool
            if s.kind in kinds and (table is None or s.table == table)
        ]
        if not candidates:
            raise PoolExhausted(
                f"pool has no statement of kind {kinds} on table {table or '<any>'}"
            )
        chosen.append(candidates[rng.randrange(len(candidates))])
    got = {"R": 0, "W": 0, "B": 0, "C": 0}
    for stmt in chosen:
        if stmt.kind in sqlgen.READ_KINDS:
            got["R"] += 1
        elif stmt.kind in sqlgen.WRITE_KINDS:
            got["W"] += 1
        elif stmt.kind == sqlgen.ROLLBACK:
            got["B"] += 1
        elif stmt.kind == sqlgen.COMMIT:
            got["C"] += 1
    want = {
        "R": constraint.n_reads,
        "W": constraint.n_writes,
        "B": constraint.n_rollbacks,
        "C": constraint.n_commits,
    }
    if got != want:
        raise ConsistencyError(f"selected statements {got} do not satisfy {want}")
    return chosen


# --- variable binding -------------------------------------------------------


def _var_profiles(pattern: AnomalyPattern) -> dict[str, list]:
    profiles: dict[str, list] = {}
    for op in pattern.ops:
        if op.var is not None:
            profiles.setdefault(op.var, []).append(op)
    return profiles


def bind_variables(
    schema: Schema,
    dac: DataAccessConstraint,
    seed: int,
    pattern: AnomalyPattern | None = None,
    cfg: ComposeConfig | None = None,
) -> VarBinding:
    """Bind each pattern variable to a distinct (table, row) target.

    Rows are drawn with a geometric bias toward the most recently inserted
    ones.  A variable whose ops start with its first write (never reading
    the initial state) may instead bind to the row a fresh INSERT will
    create; at most one such variable per table keeps the predicted row id
    exact.
    """
    cfg = cfg or ComposeConfig()
    rng = random.Random(seed)
    variables = sorted({var for var, _ in dac.entries.values()})
    total_rows = sum(len(rows) for rows in schema.inserted_keys.values())
    if total_rows < len(variables):
        raise InsufficientRows(
            f"{len(variables)} variables need at least as many seeded rows, have {total_rows}"
        )
    profiles = _var_profiles(pattern) if pattern is not None else {}
    versions: dict[str, list[int]] = {}
    for handle in sorted(dac.entries, key=lambda h: (h.txn, h.intra_index)):
        var, version = dac.entries[handle]
        versions.setdefault(var, []).append(version)

    bound: dict[str, BoundVar] = {}
    used_rows: set[tuple[str, int]] = set()
    insert_tables: set[str] = set()
    tables_with_rows = [t for t in schema.table_names if schema.inserted_keys.get(t)]
    for var in variables:
        ops = profiles.get(var, [])
        insert_eligible = bool(ops) and ops[0].kind is OpKind.WRITE and ops[0].version == 1
        table = rng.choice(tables_with_rows)
        if insert_eligible and table not in insert_tables and rng.random() < cfg.insert_var_probability:
            row_id = len(schema.inserted_keys[table]) + 1
            if (table, row_id) not in used_rows:
                insert_tables.add(table)
                used_rows.add((table, row_id))
                bound[var] = BoundVar(table, row_id, insert_mode=True, versions=versions[var])
                continue
        row_id = _pick_row(rng, schema, table, used_rows, cfg.recency_decay)
        if row_id is None:
            # The chosen table ran out of rows; fall back to any free row.
            for other in tables_with_rows:
                row_id = _pick_row(rng, schema, other, used_rows, cfg.recency_decay)
                if row_id is not None:
                    table = other
                    break
        if row_id is None:
            raise InsufficientRows(f"no free row left for variable {var}")
        used_rows.add((table, row_id))
        bound[var] = BoundVar(table, row_id, insert_mode=False, versions=versions[var])
    return VarBinding(bound)


def _pick_row(rng: random.Random, schema: Schema, table: str, used: set, decay: float) -> int | None:
    rows = [r for r in schema.inserted_keys.get(table, []) if (table, r) not in used]
    if not rows:
        return None
    weights = [decay ** (len(rows) - 1 - i) for i in range(len(rows))]
    return rng.choices(rows, weights=weights, k=1)[0]


# --- composition ------------------------------------------------------------


def _write_kind_for(
    var_ops: list, op_position: int, bound: BoundVar, rng: random.Random, cfg: ComposeConfig
) -> tuple[str, ...]:
    """Allowed statement kinds for the write at var_ops[op_position]."""
    later_ops = var_ops[op_position + 1 :]
    is_first = all(o.kind is not OpKind.WRITE for o in var_ops[:op_position])
    if bound.insert_mode and is_first:
        return (sqlgen.INSERT,)
    if not later_ops and rng.random() < cfg.delete_terminal_probability:
        return (sqlgen.UPDATE, sqlgen.DELETE)
    return (sqlgen.UPDATE,)


def compose(
    pattern: AnomalyPattern,
    selected: dict[int, list[Statement]],
    binding: VarBinding,
    dac: DataAccessConstraint,
    schedule: ScheduleOrder,
    isolation: IsolationLevel,
    schema: Schema,
    seed: int,
    cfg: ComposeConfig | None = None,
    setup_sql: list[str] | None = None,
) -> TransactionCase:
    """Arrange aligned statements in schedule order with begin prefixes."""
    cfg = cfg or ComposeConfig()
    rng = random.Random(derive_seed(seed, "compose"))
    txns = pattern.txns
    if sorted(selected) != txns:
        raise ConsistencyError(f"selected statements cover txns {sorted(selected)}, pattern has {txns}")
    if len(schedule.seq) != len(pattern.ops):
        raise ConsistencyError("schedule length does not match the pattern op count")

    # A transaction whose first read comes after another transaction's
    # terminal would establish its first-use snapshot too late, making the
    # post-commit read correct behavior rather than the pattern's anomaly;
    # those transactions get the consistent-snapshot begin.
    first_read_pos = {}
    terminal_pos = {}
    for i, op in enumerate(pattern.ops):
        if op.kind is OpKind.READ:
            first_read_pos.setdefault(op.txn, i)
        if op.kind in (OpKind.COMMIT, OpKind.ABORT):
            terminal_pos[op.txn] = i

    slots: list[CaseSlot] = []
    for txn in txns:
        level_sql = f"SET SESSION TRANSACTION ISOLATION LEVEL {isolation.sql};"
        slots.append(CaseSlot(txn, level_sql, sqlgen.SET_ISOLATION))
        needs_cs = txn in first_read_pos and any(
            terminal_pos[other] < first_read_pos[txn] for other in txns if other != txn
        )
        if needs_cs:
            begin_sql = CONSISTENT_SNAPSHOT_BEGIN
        else:
            begin_sql = rng.choices(BEGIN_VARIANTS, weights=cfg.begin_weights, k=1)[0]
        slots.append(CaseSlot(txn, begin_sql, sqlgen.BEGIN))

    cursors = {t: 0 for t in txns}
    intra = {t: 0 for t in txns}
    for op in pattern.ops:
        txn = op.txn
        intra[txn] += 1
        handle = OpHandle(txn, intra[txn])
        stmt = selected[txn][cursors[txn]]
        cursors[txn] += 1
        if op.kind in (OpKind.COMMIT, OpKind.ABORT):
            expected = sqlgen.COMMIT if op.kind is OpKind.COMMIT else sqlgen.ROLLBACK
            if stmt.kind != expected:
                raise ConsistencyError(f"txn {txn} op {handle} expected {expected}, got {stmt.kind}")
            slots.append(CaseSlot(txn, stmt.render(), stmt.kind, handle))
            continue
        if handle not in dac.entries:
            raise ConsistencyError(f"data-access constraint missing for {handle}")
        var, _version = dac.entries[handle]
        bound = binding.vars[var]
        if stmt.kind == sqlgen.INSERT:
            if not bound.insert_mode:
                raise ConsistencyError(f"variable {var} is row-bound but got an INSERT")
            slots.append(CaseSlot(txn, stmt.render(), stmt.kind, handle))
            continue
        cond = gen_condition(
            schema,
            bound.table,
            bound.row_id,
            derive_seed(seed, "cond", txn, intra[txn]),
            p_id=cfg.p_id,
            p_empty=cfg.p_empty,
            next_insert_id=bound.row_id if bound.insert_mode else None,
        )
        if bound.insert_mode:
            # The row does not exist at seed time; only its id addresses it.
            cond = Condition.by_row_id(bound.row_id)
        aligned = align_condition(stmt, cond)
        slots.append(CaseSlot(txn, aligned.render(), aligned.kind, handle))

    case = TransactionCase(
        pattern_id=pattern.id,
        isolation=isolation,
        seed=seed,
        schema=schema,
        setup_sql=list(setup_sql or []),
        slots=slots,
        binding=binding,
    )
    _check_case(case, pattern)
    return case


def _check_case(case: TransactionCase, pattern: AnomalyPattern) -> None:
    """Composed-case invariants: per-txn counts and intra-txn order."""
    per_txn_ops = {t: [] for t in pattern.txns}
    for op in pattern.ops:
        per_txn_ops[op.txn].append(op)
    for txn in pattern.txns:
        stmts = [s for s in case.slots if s.txn == txn and s.op_handle is not None]
        ops = per_txn_ops[txn]
        if len(stmts) != len(ops):
            raise ConsistencyError(f"txn {txn}: {len(stmts)} statements for {len(ops)} pattern ops")
        for slot, op in zip(stmts, ops):
            if op.kind is OpKind.READ and slot.kind not in sqlgen.READ_KINDS:
                raise ConsistencyError(f"txn {txn} {slot.sql!r} should be a read")
            if op.kind is OpKind.WRITE and slot.kind not in sqlgen.WRITE_KINDS:
                raise ConsistencyError(f"txn {txn} {slot.sql!r} should be a write")
            if op.kind is OpKind.COMMIT and slot.kind != sqlgen.COMMIT:
                raise ConsistencyError(f"txn {txn} expected COMMIT")
            if op.kind is OpKind.ABORT and slot.kind != sqlgen.ROLLBACK:
                raise ConsistencyError(f"txn {txn} expected ROLLBACK")


def build_case(
    pattern: AnomalyPattern,
    schema: Schema,
    pool: list[Statement],
    isolation: IsolationLevel,
    seed: int,
    cfg: ComposeConfig | None = None,
    setup_sql: list[str] | None = None,
) -> TransactionCase:
    """Full pipeline: constraints -> binding -> selection -> composition."""
    cfg = cfg or ComposeConfig()
    stmt_types = {c.txn: c for c in extract_stmt_type(pattern)}
    dac = extract_data_access(pattern)
    schedule = extract_schedule(pattern)
    binding = bind_variables(schema, dac, derive_seed(seed, "bind"), pattern, cfg)

    profiles = _var_profiles(pattern)
    rng = random.Random(derive_seed(seed, "kinds"))
    selected: dict[int, list[Statement]] = {}
    intra = {t: 0 for t in pattern.txns}
    var_cursor: dict[str, int] = {v: 0 for v in profiles}
    requirements: dict[int, list] = {t: [] for t in pattern.txns}
    for op in pattern.ops:
        intra[op.txn] += 1
        if op.kind in (OpKind.READ, OpKind.WRITE):
            var = dac.entries[OpHandle(op.txn, intra[op.txn])][0]
            bound = binding.vars[var]
            position = var_cursor[var]
            var_cursor[var] += 1
            if op.kind is OpKind.READ:
                kinds: tuple[str, ...] = (sqlgen.SELECT,)
                if not bound.insert_mode and rng.random() < cfg.join_read_probability:
                    kinds = sqlgen.READ_KINDS
                requirements[op.txn].append(("R", kinds, bound.table))
            else:
                kinds = _write_kind_for(profiles[var], position, bound, rng, cfg)
                requirements[op.txn].append(("W", kinds, bound.table))
        elif op.kind is OpKind.COMMIT:
            requirements[op.txn].append(("C", (), None))
        else:
            requirements[op.txn].append(("B", (), None))
    for txn in pattern.txns:
        selected[txn] = select_statements(
            pool, stmt_types[txn], derive_seed(seed, "select", txn), requirements[txn]
        )
    return compose(
        pattern, selected, binding, dac, schedule, isolation, schema, seed, cfg, setup_sql
    )


# --- reproducer file format -------------------------------------------------

_INIT_RE = re.compile(r"^/\*\s*init\s*\*/\s*(?P<sql>.+)$")
_TXN_RE = re.compile(r"^/\*\s*txn\s*(?P<txn>\d+)\s*\*/\s*(?P<sql>.+)$")


def render_reproducer(case: TransactionCase) -> str:
    """The replayable one-statement-per-line reproducer text."""
    lines = [f"/*init*/ {sql}" for sql in case.setup_sql]
    lines.extend(f"/*txn {slot.txn}*/ {slot.sql}" for slot in case.slots)
    return "\n".join(lines) + "\n"


def parse_reproducer(text: str, isolation: IsolationLevel | None = None) -> TransactionCase:
    """Parse reproducer text back into an executable case.

    Unprefixed lines are ignored as commentary.  The isolation level is
    taken from the script's SET statements unless overridden.
    """
    setup: list[str] = []
    slots: list[CaseSlot] = []
    inferred: IsolationLevel | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        m = _INIT_RE.match(line)
        if m:
            setup.append(m.group("sql").strip())
            continue
        m = _TXN_RE.match(line)
        if m:
            sql = m.group("sql").strip()
            kind = statement_kind(sql)
            if kind == "other":
                raise ReproducerParseError(f"unrecognized statement {sql!r}", lineno)
            slots.append(CaseSlot(int(m.group("txn")), sql, kind))
            if kind == sqlgen.SET_ISOLATION and inferred is None:
                level_match = re.search(r"ISOLATION\s+LEVEL\s+(.+?);?\s*$", sql, re.IGNORECASE)
                if level_match:
                    inferred = IsolationLevel.from_name(level_match.group(1))
            continue
        # Anything else (trailing expectations, commentary) is ignored.
    if not slots:
        raise ReproducerParseError("no /*txn N*/ statements found")
    level = isolation or inferred or IsolationLevel.RR
    return TransactionCase(
        pattern_id="<replay>",
        isolation=level,
        seed=0,
        schema=None,
        setup_sql=setup,
        slots=slots,
    )
