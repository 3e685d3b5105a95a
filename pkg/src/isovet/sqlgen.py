"""Candidate SQL statement generation and condition alignment.

Statements are generated type-correct against a schema (SET literals match
their column, predicates are boolean) and then *aligned*: the WHERE clause
of a read or write is replaced so it targets the row a pattern variable
was bound to.  Conditions come in three shapes: ``ID = k`` (the default),
a column predicate satisfied by exactly the target row, or the empty
condition (full table scan).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from . import schema as sch
from .schema import ID_COLUMN, VERS_COLUMN, Schema, TableDef, render_literal


class KindError(Exception):
    """Condition alignment applied to a statement kind without a WHERE."""


class MissingRow(Exception):
    """Condition target row does not exist."""


SELECT = "select"
SELECT_JOIN = "select_join"
UPDATE = "update"
INSERT = "insert"
DELETE = "delete"
COMMIT = "commit"
ROLLBACK = "rollback"
BEGIN = "begin"
SET_ISOLATION = "set"

READ_KINDS = (SELECT, SELECT_JOIN)
WRITE_KINDS = (UPDATE, INSERT, DELETE)


@dataclass(frozen=True)
class Condition:
    """WHERE clause shape: by row id, by column predicate, or empty."""

    shape: str  # "by_row_id" | "column" | "empty"
    column: str | None = None
    op: str | None = None
    value: object | None = None

    @staticmethod
    def by_row_id(row_id: int) -> "Condition":
        return Condition("by_row_id", column=ID_COLUMN, op="=", value=row_id)

    @staticmethod
    def column_predicate(column: str, op: str, value) -> "Condition":
        return Condition("column", column=column, op=op, value=value)

    @staticmethod
    def empty() -> "Condition":
        return Condition("empty")

    def render(self, qualify: str | None = None) -> str:
        if self.shape == "empty":
            return ""
        col = f"{qualify}.{self.column}" if qualify else self.column
        return f"{col} {self.op} {render_literal(self.value)}"


@dataclass
class Statement:
    """One generated SQL statement plus the structure needed to rewrite it."""

    kind: str
    table: str | None = None
    join_table: str | None = None
    join_type: str | None = None  # INNER/LEFT/RIGHT/CROSS
    join_on: tuple[str, str] | None = None  # (left "t.c", right "t.c")
    projection: list[str] = field(default_factory=list)  # empty -> *
    set_clauses: list[tuple[str, object]] = field(default_factory=list)
    insert_columns: list[str] = field(default_factory=list)
    insert_values: list[object] = field(default_factory=list)
    where: Condition = field(default_factory=Condition.empty)
    order_by: str | None = None
    order_desc: bool = False
    limit: int | None = None

    @property
    def tables(self) -> list[str]:
        out = [t for t in (self.table, self.join_table) if t]
        return out

    def render(self) -> str:
        if self.kind == COMMIT:
            return "COMMIT;"
        if self.kind == ROLLBACK:
            return "ROLLBACK;"
        if self.kind in (SELECT, SELECT_JOIN):
            cols = ", ".join(self.projection) if self.projection else "*"
            sql = f"SELECT {cols} FROM {self.table}"
            if self.kind == SELECT_JOIN:
                if self.join_type == "CROSS":
                    sql += f" CROSS JOIN {self.join_table}"
                else:
                    sql += f" {self.join_type} JOIN {self.join_table} ON {self.join_on[0]} = {self.join_on[1]}"
            where = self.where.render(qualify=self.table if self.kind == SELECT_JOIN else None)
            if where:
                sql += f" WHERE {where}"
            if self.order_by:
                sql += f" ORDER BY {self.order_by}" + (" DESC" if self.order_desc else "")
            if self.limit is not None:
                sql += f" LIMIT {self.limit}"
            return sql + ";"
        if self.kind == UPDATE:
            sets = ", ".join(f"{c} = {render_literal(v)}" for c, v in self.set_clauses)
            sql = f"UPDATE {self.table} SET {sets}"
            where = self.where.render()
            if where:
                sql += f" WHERE {where}"
            return sql + ";"
        if self.kind == DELETE:
            sql = f"DELETE FROM {self.table}"
            where = self.where.render()
            if where:
                sql += f" WHERE {where}"
            return sql + ";"
        if self.kind == INSERT:
            cols = ", ".join(self.insert_columns)
            vals = ", ".join(render_literal(v) for v in self.insert_values)
            return f"INSERT INTO {self.table} ({cols}) VALUES ({vals});"
        raise ValueError(f"cannot render statement kind {self.kind}")


def _settable_columns(table: TableDef) -> list[sch.ColumnDef]:
    # Never rewrite row identity, version bookkeeping, or uniqueness-bearing
    # columns: collisions would abort the transaction for reasons unrelated
    # to concurrency control.
    return [
        c
        for c in table.user_columns
        if not (c.primary_key or c.unique or c.auto_increment or c.foreign_key)
    ]


def _random_condition(rng: random.Random, table: TableDef) -> Condition:
    choices = [c for c in table.user_columns if c.datatype != sch.BOOLEAN]
    if not choices or rng.random() < 0.3:
        return Condition.empty()
    col = rng.choice(choices)
    op = rng.choice(("=", "<", ">", "<=", ">=")) if col.datatype == sch.INT else "="
    return Condition.column_predicate(col.name, op, sch.random_value(rng, col.datatype))


def _gen_select(rng: random.Random, table: TableDef) -> Statement:
    projection: list[str] = []
    if rng.random() < 0.4:
        k = rng.randint(1, len(table.user_columns))
        projection = [c.name for c in rng.sample(table.user_columns, k)]
    stmt = Statement(SELECT, table=table.name, projection=projection, where=_random_condition(rng, table))
    if rng.random() < 0.2:
        stmt.order_by = rng.choice([c.name for c in table.user_columns])
        stmt.order_desc = rng.random() < 0.5
    if rng.random() < 0.1:
        stmt.limit = rng.randint(1, 5)
    return stmt


def _gen_update(rng: random.Random, table: TableDef) -> Statement | None:
    cols = _settable_columns(table)
    if not cols:
        return None
    k = rng.randint(1, min(2, len(cols)))
    sets = [(c.name, sch.random_value(rng, c.datatype)) for c in rng.sample(cols, k)]
    return Statement(UPDATE, table=table.name, set_clauses=sets, where=_random_condition(rng, table))


def _gen_insert(rng: random.Random, schema: Schema, table: TableDef) -> Statement:
    cols: list[str] = []
    vals: list[object] = []
    for c in table.user_columns:
        if c.auto_increment:
            continue
        if c.foreign_key is not None:
            pool = schema.inserted_keys.get(c.foreign_key.ref_table, [])
            parent_rows = schema.seed_values.get(c.foreign_key.ref_table, [])
            values = [r[c.foreign_key.ref_column] for r in parent_rows]
            if not values:
                continue
            cols.append(c.name)
            vals.append(rng.choice(values))
        elif c.primary_key or c.unique:
            cols.append(c.name)
            # Values far outside the seeded ID range keep collisions unlikely.
            vals.append(
                rng.randint(10_000, 1_000_000)
                if c.datatype == sch.INT
                else f"u{rng.randint(10_000, 1_000_000)}"
            )
        else:
            cols.append(c.name)
            vals.append(sch.random_value(rng, c.datatype))
    return Statement(INSERT, table=table.name, insert_columns=cols, insert_values=vals)


def _gen_delete(rng: random.Random, table: TableDef) -> Statement:
    return Statement(DELETE, table=table.name, where=_random_condition(rng, table))


def gen_join(schema: Schema, seed: int) -> Statement | None:
    """A join read over two tables, or None when no column pairing exists.

    Pairing priority: a foreign key joins to its referenced key; a primary
    key joins to a foreign key referencing it; otherwise any two same-type
    columns across different tables.
    """
    rng = random.Random(seed)
    pairs: list[tuple[str, str, str, str]] = []
    for child_t, child_c, parent_t, parent_c in schema.fk_edges:
        pairs.append((child_t, child_c, parent_t, parent_c))
        pairs.append((parent_t, parent_c, child_t, child_c))
    if not pairs:
        for left in schema.tables:
            for right in schema.tables:
                if left.name == right.name:
                    continue
                for lc in left.user_columns:
                    for rc in right.user_columns:
                        if lc.datatype == rc.datatype:
                            pairs.append((left.name, lc.name, right.name, rc.name))
    if not pairs:
        return None
    lt, lc, rt, rc = rng.choice(pairs)
    join_type = rng.choice(("INNER", "LEFT", "RIGHT", "CROSS"))
    stmt = Statement(
        SELECT_JOIN,
        table=lt,
        join_table=rt,
        join_type=join_type,
        join_on=(f"{lt}.{lc}", f"{rt}.{rc}"),
    )
    if join_type == "CROSS":
        stmt.join_on = (f"{lt}.{lc}", f"{rt}.{rc}")  # kept for provenance; not rendered
    return stmt


def gen_statement_pool(schema: Schema, seed: int, n: int = 100) -> list[Statement]:
    """A pool of type-correct statements covering every kind and table.

    The pool always opens with one select/update/insert/delete per table
    (updates skipped for tables with no rewritable column), then fills up
    to ``n`` with random picks, including join reads when the schema
    offers a pairing.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    pool: list[Statement] = []
    for table in schema.tables:
        pool.append(_gen_select(rng, table))
        upd = _gen_update(rng, table)
        if upd is not None:
            pool.append(upd)
        pool.append(_gen_insert(rng, schema, table))
        pool.append(_gen_delete(rng, table))
    join_possible = gen_join(schema, seed) is not None
    while len(pool) < n:
        table = schema.table(rng.choice(schema.table_names))
        roll = rng.random()
        if roll < 0.35:
            if join_possible and rng.random() < 0.2:
                stmt = gen_join(schema, rng.randrange(2**30))
                if stmt is not None:
                    pool.append(stmt)
                    continue
            pool.append(_gen_select(rng, table))
        elif roll < 0.65:
            upd = _gen_update(rng, table)
            pool.append(upd if upd is not None else _gen_select(rng, table))
        elif roll < 0.85:
            pool.append(_gen_insert(rng, schema, table))
        else:
            pool.append(_gen_delete(rng, table))
    return pool


def gen_condition(
    schema: Schema,
    table: str,
    target_row_id: int,
    seed: int,
    p_id: float = 0.8,
    p_empty: float = 0.05,
    next_insert_id: int | None = None,
) -> Condition:
    """A condition targeting one bound row.

    ``ID = target`` with probability ``p_id``; otherwise a column predicate
    that uniquely matches the target row's seeded values (falling back to
    the ID form when no column distinguishes it); the empty condition (full
    scan) with probability ``p_empty``.  For rows an insert will create,
    only the ID form is meaningful.
    """
    rng = random.Random(seed)
    rows = schema.seed_values.get(table, [])
    existing = any(r[ID_COLUMN] == target_row_id for r in rows)
    if not existing:
        if next_insert_id is not None and target_row_id == next_insert_id:
            return Condition.by_row_id(target_row_id)
        raise MissingRow(f"{table} has no row ID={target_row_id}")
    roll = rng.random()
    if roll < p_id:
        return Condition.by_row_id(target_row_id)
    if roll < p_id + p_empty:
        return Condition.empty()
    target = next(r for r in rows if r[ID_COLUMN] == target_row_id)
    columns = [c for c in schema.table(table).user_columns if c.datatype != sch.BOOLEAN]
    rng.shuffle(columns)
    for col in columns:
        value = target[col.name]
        if value is None:
            continue
        if sum(1 for r in rows if r[col.name] == value) == 1:
            return Condition.column_predicate(col.name, "=", value)
    return Condition.by_row_id(target_row_id)


def align_condition(stmt: Statement, cond: Condition) -> Statement:
    """Return ``stmt`` with its WHERE replaced by ``cond``.

    Only reads, updates and deletes carry a WHERE; everything else raises
    KindError.  All other clauses are preserved, so alignment is
    idempotent and never touches SET, projection, ORDER BY or LIMIT.
    """
    if stmt.kind not in (SELECT, SELECT_JOIN, UPDATE, DELETE):
        raise KindError(f"cannot align a {stmt.kind} statement")
    return replace(stmt, where=cond)
