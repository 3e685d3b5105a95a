"""Randomized schema and seed-data generation.

Every generated table carries two bookkeeping columns on top of its user
columns: ``ID`` (unique row identifier, assigned 1,2,3,... in insertion
order) and ``VERS`` (version counter, 0 on insert, +1 per modification).
They exist so execution traces can be tied back to rows and versions; the
reference engine maintains them automatically and a trigger installation
does the same on external targets.

Foreign keys are generated by candidate-key matching: a new column may
reference a PRIMARY KEY or UNIQUE column of the same datatype in an
earlier table, which keeps the FK graph acyclic and seed data orderable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

ID_COLUMN = "ID"
VERS_COLUMN = "VERS"

INT = "INT"
TEXT = "TEXT"
BOOLEAN = "BOOLEAN"
DATATYPES = (INT, TEXT, BOOLEAN)

INT_MIN, INT_MAX = -(2**31), 2**31 - 1
_TEXT_POOL = ("a", "b", "c", "dd", "ee", "ff", "pq", "rs", "tu", "vw", "xyz", "zz")


@dataclass(frozen=True)
class ForeignKey:
    ref_table: str
    ref_column: str


@dataclass
class ColumnDef:
    name: str
    datatype: str
    primary_key: bool = False
    not_null: bool = False
    unique: bool = False
    auto_increment: bool = False
    foreign_key: ForeignKey | None = None

    def render(self) -> str:
        parts = [self.name, self.datatype]
        if self.primary_key:
            parts.append("PRIMARY KEY")
        if self.auto_increment:
            parts.append("AUTO_INCREMENT")
        if self.unique and not self.primary_key:
            parts.append("UNIQUE")
        if self.not_null and not self.primary_key:
            parts.append("NOT NULL")
        if self.foreign_key is not None:
            parts.append(f"REFERENCES {self.foreign_key.ref_table}({self.foreign_key.ref_column})")
        return " ".join(parts)


@dataclass
class TableDef:
    name: str
    columns: list[ColumnDef]

    @property
    def user_columns(self) -> list[ColumnDef]:
        return [c for c in self.columns if c.name not in (ID_COLUMN, VERS_COLUMN)]

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(f"{self.name} has no column {name}")


@dataclass
class Schema:
    tables: list[TableDef]
    fk_edges: list[tuple[str, str, str, str]] = field(default_factory=list)  # child t,c -> parent t,c
    inserted_keys: dict[str, list[int]] = field(default_factory=dict)  # table -> seeded ID values
    seed_values: dict[str, list[dict]] = field(default_factory=dict)  # table -> seeded row values

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"no table {name}")

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]


@dataclass
class SchemaGenConfig:
    """Bounds for schema generation.

    ``max_tables`` must stay within 1..4 and user-column counts within
    1..6; the defaults are configuration, not derived values.
    """

    max_tables: int = 2
    min_user_columns: int = 1
    max_user_columns: int = 4
    fk_probability: float = 0.5
    unique_probability: float = 0.2
    not_null_probability: float = 0.3
    auto_increment_probability: float = 0.25

    def __post_init__(self):
        if not 1 <= self.max_tables <= 4:
            raise ValueError("max_tables must be within 1..4")
        if not 1 <= self.min_user_columns <= self.max_user_columns <= 6:
            raise ValueError("user column bounds must be within 1..6")


def random_value(rng: random.Random, datatype: str):
    if datatype == INT:
        return rng.randint(INT_MIN, INT_MAX)
    if datatype == TEXT:
        return rng.choice(_TEXT_POOL)
    if datatype == BOOLEAN:
        return rng.choice((True, False))
    raise ValueError(f"unknown datatype {datatype}")


def render_literal(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, int):
        return str(value)
    return "'" + str(value).replace("'", "''") + "'"


def gen_schema(seed: int, cfg: SchemaGenConfig | None = None) -> Schema:
    """Deterministically generate a schema for the given seed."""
    cfg = cfg or SchemaGenConfig()
    rng = random.Random(seed)
    n_tables = rng.randint(1, cfg.max_tables)
    schema = Schema(tables=[])
    # (table, column, datatype) triples usable as FK targets.
    candidates: list[tuple[str, str, str]] = []
    for ti in range(1, n_tables + 1):
        tname = f"t{ti}"
        columns = [ColumnDef(ID_COLUMN, INT), ColumnDef(VERS_COLUMN, INT)]
        n_user = rng.randint(cfg.min_user_columns, cfg.max_user_columns)
        pk_assigned = False
        for ci in range(n_user):
            cname = f"c{ci}"
            datatype = rng.choice(DATATYPES)
            col = ColumnDef(cname, datatype)
            if datatype == INT and not pk_assigned and rng.random() < 0.4:
                col.primary_key = True
                col.not_null = True
                pk_assigned = True
                if rng.random() < cfg.auto_increment_probability:
                    col.auto_increment = True
            else:
                if datatype != BOOLEAN and rng.random() < cfg.unique_probability:
                    col.unique = True
                if rng.random() < cfg.not_null_probability:
                    col.not_null = True
                typed = [c for c in candidates if c[2] == datatype]
                if typed and rng.random() < cfg.fk_probability:
                    ref_table, ref_column, _ = rng.choice(typed)
                    col.foreign_key = ForeignKey(ref_table, ref_column)
                    col.unique = False
            columns.append(col)
        table = TableDef(tname, columns)
        schema.tables.append(table)
        for col in table.user_columns:
            if col.foreign_key is not None:
                schema.fk_edges.append(
                    (tname, col.name, col.foreign_key.ref_table, col.foreign_key.ref_column)
                )
            elif col.primary_key or col.unique:
                candidates.append((tname, col.name, col.datatype))
        schema.inserted_keys[tname] = []
        schema.seed_values[tname] = []
    return schema


def emit_ddl(schema: Schema) -> list[str]:
    """CREATE TABLE statements, parents before FK children.

    Generation only ever references earlier tables so declaration order is
    already topological; assert rather than re-sort.
    """
    assert schema.tables, "schema must contain at least one table"
    declared: set[str] = set()
    stmts = []
    for table in schema.tables:
        for col in table.user_columns:
            if col.foreign_key is not None:
                assert col.foreign_key.ref_table in declared, "FK references a later table"
        cols = ", ".join(c.render() for c in table.columns)
        stmts.append(f"CREATE TABLE {table.name} ({cols});")
        declared.add(table.name)
    return stmts


def gen_seed_data(schema: Schema, rows_per_table: int, seed: int) -> list[str]:
    """INSERT statements seeding every table.

    IDs are assigned 1..n, VERS starts at 0, FK columns sample from the
    parent's already-recorded key values, and values for parent key
    columns are logged as they are produced.  Also fills
    ``schema.inserted_keys`` / ``schema.seed_values`` in place.
    """
    if rows_per_table < 1:
        raise ValueError("rows_per_table must be >= 1")
    rng = random.Random(seed)
    stmts: list[str] = []
    # Values recorded per (table, column) for FK sampling.
    recorded: dict[tuple[str, str], list] = {}
    for table in schema.tables:
        schema.inserted_keys[table.name] = []
        schema.seed_values[table.name] = []
        used_unique: dict[str, set] = {c.name: set() for c in table.user_columns if c.unique or c.primary_key}
        rows = []
        for rid in range(1, rows_per_table + 1):
            row: dict = {ID_COLUMN: rid, VERS_COLUMN: 0}
            for col in table.user_columns:
                if col.foreign_key is not None:
                    pool = recorded.get((col.foreign_key.ref_table, col.foreign_key.ref_column), [])
                    row[col.name] = rng.choice(pool) if pool else None
                elif col.auto_increment:
                    row[col.name] = rid
                elif col.primary_key or col.unique:
                    value = random_value(rng, col.datatype)
                    attempt = 0
                    while value in used_unique[col.name]:
                        value = random_value(rng, col.datatype)
                        attempt += 1
                        if attempt > 64:  # tiny BOOLEAN/TEXT domains
                            value = rid if col.datatype == INT else f"{value}{rid}"
                            break
                    used_unique[col.name].add(value)
                    row[col.name] = value
                else:
                    row[col.name] = random_value(rng, col.datatype)
            rows.append(row)
            schema.inserted_keys[table.name].append(rid)
            schema.seed_values[table.name].append(dict(row))
            for col in table.user_columns:
                if col.primary_key or col.unique:
                    recorded.setdefault((table.name, col.name), []).append(row[col.name])
        col_names = [c.name for c in table.columns]
        tuples = ", ".join(
            "(" + ", ".join(render_literal(r[c]) for c in col_names) + ")" for r in rows
        )
        stmts.append(f"INSERT INTO {table.name} ({', '.join(col_names)}) VALUES {tuples};")
    return stmts
