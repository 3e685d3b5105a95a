"""SQL front end for the reference engine.

Hand-rolled tokenizer and recursive-descent parser for the dialect the
toolkit emits: CREATE TABLE, INSERT .. VALUES, UPDATE, DELETE, SELECT with
one optional JOIN / ORDER BY / LIMIT, BEGIN / START TRANSACTION [WITH
CONSISTENT SNAPSHOT], COMMIT, ROLLBACK and SET SESSION TRANSACTION
ISOLATION LEVEL.  WHERE expressions cover comparisons, AND/OR/NOT,
IN (list) and IN (SELECT ...) with derived tables, plus integer
arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..patterns import IsolationLevel


class SqlError(Exception):
    error_class = "SyntaxError"


class SqlSyntaxError(SqlError):
    error_class = "SyntaxError"


class SqlSemanticError(SqlError):
    error_class = "SemanticError"


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><>|!=|<=|>=|[(),;.*=<>+\-])
    """,
    re.VERBOSE,
)


def tokenize(sql: str) -> list[str]:
    tokens: list[str] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise SqlSyntaxError(f"unexpected character {sql[pos]!r} at offset {pos}")
        if m.lastgroup != "ws":
            tokens.append(m.group())
        pos = m.end()
    return tokens


# --- expression AST -------------------------------------------------------


@dataclass
class Literal:
    value: object


@dataclass
class ColumnRef:
    table: str | None
    name: str


@dataclass
class BinOp:
    op: str
    left: object
    right: object


@dataclass
class NotOp:
    operand: object


@dataclass
class InList:
    expr: object
    items: list


@dataclass
class InSelect:
    expr: object
    select: "Select"


# --- statement AST --------------------------------------------------------


@dataclass
class ColumnSpec:
    name: str
    datatype: str
    primary_key: bool = False
    not_null: bool = False
    unique: bool = False
    auto_increment: bool = False
    fk_table: str | None = None
    fk_column: str | None = None


@dataclass
class CreateTable:
    table: str
    columns: list[ColumnSpec]


@dataclass
class Insert:
    table: str
    columns: list[str]
    rows: list[list[object]]  # list of expression lists


@dataclass
class Update:
    table: str
    sets: list[tuple[str, object]]
    where: object | None


@dataclass
class Delete:
    table: str
    where: object | None


@dataclass
class Join:
    join_type: str  # INNER/LEFT/RIGHT/CROSS
    table: str
    on_left: ColumnRef | None
    on_right: ColumnRef | None


@dataclass
class Select:
    projection: list  # ColumnRef entries, or ["*"]
    table: str | None
    subquery: "Select | None" = None
    alias: str | None = None
    join: Join | None = None
    where: object | None = None
    order_by: ColumnRef | None = None
    order_desc: bool = False
    limit: int | None = None


@dataclass
class Begin:
    consistent_snapshot: bool = False


@dataclass
class Commit:
    pass


@dataclass
class Rollback:
    pass


@dataclass
class SetIsolation:
    level: IsolationLevel


class _Parser:
    def __init__(self, tokens: list[str], sql: str):
        self.tokens = tokens
        self.pos = 0
        self.sql = sql

    # -- token helpers

    def peek(self, offset: int = 0) -> str | None:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def peek_kw(self, offset: int = 0) -> str | None:
        tok = self.peek(offset)
        return tok.upper() if tok is not None else None

    def next(self) -> str:
        if self.pos >= len(self.tokens):
            raise SqlSyntaxError(f"unexpected end of statement: {self.sql!r}")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, *keywords: str) -> str:
        tok = self.next()
        if tok.upper() not in keywords:
            raise SqlSyntaxError(f"expected {'/'.join(keywords)}, got {tok!r} in {self.sql!r}")
        return tok.upper()

    def accept(self, *keywords: str) -> bool:
        if self.peek_kw() in keywords:
            self.pos += 1
            return True
        return False

    def name(self) -> str:
        tok = self.next()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", tok):
            raise SqlSyntaxError(f"expected identifier, got {tok!r}")
        return tok

    def done(self) -> bool:
        while self.peek() == ";":
            self.pos += 1
        return self.pos >= len(self.tokens)

    # -- statements

    def statement(self):
        kw = self.peek_kw()
        if kw == "CREATE":
            return self.create_table()
        if kw == "INSERT":
            return self.insert()
        if kw == "UPDATE":
            return self.update()
        if kw == "DELETE":
            return self.delete()
        if kw == "SELECT":
            return self.select()
        if kw == "BEGIN":
            self.next()
            return Begin()
        if kw == "START":
            self.next()
            self.expect("TRANSACTION")
            cs = False
            if self.accept("WITH"):
                self.expect("CONSISTENT")
                self.expect("SNAPSHOT")
                cs = True
            return Begin(consistent_snapshot=cs)
        if kw == "COMMIT":
            self.next()
            return Commit()
        if kw == "ROLLBACK":
            self.next()
            return Rollback()
        if kw == "SET":
            return self.set_isolation()
        raise SqlSyntaxError(f"unsupported statement: {self.sql!r}")

    def create_table(self):
        self.expect("CREATE")
        self.expect("TABLE")
        table = self.name()
        self.expect("(")
        columns: list[ColumnSpec] = []
        while True:
            cname = self.name()
            datatype = self.next().upper()
            if datatype not in ("INT", "INTEGER", "TEXT", "BOOLEAN"):
                raise SqlSyntaxError(f"unsupported column type {datatype}")
            spec = ColumnSpec(cname, "INT" if datatype == "INTEGER" else datatype)
            while self.peek() not in (",", ")", None):
                kw = self.peek_kw()
                if kw == "PRIMARY":
                    self.next()
                    self.expect("KEY")
                    spec.primary_key = True
                    spec.not_null = True
                elif kw == "NOT":
                    self.next()
                    self.expect("NULL")
                    spec.not_null = True
                elif kw == "UNIQUE":
                    self.next()
                    spec.unique = True
                elif kw == "AUTO_INCREMENT":
                    self.next()
                    spec.auto_increment = True
                elif kw == "REFERENCES":
                    self.next()
                    spec.fk_table = self.name()
                    self.expect("(")
                    spec.fk_column = self.name()
                    self.expect(")")
                elif kw == "FOREIGN":
                    self.next()
                    self.expect("KEY")
                    self.expect("REFERENCES")
                    spec.fk_table = self.name()
                    self.expect("(")
                    spec.fk_column = self.name()
                    self.expect(")")
                else:
                    raise SqlSyntaxError(f"unsupported column constraint {kw}")
            columns.append(spec)
            if not self.accept(","):
                break
        self.expect(")")
        return CreateTable(table, columns)

    def insert(self):
        self.expect("INSERT")
        self.expect("INTO")
        table = self.name()
        columns: list[str] = []
        if self.accept("("):
            while True:
                columns.append(self.name())
                if not self.accept(","):
                    break
            self.expect(")")
        self.expect("VALUES")
        rows = []
        while True:
            self.expect("(")
            row = []
            while True:
                row.append(self.expression())
                if not self.accept(","):
                    break
            self.expect(")")
            rows.append(row)
            if not self.accept(","):
                break
        return Insert(table, columns, rows)

    def update(self):
        self.expect("UPDATE")
        table = self.name()
        self.expect("SET")
        sets = []
        while True:
            col = self.name()
            self.expect("=")
            sets.append((col, self.expression()))
            if not self.accept(","):
                break
        where = self.expression() if self.accept("WHERE") else None
        return Update(table, sets, where)

    def delete(self):
        self.expect("DELETE")
        self.expect("FROM")
        table = self.name()
        where = self.expression() if self.accept("WHERE") else None
        return Delete(table, where)

    def select(self):
        self.expect("SELECT")
        projection: list = []
        if self.accept("*"):
            projection = ["*"]
        else:
            while True:
                projection.append(self.column_ref())
                if not self.accept(","):
                    break
        self.expect("FROM")
        subquery = None
        alias = None
        table = None
        if self.accept("("):
            subquery = self.select()
            self.expect(")")
            if self.accept("AS"):
                alias = self.name()
            elif re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", self.peek() or ";") and self.peek_kw() not in (
                "WHERE", "ORDER", "LIMIT", "INNER", "LEFT", "RIGHT", "CROSS", "JOIN",
            ):
                alias = self.name()
        else:
            table = self.name()
        join = None
        if self.peek_kw() in ("INNER", "LEFT", "RIGHT", "CROSS", "JOIN"):
            join_type = "INNER"
            if self.peek_kw() != "JOIN":
                join_type = self.next().upper()
                self.accept("OUTER")
            self.expect("JOIN")
            join_table = self.name()
            on_left = on_right = None
            if join_type != "CROSS":
                self.expect("ON")
                on_left = self.column_ref()
                self.expect("=")
                on_right = self.column_ref()
            join = Join(join_type, join_table, on_left, on_right)
        where = self.expression() if self.accept("WHERE") else None
        order_by = None
        order_desc = False
        if self.accept("ORDER"):
            self.expect("BY")
            order_by = self.column_ref()
            if self.accept("DESC"):
                order_desc = True
            else:
                self.accept("ASC")
        limit = None
        if self.accept("LIMIT"):
            tok = self.next()
            if not tok.isdigit():
                raise SqlSyntaxError(f"LIMIT expects a number, got {tok!r}")
            limit = int(tok)
        return Select(projection, table, subquery, alias, join, where, order_by, order_desc, limit)

    def set_isolation(self):
        self.expect("SET")
        self.accept("SESSION")
        self.expect("TRANSACTION")
        self.expect("ISOLATION")
        self.expect("LEVEL")
        words = [self.next().upper()]
        while self.peek() is not None and self.peek() != ";":
            words.append(self.next().upper())
        try:
            level = IsolationLevel.from_name(" ".join(words))
        except ValueError as exc:
            raise SqlSyntaxError(str(exc)) from exc
        return SetIsolation(level)

    # -- expressions (precedence: OR < AND < NOT < comparison/IN < additive < unary)

    def expression(self):
        return self.or_expr()

    def or_expr(self):
        left = self.and_expr()
        while self.accept("OR"):
            left = BinOp("OR", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.accept("AND"):
            left = BinOp("AND", left, self.not_expr())
        return left

    def not_expr(self):
        if self.accept("NOT"):
            return NotOp(self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        op = self.peek()
        if op in ("=", "<>", "!=", "<", "<=", ">", ">="):
            self.next()
            return BinOp("<>" if op == "!=" else op, left, self.additive())
        if self.peek_kw() == "IN":
            self.next()
            self.expect("(")
            if self.peek_kw() == "SELECT":
                inner = self.select()
                self.expect(")")
                return InSelect(left, inner)
            items = []
            while True:
                items.append(self.additive())
                if not self.accept(","):
                    break
            self.expect(")")
            return InList(left, items)
        return left

    def additive(self):
        left = self.unary()
        while self.peek() in ("+", "-") or self.peek() == "*":
            op = self.next()
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.peek() == "-":
            self.next()
            operand = self.unary()
            if isinstance(operand, Literal) and isinstance(operand.value, int):
                return Literal(-operand.value)
            return BinOp("-", Literal(0), operand)
        return self.primary()

    def primary(self):
        tok = self.peek()
        if tok is None:
            raise SqlSyntaxError(f"unexpected end of expression in {self.sql!r}")
        if tok == "(":
            self.next()
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.isdigit():
            self.next()
            return Literal(int(tok))
        if tok.startswith("'"):
            self.next()
            return Literal(tok[1:-1].replace("''", "'"))
        kw = tok.upper()
        if kw == "TRUE":
            self.next()
            return Literal(True)
        if kw == "FALSE":
            self.next()
            return Literal(False)
        if kw == "NULL":
            self.next()
            return Literal(None)
        return self.column_ref()

    def column_ref(self) -> ColumnRef:
        first = self.name()
        if self.peek() == ".":
            self.next()
            return ColumnRef(first, self.name())
        return ColumnRef(None, first)


def parse_statement(sql: str):
    """Parse one SQL statement; trailing semicolons are allowed."""
    tokens = tokenize(sql)
    parser = _Parser(tokens, sql)
    if parser.done():
        raise SqlSyntaxError("empty statement")
    stmt = parser.statement()
    if not parser.done():
        raise SqlSyntaxError(f"trailing tokens after statement: {parser.tokens[parser.pos:]!r}")
    return stmt


# --- expression evaluation -------------------------------------------------


def eval_expr(expr, row: dict, resolve_column, run_select=None):
    """Evaluate an expression against a row.

    ``resolve_column(ColumnRef, row)`` supplies column values;
    ``run_select`` evaluates nested selects to a list of first-column
    values.  SQL three-valued logic is collapsed: comparisons against NULL
    are false.
    """
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, ColumnRef):
        return resolve_column(expr, row)
    if isinstance(expr, NotOp):
        return not eval_expr(expr.operand, row, resolve_column, run_select)
    if isinstance(expr, InList):
        value = eval_expr(expr.expr, row, resolve_column, run_select)
        items = [eval_expr(i, row, resolve_column, run_select) for i in expr.items]
        return value is not None and value in items
    if isinstance(expr, InSelect):
        if run_select is None:
            raise SqlSemanticError("subqueries are not allowed in this context")
        value = eval_expr(expr.expr, row, resolve_column, run_select)
        return value is not None and value in run_select(expr.select)
    if isinstance(expr, BinOp):
        if expr.op == "AND":
            return bool(eval_expr(expr.left, row, resolve_column, run_select)) and bool(
                eval_expr(expr.right, row, resolve_column, run_select)
            )
        if expr.op == "OR":
            return bool(eval_expr(expr.left, row, resolve_column, run_select)) or bool(
                eval_expr(expr.right, row, resolve_column, run_select)
            )
        left = eval_expr(expr.left, row, resolve_column, run_select)
        right = eval_expr(expr.right, row, resolve_column, run_select)
        if expr.op in ("+", "-", "*"):
            if not isinstance(left, int) or not isinstance(right, int) or isinstance(left, bool) or isinstance(right, bool):
                raise SqlSemanticError(f"arithmetic on non-integer operands {left!r} {expr.op} {right!r}")
            return {"+": left + right, "-": left - right, "*": left * right}[expr.op]
        if left is None or right is None:
            return False
        if expr.op == "=":
            return left == right
        if expr.op == "<>":
            return left != right
        if type(left) is bool or type(right) is bool:
            raise SqlSemanticError("ordered comparison on BOOLEAN")
        if isinstance(left, int) != isinstance(right, int):
            raise SqlSemanticError(f"type mismatch in comparison: {left!r} vs {right!r}")
        return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[expr.op]
    raise SqlSemanticError(f"cannot evaluate expression {expr!r}")
