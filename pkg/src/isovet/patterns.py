"""Anomaly patterns: grammar, validation and the built-in catalog.

An anomaly pattern is a fully ordered sequence of read/write/commit/abort
operations over versioned variables, e.g. the lost-update pattern
``R1[x0]W2[x1]C2W1[x2]C1``.  Reads and writes carry a variable and a
version; versions count installed writes, so ``x0`` is the initial state
and ``x1``, ``x2`` are the first and second installed versions.

The built-in catalog holds the six classic anomalies plus forty extended
two-transaction/two-variable interleavings, each tagged with the isolation
levels at which the pattern must not occur.  The catalog is embedded as
data and re-validated on every load so transcription errors cannot survive
silently.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class PatternError(Exception):
    """Base class for pattern parsing/validation failures."""


class PatternSyntaxError(PatternError):
    """Raised for malformed pattern text."""


class PatternValidationError(PatternError):
    """Raised when a syntactically valid pattern breaks an invariant.

    ``op_index`` is the index of the first offending operation.
    """

    def __init__(self, message: str, op_index: int | None = None):
        super().__init__(message)
        self.op_index = op_index


class IsolationLevel(enum.IntEnum):
    """SQL isolation levels, ordered weakest to strongest."""

    RU = 1
    RC = 2
    RR = 3
    SER = 4

    @property
    def sql(self) -> str:
        return {
            IsolationLevel.RU: "READ UNCOMMITTED",
            IsolationLevel.RC: "READ COMMITTED",
            IsolationLevel.RR: "REPEATABLE READ",
            IsolationLevel.SER: "SERIALIZABLE",
        }[self]

    @classmethod
    def from_name(cls, name: str) -> "IsolationLevel":
        key = name.strip().upper().replace("-", " ").replace("_", " ")
        aliases = {
            "RU": cls.RU,
            "READ UNCOMMITTED": cls.RU,
            "RC": cls.RC,
            "READ COMMITTED": cls.RC,
            "RR": cls.RR,
            "REPEATABLE READ": cls.RR,
            "SER": cls.SER,
            "SERIALIZABLE": cls.SER,
        }
        if key not in aliases:
            raise ValueError(f"unknown isolation level {name!r}")
        return aliases[key]


ALL_LEVELS = frozenset(IsolationLevel)


class OpKind(enum.Enum):
    READ = "R"
    WRITE = "W"
    COMMIT = "C"
    ABORT = "A"


@dataclass(frozen=True)
class PatternOp:
    """One pattern operation.

    Reads and writes carry exactly one (var, version); commit/abort carry
    none.  ``txn`` is 1-based.
    """

    kind: OpKind
    txn: int
    var: str | None = None
    version: int | None = None

    def render(self) -> str:
        if self.kind in (OpKind.COMMIT, OpKind.ABORT):
            return f"{self.kind.value}{self.txn}"
        return f"{self.kind.value}{self.txn}[{self.var}{self.version}]"


@dataclass
class AnomalyPattern:
    """A parsed pattern plus the isolation levels it is disallowed at."""

    id: str
    ops: list[PatternOp]
    disallowed: frozenset[IsolationLevel] = frozenset()

    @property
    def txns(self) -> list[int]:
        return sorted({op.txn for op in self.ops})

    @property
    def variables(self) -> list[str]:
        return sorted({op.var for op in self.ops if op.var is not None})

    def render(self) -> str:
        return "".join(op.render() for op in self.ops)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnomalyPattern):
            return NotImplemented
        return self.id == other.id and self.ops == other.ops and self.disallowed == other.disallowed


_TOKEN_RE = re.compile(
    r"(?P<kind>[RWCA])(?P<txn>\d+)(?:\[(?P<var>[A-Za-z]+)(?P<version>\d+)\])?"
)


def parse_pattern(text: str, pattern_id: str = "") -> AnomalyPattern:
    """Parse pattern text like ``R1[x0]W2[x1]C2W1[x2]C1``.

    Whitespace between tokens is ignored.  Raises PatternSyntaxError on
    malformed token text and PatternValidationError when the op sequence
    breaks the pattern invariants (see ``validate_ops``).
    """
    stripped = re.sub(r"\s+", "", text)
    if not stripped:
        raise PatternSyntaxError("empty pattern")
    ops: list[PatternOp] = []
    pos = 0
    while pos < len(stripped):
        m = _TOKEN_RE.match(stripped, pos)
        if m is None:
            raise PatternSyntaxError(f"malformed pattern token at {stripped[pos:pos + 8]!r}")
        kind = OpKind(m.group("kind"))
        txn = int(m.group("txn"))
        var, version = m.group("var"), m.group("version")
        if kind in (OpKind.READ, OpKind.WRITE):
            if var is None:
                raise PatternSyntaxError(f"{kind.value}{txn} is missing its [var<version>] part")
            ops.append(PatternOp(kind, txn, var, int(version)))
        else:
            if var is not None:
                raise PatternSyntaxError(f"{kind.value}{txn} must not carry a variable")
            ops.append(PatternOp(kind, txn))
        pos = m.end()
    validate_ops(ops)
    return AnomalyPattern(id=pattern_id, ops=ops)


def format_pattern(pattern: AnomalyPattern) -> str:
    """Render a pattern back to its canonical text; inverse of parse_pattern."""
    return pattern.render()


def validate_ops(ops: list[PatternOp]) -> None:
    """Check the pattern invariants, raising PatternValidationError.

    - every transaction 1..T appears, each ending in exactly one C/A with
      no later ops;
    - txn indices are >= 1;
    - the versions installed per variable are exactly 1,2,3,... in op
      order, and a read of version k sees either 0 or a version some
      earlier write installed.
    """
    if not ops:
        raise PatternValidationError("pattern has no operations")
    terminated: dict[int, int] = {}
    installed: dict[str, int] = {}
    seen_txns: set[int] = set()
    for i, op in enumerate(ops):
        if op.txn < 1:
            raise PatternValidationError(f"transaction index {op.txn} < 1", i)
        if op.txn in terminated:
            raise PatternValidationError(
                f"op {op.render()} follows the terminal op of txn {op.txn}", i
            )
        seen_txns.add(op.txn)
        if op.kind in (OpKind.COMMIT, OpKind.ABORT):
            terminated[op.txn] = i
        elif op.kind is OpKind.WRITE:
            expected = installed.get(op.var, 0) + 1
            if op.version != expected:
                raise PatternValidationError(
                    f"write {op.render()} installs version {op.version}, expected {expected}", i
                )
            installed[op.var] = op.version
        else:  # READ
            if op.version != 0 and op.version > installed.get(op.var, 0):
                raise PatternValidationError(
                    f"read {op.render()} sees version {op.version} before it is installed", i
                )
    missing = seen_txns - set(terminated)
    if missing:
        raise PatternValidationError(
            f"transaction(s) {sorted(missing)} never commit or abort"
        )
    txns = sorted(seen_txns)
    if txns != list(range(1, len(txns) + 1)):
        raise PatternValidationError(f"transaction indices {txns} are not 1..{len(txns)}")


def is_violation(pattern: AnomalyPattern, level: IsolationLevel) -> bool:
    """True iff the pattern is disallowed at the given isolation level."""
    return level in pattern.disallowed


# ---------------------------------------------------------------------------
# Built-in catalog.
#
# One entry per line: id, pattern text, disallowed levels ("ALL" = all four).
# The first six are the classic anomalies; ext-1..ext-40 enumerate the
# two-transaction, two-variable interleavings with their disallowed levels.
# ---------------------------------------------------------------------------

_BUILTIN_CATALOG = """\
dirty-write\tW1[x1]W2[x2]C1C2\tALL
dirty-read\tW1[x1]R2[x1]A1C2\tRC,RR,SER
lost-update\tR1[x0]W2[x1]C2W1[x2]C1\tRR,SER
non-repeatable-read\tR1[x0]W2[x1]C2R1[x1]C1\tRR,SER
write-skew\tR1[x0]W2[x1]W2[y1]C2R1[y1]C1\tSER
read-skew\tR1[x0]R2[y0]W1[y1]W2[x1]C1C2\tSER
ext-1\tW1[x1]R2[x1]C1C2\tRC,RR,SER
ext-2\tW1[x1]C1R2[x1]C2\tRR
ext-3\tW1[x1]R2[x1]C2W1[x2]C1\tRC,RR,SER
ext-4\tW1[x1]W2[y1]W2[x2]W1[y2]C1C2\tALL
ext-5\tW1[x1]W2[y1]W1[y2]W2[x2]C1C2\tALL
ext-6\tW1[x1]W2[y1]W2[x2]C2W1[y2]C1\tALL
ext-7\tW1[x1]W2[y1]W1[y2]C1W2[x2]C2\tALL
ext-8\tW1[x1]W2[y1]W2[x2]R1[y1]C1C2\tALL
ext-9\tW1[x1]W2[y1]R1[y1]W2[x2]C1C2\tALL
ext-10\tW1[x1]W2[y1]W2[x2]C2R1[y1]C1\tALL
ext-11\tW1[x1]W2[y1]R1[y1]C1W2[x2]C2\tRC,RR,SER
ext-12\tW1[x1]R2[y0]W2[x2]W1[y1]C1C2\tALL
ext-13\tW1[x1]R2[y0]W1[y1]W2[x2]C1C2\tALL
ext-14\tW1[x1]R2[y0]W2[x2]C2W1[y1]C1\tALL
ext-15\tW1[x1]R2[y0]W1[y1]C1W2[x2]C2\tRR,SER
ext-16\tW1[x1]W2[y1]R2[x1]W1[y2]C1C2\tALL
ext-17\tW1[x1]W2[y1]W1[y2]R2[x1]C1C2\tALL
ext-18\tW1[x1]W2[y1]R2[x1]C2W1[y2]C1\tRC,RR,SER
ext-19\tW1[x1]W2[y1]W1[y2]C1R2[x1]C2\tALL
ext-20\tW1[x1]W2[y1]R2[x1]R1[y1]C1C2\tRC,RR,SER
ext-21\tW1[x1]W2[y1]R1[y1]R2[x1]C1C2\tRC,RR,SER
ext-22\tW1[x1]W2[y1]R2[x1]C2R1[y1]C1\tRC,RR,SER
ext-23\tW1[x1]W2[y1]R1[y1]C1R2[x1]C2\tRC,RR,SER
ext-24\tW1[x1]R2[y0]R2[x1]W1[y1]C1C2\tRC,RR,SER
ext-25\tW1[x1]R2[y0]W1[y1]R2[x1]C1C2\tRC,RR,SER
ext-26\tW1[x1]R2[y0]R2[x1]C2W1[y1]C1\tRC,RR,SER
ext-27\tW1[x1]R2[y0]W1[y1]C1R2[x1]C2\tRR,SER
ext-28\tR1[x0]W2[y1]W2[x1]W1[y2]C1C2\tRC,RR,SER
ext-29\tR1[x0]W2[y1]W1[y2]W2[x1]C1C2\tRC,RR,SER
ext-30\tR1[x0]W2[y1]W2[x1]C2W1[y2]C1\tRR,SER
ext-31\tR1[x0]W2[y1]W1[y2]C1W2[x1]C2\tALL
ext-32\tR1[x0]W2[y1]W2[x1]R1[y1]C1C2\tRC,RR,SER
ext-33\tR1[x0]W2[y1]R1[y1]W2[x1]C1C2\tRC,RR,SER
ext-34\tR1[x0]W2[y1]W2[x1]C2R1[y1]C1\tSER
ext-35\tR1[x0]W2[y1]R1[y1]C1W2[x1]C2\tRC,RR,SER
ext-36\tW1[x1]W2[y1]C2R1[y1]C1\tSER
ext-37\tR1[x0]R2[y0]W2[x1]W1[y1]C1C2\tSER
ext-38\tR1[x0]R2[y0]W1[y1]W2[x1]C1C2\tSER
ext-39\tR1[x0]R2[y0]W2[x1]C2W1[y1]C1\tSER
ext-40\tR1[x0]R2[y0]W1[y1]C1W2[x1]C2\tSER
"""


def _parse_levels(text: str) -> frozenset[IsolationLevel]:
    if text.strip().upper() == "ALL":
        return ALL_LEVELS
    return frozenset(IsolationLevel.from_name(part) for part in text.split(",") if part.strip())


def parse_catalog_text(text: str, source: str = "<catalog>") -> list[AnomalyPattern]:
    """Parse catalog lines ``<id> TAB <pattern> TAB <levels|ALL>``.

    ``#`` lines and blank lines are skipped.  Each pattern is validated on
    load; catalog-wide invariants are checked separately by
    ``validate_catalog``.
    """
    patterns: list[AnomalyPattern] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise PatternSyntaxError(f"{source}:{lineno}: expected 3 tab-separated fields")
        pattern_id, body, levels = (p.strip() for p in parts)
        try:
            pattern = parse_pattern(body, pattern_id=pattern_id)
        except PatternError as exc:
            raise type(exc)(f"{source}:{lineno} ({pattern_id}): {exc}") from exc
        patterns.append(replace_disallowed(pattern, _parse_levels(levels)))
    return patterns


def replace_disallowed(pattern: AnomalyPattern, levels: frozenset[IsolationLevel]) -> AnomalyPattern:
    return AnomalyPattern(id=pattern.id, ops=pattern.ops, disallowed=levels)


def validate_catalog(patterns: list[AnomalyPattern]) -> None:
    """Catalog-wide invariants, enforced on every load.

    Round trips, gapless installed versions (already enforced per pattern),
    exactly two transactions and at most two variables per pattern, no
    empty disallowed set, and unique ids.
    """
    seen: set[str] = set()
    for p in patterns:
        if p.id in seen:
            raise PatternValidationError(f"duplicate catalog id {p.id}")
        seen.add(p.id)
        reparsed = parse_pattern(format_pattern(p), pattern_id=p.id)
        if reparsed.ops != p.ops:
            raise PatternValidationError(f"{p.id}: format/parse round trip changed the ops")
        if p.txns != [1, 2]:
            raise PatternValidationError(f"{p.id}: catalog patterns use exactly 2 transactions")
        if len(p.variables) > 2:
            raise PatternValidationError(f"{p.id}: catalog patterns use at most 2 variables")
        if not p.disallowed:
            raise PatternValidationError(f"{p.id}: empty disallowed set")


def load_builtin_catalog() -> list[AnomalyPattern]:
    """The 46 built-in patterns, validated on load."""
    patterns = parse_catalog_text(_BUILTIN_CATALOG, source="<builtin>")
    if len(patterns) != 46:
        raise PatternValidationError(f"builtin catalog has {len(patterns)} patterns, expected 46")
    validate_catalog(patterns)
    return patterns


def load_catalog_file(path) -> list[AnomalyPattern]:
    """Load extra patterns from a catalog file (same line format)."""
    with open(path, "r", encoding="utf-8") as fh:
        patterns = parse_catalog_text(fh.read(), source=str(path))
    validate_catalog(patterns)
    return patterns


def catalog_by_id(patterns: list[AnomalyPattern]) -> dict[str, AnomalyPattern]:
    return {p.id: p for p in patterns}
