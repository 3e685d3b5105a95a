"""Constraint extraction from anomaly patterns.

A pattern decomposes into three constraint families that together guide
test-case generation:

- statement-type: per-transaction counts of reads, writes, rollbacks and
  commits;
- data-access: which (variable, version) each read/write touches, keyed by
  (txn, intra-transaction index);
- schedule order: the global interleaving as a sequence of txn ids.

Extraction is pure structure processing; the triple determines the source
pattern up to variable renaming (see ``reconstruct_pattern``).
"""

from __future__ import annotations

from dataclasses import dataclass

from .patterns import AnomalyPattern, OpKind, PatternOp


@dataclass(frozen=True)
class StmtTypeConstraint:
    """Counts of read/write/rollback/commit statements for one txn."""

    txn: int
    n_reads: int
    n_writes: int
    n_rollbacks: int
    n_commits: int

    @property
    def total(self) -> int:
        return self.n_reads + self.n_writes + self.n_rollbacks + self.n_commits


@dataclass(frozen=True)
class OpHandle:
    """Addresses a pattern op by transaction and 1-based position within it.

    Intra-transaction indices count all op kinds, including commit/abort,
    so a handle and a schedule position are derivable from each other.
    """

    txn: int
    intra_index: int


@dataclass
class DataAccessConstraint:
    """OpHandle -> (variable, version) for every read/write op."""

    entries: dict[OpHandle, tuple[str, int]]


@dataclass
class ScheduleOrder:
    """Transaction id per pattern op, in pattern order."""

    seq: list[int]


def extract_stmt_type(pattern: AnomalyPattern) -> list[StmtTypeConstraint]:
    """One tuple per transaction; abort ops count as rollbacks."""
    counts: dict[int, list[int]] = {t: [0, 0, 0, 0] for t in pattern.txns}
    index = {OpKind.READ: 0, OpKind.WRITE: 1, OpKind.ABORT: 2, OpKind.COMMIT: 3}
    for op in pattern.ops:
        counts[op.txn][index[op.kind]] += 1
    return [StmtTypeConstraint(t, *counts[t]) for t in pattern.txns]


def extract_data_access(pattern: AnomalyPattern) -> DataAccessConstraint:
    """Map each read/write op to its (variable, version)."""
    entries: dict[OpHandle, tuple[str, int]] = {}
    intra: dict[int, int] = {}
    for op in pattern.ops:
        intra[op.txn] = intra.get(op.txn, 0) + 1
        if op.kind in (OpKind.READ, OpKind.WRITE):
            entries[OpHandle(op.txn, intra[op.txn])] = (op.var, op.version)
    return DataAccessConstraint(entries)


def extract_schedule(pattern: AnomalyPattern) -> ScheduleOrder:
    return ScheduleOrder([op.txn for op in pattern.ops])


def reconstruct_pattern(
    stmt_types: list[StmtTypeConstraint],
    data_access: DataAccessConstraint,
    schedule: ScheduleOrder,
) -> AnomalyPattern:
    """Reassemble the pattern the three constraint families came from.

    Used as the consistency oracle: a position holding (var, k) is the
    installing write iff k is one past the versions installed so far,
    otherwise a read; positions without a data-access entry are the txn's
    terminal, whose kind the statement-type tuple pins down.
    """
    by_txn = {c.txn: c for c in stmt_types}
    intra: dict[int, int] = {}
    installed: dict[str, int] = {}
    ops: list[PatternOp] = []
    for txn in schedule.seq:
        intra[txn] = intra.get(txn, 0) + 1
        handle = OpHandle(txn, intra[txn])
        if handle in data_access.entries:
            var, version = data_access.entries[handle]
            if version == installed.get(var, 0) + 1:
                installed[var] = version
                ops.append(PatternOp(OpKind.WRITE, txn, var, version))
            else:
                ops.append(PatternOp(OpKind.READ, txn, var, version))
        else:
            constraint = by_txn[txn]
            kind = OpKind.COMMIT if constraint.n_commits else OpKind.ABORT
            ops.append(PatternOp(kind, txn))
    return AnomalyPattern(id="", ops=ops)
