"""Two-phase detection: explicit failure classification, then dependency-
graph pattern matching over the execution trace.

Phase 1 classifies the run's terminal message: crashes and assertion
failures are reported directly; deadlocks, lock timeouts and syntax or
semantic errors discard the run (no valid trace); anything else proceeds.

Phase 2 builds the dependency graph from the trace's read/write records:

- ww: two transactions installed consecutive versions of one row;
- wr: a read observed exactly the version another transaction installed;
- rw: a read's observed version was later superseded by another
  transaction's install of the next version.

A catalog pattern disallowed at the session isolation level is reported
when (a) every edge of its dependency signature exists in the graph under
some (transaction, row) binding, and (b) the trace realizes the pattern's
full op sequence in order under that binding, including commit/abort
positions and outcomes.  Graph-path existence alone is only a candidate;
the temporal check confirms it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .compose import render_reproducer
from .executor import (
    DISCARD_CLASSES,
    EXPLICIT_CLASSES,
    ExecutionTrace,
    OpRecord,
)
from .patterns import AnomalyPattern, IsolationLevel, OpKind


class TraceCorrupt(Exception):
    pass


@dataclass(frozen=True)
class DependencyEdge:
    src: int
    dst: int
    kind: str  # ww | wr | rw
    table: str
    row_id: int
    src_vers: int
    dst_vers: int
    src_ts: int
    dst_ts: int

    def key(self) -> tuple:
        return (self.src, self.dst, self.kind, self.table, self.row_id, self.src_vers, self.dst_vers)


@dataclass
class TxnNode:
    txn: int
    begin_ts: int | None
    terminal_ts: int | None
    outcome: str  # Committed | Aborted | Undetermined


@dataclass
class DependencyGraph:
    nodes: dict[int, TxnNode] = field(default_factory=dict)
    edges: list[DependencyEdge] = field(default_factory=list)

    def has_edge(self, src: int, dst: int, kind: str, table: str | None = None, row_id: int | None = None) -> bool:
        for e in self.edges:
            if e.src == src and e.dst == dst and e.kind == kind:
                if table is not None and e.table != table:
                    continue
                if row_id is not None and e.row_id != row_id:
                    continue
                return True
        return False

    def rows_for(self, src: int, dst: int, kind: str) -> set[tuple[str, int]]:
        return {(e.table, e.row_id) for e in self.edges if e.src == src and e.dst == dst and e.kind == kind}


def _write_entries(trace: ExecutionTrace):
    """(seq, ts, txn, table, row, vers, subkind) per installed row version."""
    out = []
    for r in trace.records:
        if r.op_kind != "Write" or r.txn == 0 or r.is_error:
            continue
        for item in r.touched:
            table, row_id, vers = item[0], item[1], item[2]
            subkind = item[3] if len(item) > 3 else "update"
            if vers < 0:
                raise TraceCorrupt(f"negative version in record {r.global_seq}")
            out.append((r.global_seq, r.timestamp, r.txn, table, row_id, vers, subkind))
    return out


def _read_entries(trace: ExecutionTrace):
    out = []
    for r in trace.records:
        if r.op_kind != "Read" or r.txn == 0 or r.is_error:
            continue
        for item in r.touched:
            table, row_id, vers = item[0], item[1], item[2]
            out.append((r.global_seq, r.timestamp, r.txn, table, row_id, vers))
    return out


def build_graph(trace: ExecutionTrace) -> DependencyGraph:
    """Dependency graph over the trace's scheduled transactions."""
    graph = DependencyGraph()
    for txn, outcome in sorted(trace.final_outcomes.items()):
        records = trace.records_for(txn)
        begin_ts = records[0].timestamp if records else None
        terminal_ts = None
        for r in records:
            if r.op_kind in ("Commit", "Rollback"):
                terminal_ts = r.timestamp
        graph.nodes[txn] = TxnNode(txn, begin_ts, terminal_ts, outcome)

    writes = _write_entries(trace)
    reads = _read_entries(trace)
    edges: dict[tuple, DependencyEdge] = {}

    by_row_writes: dict[tuple[str, int], list] = {}
    for w in writes:
        by_row_writes.setdefault((w[3], w[4]), []).append(w)

    # ww: consecutive installed versions by different transactions.
    for (table, row_id), ws in sorted(by_row_writes.items()):
        for a in ws:
            for b in ws:
                if a is b:
                    continue
                if b[5] == a[5] + 1 and a[2] != b[2] and a[1] < b[1]:
                    edge = DependencyEdge(a[2], b[2], "ww", table, row_id, a[5], b[5], a[1], b[1])
                    edges.setdefault(edge.key(), edge)

    # wr: the read observed the version this write installed.  With
    # duplicate version numbers (an aborted install re-used), the nearest
    # preceding install wins.
    for rd in reads:
        _, r_ts, r_txn, table, row_id, r_vers = rd
        candidates = [
            w for w in by_row_writes.get((table, row_id), []) if w[5] == r_vers and w[1] < r_ts
        ]
        if not candidates:
            continue
        w = max(candidates, key=lambda w: w[1])
        if w[2] == r_txn:
            continue
        edge = DependencyEdge(w[2], r_txn, "wr", table, row_id, w[5], r_vers, w[1], r_ts)
        edges.setdefault(edge.key(), edge)

    # rw: the read's version was superseded afterwards by another txn.
    for rd in reads:
        _, r_ts, r_txn, table, row_id, r_vers = rd
        for w in by_row_writes.get((table, row_id), []):
            if w[5] == r_vers + 1 and w[2] != r_txn and r_ts < w[1]:
                edge = DependencyEdge(r_txn, w[2], "rw", table, row_id, r_vers, w[5], r_ts, w[1])
                edges.setdefault(edge.key(), edge)

    graph.edges = [edges[k] for k in sorted(edges)]
    return graph


# --- signatures -------------------------------------------------------------


@dataclass(frozen=True)
class SignatureEdge:
    src_txn: int  # pattern txn index
    dst_txn: int
    kind: str
    var: str


@dataclass
class PatternSignature:
    pattern: AnomalyPattern
    edges: frozenset[SignatureEdge]

    @property
    def template(self) -> list:
        return self.pattern.ops


def derive_signature(pattern: AnomalyPattern) -> PatternSignature:
    """Dependency edges implied by the pattern's version annotations."""
    installer: dict[tuple[str, int], int] = {}
    for op in pattern.ops:
        if op.kind is OpKind.WRITE:
            installer[(op.var, op.version)] = op.txn
    edges: set[SignatureEdge] = set()
    for op in pattern.ops:
        if op.kind is OpKind.WRITE and op.version >= 2:
            prev = installer.get((op.var, op.version - 1))
            if prev is not None and prev != op.txn:
                edges.add(SignatureEdge(prev, op.txn, "ww", op.var))
        if op.kind is OpKind.READ:
            if op.version >= 1:
                writer = installer.get((op.var, op.version))
                if writer is not None and writer != op.txn:
                    edges.add(SignatureEdge(writer, op.txn, "wr", op.var))
            nxt = installer.get((op.var, op.version + 1))
            if nxt is not None and nxt != op.txn:
                edges.add(SignatureEdge(op.txn, nxt, "rw", op.var))
    return PatternSignature(pattern, frozenset(edges))


# --- matching ---------------------------------------------------------------


@dataclass
class Match:
    pattern_id: str
    txn_binding: dict[int, int]  # pattern txn -> trace txn
    var_binding: dict[str, tuple[str, int]]  # pattern var -> (table, row)
    record_seqs: list[int]  # global_seq per pattern op, in order

    def dedup_key(self) -> tuple:
        return (self.pattern_id, tuple(sorted(self.txn_binding.items())))


def _touch_matches(record: OpRecord, table: str, row_id: int, vers: int) -> bool:
    for item in record.touched:
        if item[0] == table and item[1] == row_id and item[2] == vers:
            return True
    return False


def _realize_template(
    pattern: AnomalyPattern,
    trace: ExecutionTrace,
    txn_binding: dict[int, int],
    var_binding: dict[str, tuple[str, int]],
    offsets: dict[str, int],
) -> list[int] | None:
    """Walk the trace for records realizing the pattern ops in order.

    Pattern version k maps to stored version k + offset(var); offset -1
    covers variables whose row is created by the pattern's first write
    (an INSERT installs stored version 0).
    """
    records = trace.records
    pos = 0
    seqs: list[int] = []
    for op in pattern.ops:
        want_txn = txn_binding[op.txn]
        found = None
        for i in range(pos, len(records)):
            r = records[i]
            if r.txn != want_txn or r.is_error:
                continue
            if op.kind is OpKind.COMMIT:
                if r.op_kind == "Commit" and trace.final_outcomes.get(want_txn) == "Committed":
                    found = i
                    break
            elif op.kind is OpKind.ABORT:
                if r.op_kind == "Rollback" and trace.final_outcomes.get(want_txn) == "Aborted":
                    found = i
                    break
            elif op.kind is OpKind.READ:
                if r.op_kind != "Read":
                    continue
                table, row_id = var_binding[op.var]
                if _touch_matches(r, table, row_id, op.version + offsets[op.var]):
                    found = i
                    break
            else:  # WRITE
                if r.op_kind != "Write":
                    continue
                table, row_id = var_binding[op.var]
                if _touch_matches(r, table, row_id, op.version + offsets[op.var]):
                    found = i
                    break
        if found is None:
            return None
        seqs.append(records[found].global_seq)
        pos = found + 1
    return seqs


def _candidate_rows(
    signature: PatternSignature,
    graph: DependencyGraph,
    trace: ExecutionTrace,
    txn_binding: dict[int, int],
    var: str,
) -> list[tuple[str, int]]:
    """Rows each signature edge on ``var`` supports, intersected; for a
    variable with no edges, rows written by its writers."""
    var_edges = [e for e in signature.edges if e.var == var]
    if var_edges:
        sets = []
        for e in var_edges:
            sets.append(graph.rows_for(txn_binding[e.src_txn], txn_binding[e.dst_txn], e.kind))
        rows = set.intersection(*sets) if sets else set()
        return sorted(rows)
    writer_txns = {
        txn_binding[op.txn]
        for op in signature.pattern.ops
        if op.kind is OpKind.WRITE and op.var == var
    }
    rows = set()
    for r in trace.records:
        if r.op_kind == "Write" and r.txn in writer_txns and not r.is_error:
            for item in r.touched:
                rows.add((item[0], item[1]))
    return sorted(rows)


def _var_offsets(pattern: AnomalyPattern) -> dict[str, list[int]]:
    """Version offsets to try per variable: 0 for pre-existing rows, and
    also -1 when the variable's first op is its first write (insert-realizable)."""
    first_op: dict[str, object] = {}
    for op in pattern.ops:
        if op.var is not None and op.var not in first_op:
            first_op[op.var] = op
    out = {}
    for var, op in first_op.items():
        if op.kind is OpKind.WRITE and op.version == 1:
            out[var] = [0, -1]
        else:
            out[var] = [0]
    return out


def match(graph: DependencyGraph, trace: ExecutionTrace, signature: PatternSignature) -> Match | None:
    """First match of the signature in the graph + trace, or None."""
    matches = match_all(graph, trace, signature)
    return matches[0] if matches else None


def match_all(graph: DependencyGraph, trace: ExecutionTrace, signature: PatternSignature) -> list[Match]:
    pattern = signature.pattern
    trace_txns = sorted(t for t in trace.final_outcomes if t != 0)
    pattern_txns = pattern.txns
    if len(trace_txns) < len(pattern_txns):
        return []
    out: list[Match] = []
    seen_keys: set[tuple] = set()
    offsets_by_var = _var_offsets(pattern)
    for assignment in _injective_assignments(pattern_txns, trace_txns):
        txn_binding = dict(zip(pattern_txns, assignment))
        if not all(
            graph.has_edge(txn_binding[e.src_txn], txn_binding[e.dst_txn], e.kind)
            for e in signature.edges
        ):
            continue
        variables = pattern.variables
        candidates = [
            _candidate_rows(signature, graph, trace, txn_binding, var) for var in variables
        ]
        if any(not c for c in candidates):
            continue
        for rows in _product_distinct(candidates):
            var_binding = dict(zip(variables, rows))
            if not all(
                graph.has_edge(
                    txn_binding[e.src_txn], txn_binding[e.dst_txn], e.kind,
                    table=var_binding[e.var][0], row_id=var_binding[e.var][1],
                )
                for e in signature.edges
            ):
                continue
            for offsets in _offset_combos(variables, offsets_by_var):
                seqs = _realize_template(pattern, trace, txn_binding, var_binding, offsets)
                if seqs is not None:
                    m = Match(pattern.id, txn_binding, var_binding, seqs)
                    if m.dedup_key() not in seen_keys:
                        seen_keys.add(m.dedup_key())
                        out.append(m)
                    break
    return out


def _injective_assignments(pattern_txns: list[int], trace_txns: list[int]):
    def rec(i: int, used: set, acc: list):
        if i == len(pattern_txns):
            yield list(acc)
            return
        for t in trace_txns:
            if t in used:
                continue
            used.add(t)
            acc.append(t)
            yield from rec(i + 1, used, acc)
            acc.pop()
            used.discard(t)

    yield from rec(0, set(), [])


def _product_distinct(candidates: list[list]):
    def rec(i: int, acc: list):
        if i == len(candidates):
            yield list(acc)
            return
        for item in candidates[i]:
            if item in acc:
                continue
            acc.append(item)
            yield from rec(i + 1, acc)
            acc.pop()

    yield from rec(0, [])


def _offset_combos(variables: list[str], offsets_by_var: dict[str, list[int]]):
    def rec(i: int, acc: dict):
        if i == len(variables):
            yield dict(acc)
            return
        var = variables[i]
        for off in offsets_by_var[var]:
            acc[var] = off
            yield from rec(i + 1, acc)
            del acc[var]

    yield from rec(0, {})


# --- detection --------------------------------------------------------------


@dataclass
class BugReport:
    phase: str  # Explicit | Implicit
    pattern_id: str | None
    isolation: IsolationLevel
    backend: str
    failure_class: str | None = None
    message: str | None = None
    var_binding: dict = field(default_factory=dict)
    txn_binding: dict = field(default_factory=dict)
    record_seqs: list[int] = field(default_factory=list)
    reproducer: str = ""

    def summary(self) -> str:
        if self.phase == "Explicit":
            return f"[explicit/{self.failure_class}] {self.message} @ {self.isolation.name} on {self.backend}"
        binding = ", ".join(
            f"{var}->{table}#{row}" for var, (table, row) in sorted(self.var_binding.items())
        )
        return f"[implicit/{self.pattern_id}] @ {self.isolation.name} ({binding}) on {self.backend}"


def detect(
    trace: ExecutionTrace,
    level: IsolationLevel,
    catalog: list[AnomalyPattern],
    backend: str = "reference-engine",
) -> list[BugReport]:
    """Run both detection phases over one trace."""
    reproducer = render_reproducer(trace.case) if trace.case is not None else ""
    if trace.terminal_class is not None:
        if trace.terminal_class in EXPLICIT_CLASSES:
            return [
                BugReport(
                    phase="Explicit",
                    pattern_id=None,
                    isolation=level,
                    backend=backend,
                    failure_class=trace.terminal_class,
                    message=trace.terminal_message,
                    reproducer=reproducer,
                )
            ]
        if trace.terminal_class in DISCARD_CLASSES:
            return []
    graph = build_graph(trace)
    reports: list[BugReport] = []
    for pattern in catalog:
        if level not in pattern.disallowed:
            continue
        signature = derive_signature(pattern)
        for m in match_all(graph, trace, signature):
            reports.append(
                BugReport(
                    phase="Implicit",
                    pattern_id=pattern.id,
                    isolation=level,
                    backend=backend,
                    var_binding=m.var_binding,
                    txn_binding=m.txn_binding,
                    record_seqs=m.record_seqs,
                    reproducer=reproducer,
                )
            )
    return reports
