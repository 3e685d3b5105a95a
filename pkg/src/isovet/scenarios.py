"""Scripted reproducer scenarios for known isolation-violation shapes.

Each scenario is a replayable script paired with the engine fault that
makes the violation observable, the isolation level to detect at, and the
catalog pattern family the detector is expected to name.  On a faults-off
engine every scenario must come back clean; with its fault switched on it
must yield exactly one deduped implicit report.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import FaultSwitch


@dataclass(frozen=True)
class Scenario:
    name: str
    script: str
    fault: FaultSwitch | None
    level_name: str
    expected_patterns: tuple[str, ...]  # any of these ids counts as the family


LOST_UPDATE_RR = Scenario(
    name="lost-update-rr",
    script="""\
/*init*/ CREATE TABLE t (ID INT, VERS INT, c0 INT);
/*init*/ INSERT INTO t (ID, VERS, c0) VALUES (1, 0, 1000);
/*txn 1*/ SET SESSION TRANSACTION ISOLATION LEVEL REPEATABLE READ;
/*txn 1*/ START TRANSACTION;
/*txn 2*/ SET SESSION TRANSACTION ISOLATION LEVEL REPEATABLE READ;
/*txn 2*/ START TRANSACTION;
/*txn 1*/ SELECT * FROM t;
/*txn 2*/ UPDATE t SET c0 = 900 WHERE ID = 1;
/*txn 2*/ COMMIT;
/*txn 1*/ UPDATE t SET c0 = 1100 WHERE ID = 1;
/*txn 1*/ COMMIT;
""",
    fault=FaultSwitch.ALLOW_LOST_UPDATE,
    level_name="RR",
    expected_patterns=("lost-update",),
)

DIRTY_READ_RC = Scenario(
    name="dirty-read-rc",
    script="""\
/*init*/ CREATE TABLE tYv10enE (c0 INT PRIMARY KEY);
/*init*/ INSERT INTO tYv10enE (c0) VALUES (10989748), (-1404643822);
/*txn 1*/ BEGIN;
/*txn 1*/ SET SESSION TRANSACTION ISOLATION LEVEL READ COMMITTED;
/*txn 2*/ BEGIN;
/*txn 2*/ SET SESSION TRANSACTION ISOLATION LEVEL READ COMMITTED;
/*txn 1*/ BEGIN;
/*txn 2*/ BEGIN;
/*txn 1*/ UPDATE tYv10enE SET c0 = 0 WHERE c0 = 10989748;
/*txn 2*/ SELECT * FROM tYv10enE WHERE (c0 >= 0);
/*txn 1*/ ROLLBACK;
/*txn 2*/ COMMIT;
""",
    fault=FaultSwitch.ALLOW_DIRTY_READ,
    level_name="RC",
    expected_patterns=("dirty-read",),
)

STALE_SNAPSHOT_RR = Scenario(
    name="stale-snapshot-rr",
    script="""\
/*init*/ CREATE TABLE t (ID INT, c0 INT);
/*init*/ INSERT INTO t VALUES (1, 1), (2, 2);
/*txn 1*/ SET SESSION TRANSACTION ISOLATION LEVEL REPEATABLE READ;
/*txn 1*/ START TRANSACTION WITH CONSISTENT SNAPSHOT;
/*txn 2*/ SET SESSION TRANSACTION ISOLATION LEVEL REPEATABLE READ;
/*txn 2*/ START TRANSACTION WITH CONSISTENT SNAPSHOT;
/*txn 1*/ UPDATE t SET c0 = 10 WHERE (ID = 1);
/*txn 1*/ COMMIT;
/*txn 2*/ SELECT * FROM t;
/*txn 2*/ COMMIT;
""",
    fault=FaultSwitch.SNAPSHOT_SEES_LATER_COMMITS,
    level_name="RR",
    expected_patterns=("ext-2",),
)

SERIAL_INSERT_READ_SER = Scenario(
    name="serial-insert-read-ser",
    script="""\
/*init*/ CREATE TABLE t (c0 INT PRIMARY KEY AUTO_INCREMENT, c1 INT);
/*txn 1*/ SET SESSION TRANSACTION ISOLATION LEVEL SERIALIZABLE;
/*txn 2*/ SET SESSION TRANSACTION ISOLATION LEVEL SERIALIZABLE;
/*txn 1*/ BEGIN;
/*txn 2*/ BEGIN;
/*txn 1*/ INSERT INTO t(c1) VALUES(1);
/*txn 2*/ INSERT INTO t(c1) VALUES(2), (3);
/*txn 2*/ COMMIT;
/*txn 1*/ SELECT * FROM t;
/*txn 1*/ COMMIT;
""",
    fault=FaultSwitch.SERIALIZABLE_AS_SNAPSHOT,
    level_name="SER",
    expected_patterns=("ext-36",),
)

# The subquery-update shape: two concurrent inserters, then an update whose
# WHERE is driven by a nested select over the shared table.  Exercises the
# executor and engine on statements the random generator never produces.
SUBQUERY_UPDATE_SER = Scenario(
    name="subquery-update-ser",
    script="""\
/*init*/ CREATE TABLE t1 (c0 INT);
/*init*/ CREATE TABLE t2 (c0 INT PRIMARY KEY AUTO_INCREMENT, c1 INT);
/*init*/ INSERT INTO t1(c0) VALUES (1),(2),(3);
/*txn 1*/ SET SESSION TRANSACTION ISOLATION LEVEL SERIALIZABLE;
/*txn 2*/ SET SESSION TRANSACTION ISOLATION LEVEL SERIALIZABLE;
/*txn 1*/ BEGIN;
/*txn 2*/ BEGIN;
/*txn 1*/ INSERT INTO t2(c1) VALUES(1);
/*txn 2*/ INSERT INTO t2(c1) VALUES(2), (3);
/*txn 2*/ COMMIT;
/*txn 1*/ UPDATE t1 SET c0 = 10 WHERE c0 in (SELECT c1 FROM (SELECT * FROM t2 ORDER BY c0 LIMIT 2) AS t);
/*txn 1*/ COMMIT;
""",
    fault=FaultSwitch.SERIALIZABLE_AS_SNAPSHOT,
    level_name="SER",
    expected_patterns=(),
)

SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        LOST_UPDATE_RR,
        DIRTY_READ_RC,
        STALE_SNAPSHOT_RR,
        SERIAL_INSERT_READ_SER,
        SUBQUERY_UPDATE_SER,
    )
}
