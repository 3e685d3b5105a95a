"""Campaign orchestration: generate -> execute -> detect, in a loop.

A campaign cycles through the selected isolation levels and, within each
level, round-robins over the patterns disallowed there, so every pattern
gets coverage within a bounded budget.  Each case runs against a fresh
engine instance (or an externally registered adapter factory), so a fixed
seed plus a fixed config reproduces the same cases, traces and reports
byte for byte.  Wall-clock timing is kept out of the persisted artifacts
for exactly that reason.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .compose import (
    ComposeConfig,
    GenerationError,
    TransactionCase,
    build_case,
    derive_seed,
    parse_reproducer,
)
from .detector import BugReport, detect
from .engine import Engine, FaultSwitch
from .executor import DbAdapter, EngineAdapter, ExecutionTrace, render_trace, run_schedule
from .patterns import AnomalyPattern, IsolationLevel, load_builtin_catalog, load_catalog_file
from .schema import SchemaGenConfig, emit_ddl, gen_schema, gen_seed_data
from .sqlgen import gen_statement_pool


class TargetUnreachable(Exception):
    pass


# Factories for external targets, keyed by endpoint scheme.  Deployments
# register their own adapter factory; nothing is bundled.
EXTERNAL_ADAPTERS: dict[str, object] = {}


@dataclass
class CampaignConfig:
    target: str = "engine"  # "engine" | "external:<endpoint>"
    faults: set[FaultSwitch] = field(default_factory=set)
    levels: list[IsolationLevel] = field(default_factory=lambda: [IsolationLevel.RR])
    pattern_ids: list[str] | None = None  # None -> all disallowed at the level
    cases: int | None = 100
    duration_s: float | None = None
    seed: int = 0
    workers: int = 1
    rows_min: int = 3
    rows_max: int = 10
    pool_size: int = 40
    schema_cfg: SchemaGenConfig = field(default_factory=SchemaGenConfig)
    compose_cfg: ComposeConfig = field(default_factory=ComposeConfig)
    catalog_file: str | None = None
    out_dir: str | None = None
    save_traces: bool = False
    max_sweeps: int = 10_000

    def __post_init__(self):
        if not self.levels:
            raise ValueError("at least one isolation level is required")
        if self.cases is None and self.duration_s is None:
            raise ValueError("either a case budget or a duration is required")


@dataclass
class CampaignSummary:
    cases_attempted: int = 0
    cases_generated: int = 0
    cases_executed: int = 0
    generation_failures: int = 0
    discarded: dict[str, int] = field(default_factory=dict)
    bugs_explicit: int = 0
    bugs_implicit: int = 0
    bugs_by_pattern: dict[str, int] = field(default_factory=dict)
    unique_bugs: int = 0
    wall_time_s: float = 0.0  # console-only; excluded from serialization

    def to_json(self) -> str:
        payload = {
            "cases_attempted": self.cases_attempted,
            "cases_generated": self.cases_generated,
            "cases_executed": self.cases_executed,
            "generation_failures": self.generation_failures,
            "discarded": dict(sorted(self.discarded.items())),
            "bugs_explicit": self.bugs_explicit,
            "bugs_implicit": self.bugs_implicit,
            "bugs_by_pattern": dict(sorted(self.bugs_by_pattern.items())),
            "unique_bugs": self.unique_bugs,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def load_catalog(cfg: CampaignConfig | None = None) -> list[AnomalyPattern]:
    catalog = load_builtin_catalog()
    if cfg is not None and cfg.catalog_file:
        catalog = catalog + load_catalog_file(cfg.catalog_file)
    return catalog


def make_adapter(cfg: CampaignConfig) -> DbAdapter:
    if cfg.target == "engine":
        return EngineAdapter(Engine(set(cfg.faults)))
    if cfg.target.startswith("external:"):
        endpoint = cfg.target.split(":", 1)[1]
        scheme = endpoint.split(":", 1)[0]
        factory = EXTERNAL_ADAPTERS.get(scheme)
        if factory is None:
            raise TargetUnreachable(
                f"no adapter registered for external target {endpoint!r}"
            )
        return factory(endpoint)
    raise TargetUnreachable(f"unknown target {cfg.target!r}")


def eligible_patterns(catalog: list[AnomalyPattern], level: IsolationLevel, ids: list[str] | None) -> list[AnomalyPattern]:
    chosen = catalog if ids is None else [p for p in catalog if p.id in ids]
    out = [p for p in chosen if level in p.disallowed]
    return out


def dedup(reports: list[BugReport]) -> list[BugReport]:
    """Keep the first report per (phase, pattern, level, backend, class)."""
    seen = set()
    out = []
    for r in reports:
        key = (r.phase, r.pattern_id, r.isolation, r.backend, r.failure_class)
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out


def generate_case(
    pattern: AnomalyPattern,
    level: IsolationLevel,
    case_seed: int,
    cfg: CampaignConfig,
) -> TransactionCase:
    schema = gen_schema(derive_seed(case_seed, "schema"), cfg.schema_cfg)
    rows_rng = random.Random(derive_seed(case_seed, "rows"))
    rows = rows_rng.randint(cfg.rows_min, cfg.rows_max)
    ddl = emit_ddl(schema)
    seed_sql = gen_seed_data(schema, rows, derive_seed(case_seed, "data"))
    pool = gen_statement_pool(schema, derive_seed(case_seed, "pool"), cfg.pool_size)
    return build_case(
        pattern,
        schema,
        pool,
        level,
        case_seed,
        cfg.compose_cfg,
        setup_sql=ddl + seed_sql,
    )


def run_case(case: TransactionCase, cfg: CampaignConfig, catalog: list[AnomalyPattern]):
    adapter = make_adapter(cfg)
    trace = run_schedule(case, adapter, max_sweeps=cfg.max_sweeps)
    reports = detect(trace, case.isolation, catalog, backend=adapter.backend_identity())
    return trace, reports


def run_campaign(cfg: CampaignConfig, catalog: list[AnomalyPattern] | None = None):
    """Run the campaign; returns (summary, deduped reports)."""
    catalog = catalog if catalog is not None else load_catalog(cfg)
    per_level = {
        level: eligible_patterns(catalog, level, cfg.pattern_ids) for level in cfg.levels
    }
    for level, patterns in per_level.items():
        if not patterns:
            raise ValueError(f"no selected pattern is disallowed at {level.name}")

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir is not None:
        (out_dir / "bugs").mkdir(parents=True, exist_ok=True)
        if cfg.save_traces:
            (out_dir / "traces").mkdir(parents=True, exist_ok=True)

    summary = CampaignSummary()
    all_reports: list[BugReport] = []
    round_robin = {level: 0 for level in cfg.levels}
    started = time.monotonic()
    case_index = 0
    while True:
        if cfg.cases is not None and case_index >= cfg.cases:
            break
        if cfg.duration_s is not None and time.monotonic() - started >= cfg.duration_s:
            break
        level = cfg.levels[case_index % len(cfg.levels)]
        patterns = per_level[level]
        pattern = patterns[round_robin[level] % len(patterns)]
        round_robin[level] += 1
        case_seed = derive_seed(cfg.seed, "case", case_index)
        summary.cases_attempted += 1
        case_index += 1
        try:
            case = generate_case(pattern, level, case_seed, cfg)
        except GenerationError:
            summary.generation_failures += 1
            continue
        summary.cases_generated += 1
        trace, reports = run_case(case, cfg, catalog)
        summary.cases_executed += 1
        if trace.terminal_class is not None and not reports:
            summary.discarded[trace.terminal_class] = summary.discarded.get(trace.terminal_class, 0) + 1
        for report in reports:
            if report.phase == "Explicit":
                summary.bugs_explicit += 1
            else:
                summary.bugs_implicit += 1
                summary.bugs_by_pattern[report.pattern_id] = (
                    summary.bugs_by_pattern.get(report.pattern_id, 0) + 1
                )
        all_reports.extend(reports)
        if out_dir is not None:
            if reports:
                _persist_reports(out_dir, case_index - 1, case, trace, reports)
            if cfg.save_traces:
                (out_dir / "traces" / f"case_{case_index - 1:06d}.trace").write_text(
                    render_trace(trace), encoding="utf-8"
                )

    deduped = dedup(all_reports)
    summary.unique_bugs = len(deduped)
    summary.wall_time_s = time.monotonic() - started
    if out_dir is not None:
        (out_dir / "summary.json").write_text(summary.to_json(), encoding="utf-8")
    return summary, deduped


def _persist_reports(out_dir: Path, case_index: int, case, trace, reports: list[BugReport]) -> None:
    for i, report in enumerate(reports):
        stem = f"bug_case{case_index:06d}_{i}"
        (out_dir / "bugs" / f"{stem}.sql").write_text(report.reproducer, encoding="utf-8")
        meta = {
            "phase": report.phase,
            "pattern_id": report.pattern_id,
            "isolation": report.isolation.name,
            "backend": report.backend,
            "failure_class": report.failure_class,
            "message": report.message,
            "var_binding": {v: list(t) for v, t in sorted(report.var_binding.items())},
            "txn_binding": {str(k): v for k, v in sorted(report.txn_binding.items())},
            "record_seqs": report.record_seqs,
        }
        (out_dir / "bugs" / f"{stem}.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def replay(
    source: str | Path,
    cfg: CampaignConfig | None = None,
    level: IsolationLevel | None = None,
    catalog: list[AnomalyPattern] | None = None,
) -> tuple[ExecutionTrace, list[BugReport]]:
    """Execute a reproducer file (or literal text) and detect on its trace.

    Returns the trace and the deduped reports.
    """
    cfg = cfg or CampaignConfig()
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text(encoding="utf-8")
    case = parse_reproducer(text, isolation=level)
    catalog = catalog if catalog is not None else load_catalog(cfg)
    adapter = make_adapter(cfg)
    trace = run_schedule(case, adapter, max_sweeps=cfg.max_sweeps)
    reports = detect(trace, case.isolation, catalog, backend=adapter.backend_identity())
    return trace, dedup(reports)
