"""Command-line interface.

Subcommands: ``campaign`` (run a testing campaign), ``replay`` (execute a
reproducer file and detect), ``catalog`` (list/validate patterns),
``check`` (run the detector on a saved trace file), ``scenario`` (replay a
bundled scripted scenario).

Exit codes: 0 = ran with no bugs, 1 = bugs found, 2 = operational error.
A ``--config`` file holds ``key=value`` lines mirroring the flags; flags
override the file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .campaign import (
    CampaignConfig,
    TargetUnreachable,
    dedup,
    load_catalog,
    replay,
    run_campaign,
)
from .compose import ReproducerParseError
from .detector import detect
from .engine import FaultSwitch
from .executor import parse_trace
from .patterns import (
    IsolationLevel,
    PatternError,
    format_pattern,
    load_builtin_catalog,
    load_catalog_file,
)
from .scenarios import SCENARIOS

EXIT_OK = 0
EXIT_BUGS = 1
EXIT_ERROR = 2


def _parse_levels(text: str) -> list[IsolationLevel]:
    if text.strip().lower() == "all":
        return [IsolationLevel.RC, IsolationLevel.RR, IsolationLevel.SER]
    return [IsolationLevel.from_name(part) for part in text.split(",") if part.strip()]


def _parse_faults(text: str) -> set[FaultSwitch]:
    if not text.strip():
        return set()
    return {FaultSwitch.from_name(part) for part in text.split(",") if part.strip()}


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _campaign_config(args) -> CampaignConfig:
    file_values = _read_config_file(args.config) if args.config else {}

    def pick(flag_value, key, parse=lambda v: v):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            return parse(file_values[key])
        return None

    target = pick(args.target, "target") or "engine"
    levels = pick(args.isolation, "isolation", str) or "rr"
    patterns = pick(args.patterns, "patterns") or "all"
    faults = pick(args.faults, "faults") or ""
    cases = pick(args.cases, "cases", int)
    duration = pick(args.duration, "duration", float)
    seed = pick(args.seed, "seed", int)
    out_dir = pick(args.out, "out")
    workers = pick(args.workers, "workers", int) or 1
    if cases is None and duration is None:
        cases = 100
    cfg = CampaignConfig(
        target=target,
        faults=_parse_faults(faults) if isinstance(faults, str) else faults,
        levels=_parse_levels(levels) if isinstance(levels, str) else levels,
        pattern_ids=None if patterns == "all" else [p.strip() for p in patterns.split(",")],
        cases=cases,
        duration_s=duration,
        seed=seed if seed is not None else 0,
        workers=workers,
        out_dir=out_dir,
        save_traces=bool(args.save_traces),
        catalog_file=args.catalog_file or file_values.get("catalog_file"),
    )
    return cfg


def cmd_campaign(args) -> int:
    try:
        cfg = _campaign_config(args)
        summary, reports = run_campaign(cfg)
    except (TargetUnreachable, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(summary.to_json(), end="")
    print(f"wall time: {summary.wall_time_s:.2f}s", file=sys.stderr)
    for report in reports:
        print(report.summary())
    return EXIT_BUGS if reports else EXIT_OK


def cmd_replay(args) -> int:
    cfg = CampaignConfig(
        target=args.target or "engine",
        faults=_parse_faults(args.faults or ""),
        cases=1,
    )
    level = IsolationLevel.from_name(args.isolation) if args.isolation else None
    try:
        trace, reports = replay(Path(args.file), cfg, level=level)
    except (FileNotFoundError, ReproducerParseError, TargetUnreachable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.show_trace:
        from .executor import render_trace

        print(render_trace(trace), end="")
    for report in reports:
        print(report.summary())
    if not reports:
        print("no violations detected")
    return EXIT_BUGS if reports else EXIT_OK


def cmd_catalog(args) -> int:
    try:
        patterns = load_builtin_catalog()
        if args.file:
            patterns = patterns + load_catalog_file(args.file)
    except PatternError as exc:
        print(f"catalog invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in patterns:
        levels = ",".join(l.name for l in sorted(p.disallowed))
        print(f"{p.id}\t{format_pattern(p)}\t{levels}")
    print(f"# {len(patterns)} patterns, all valid", file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        trace = parse_trace(Path(args.file).read_text(encoding="utf-8"))
        level = IsolationLevel.from_name(args.isolation)
    except Exception as exc:  # malformed trace or level
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    reports = dedup(detect(trace, level, load_catalog(), backend="trace-file"))
    for report in reports:
        print(report.summary())
    if not reports:
        print("no violations detected")
    return EXIT_BUGS if reports else EXIT_OK


def cmd_scenario(args) -> int:
    if args.name not in SCENARIOS:
        print(f"unknown scenario {args.name!r}; have: {', '.join(sorted(SCENARIOS))}", file=sys.stderr)
        return EXIT_ERROR
    scenario = SCENARIOS[args.name]
    faults = set() if args.faults_off else ({scenario.fault} if scenario.fault else set())
    cfg = CampaignConfig(target="engine", faults=faults, cases=1)
    trace, reports = replay(
        scenario.script, cfg, level=IsolationLevel.from_name(scenario.level_name)
    )
    for report in reports:
        print(report.summary())
    if not reports:
        print("no violations detected")
    return EXIT_BUGS if reports else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isovet",
        description="Pattern-guided concurrent-transaction testing with isolation-violation detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("campaign", help="run a generate/execute/detect campaign")
    c.add_argument("--target", help="engine | external:<endpoint>")
    c.add_argument("--isolation", help="rc|rr|ser|all or comma list")
    c.add_argument("--patterns", help="comma-separated pattern ids, or 'all'")
    c.add_argument("--cases", type=int, help="case budget")
    c.add_argument("--duration", type=float, help="time budget in seconds")
    c.add_argument("--seed", type=int, help="campaign seed")
    c.add_argument("--faults", help="comma-separated engine fault switches")
    c.add_argument("--out", help="output directory for reports and summary")
    c.add_argument("--workers", type=int, help="worker streams (cases are still deterministic)")
    c.add_argument("--save-traces", action="store_true")
    c.add_argument("--catalog-file", help="extra pattern catalog file")
    c.add_argument("--config", help="key=value config file; flags override")
    c.set_defaults(func=cmd_campaign)

    r = sub.add_parser("replay", help="execute a reproducer file and run detection")
    r.add_argument("file")
    r.add_argument("--target", help="engine | external:<endpoint>")
    r.add_argument("--isolation", help="detection level override")
    r.add_argument("--faults", help="engine fault switches")
    r.add_argument("--show-trace", action="store_true")
    r.set_defaults(func=cmd_replay)

    k = sub.add_parser("catalog", help="list and validate the pattern catalog")
    k.add_argument("--file", help="extra catalog file to validate")
    k.set_defaults(func=cmd_catalog)

    ch = sub.add_parser("check", help="run the detector on a saved trace file")
    ch.add_argument("file")
    ch.add_argument("--isolation", required=True)
    ch.set_defaults(func=cmd_check)

    s = sub.add_parser("scenario", help="replay a bundled scripted scenario")
    s.add_argument("name")
    s.add_argument("--faults-off", action="store_true", help="run on the clean engine instead")
    s.set_defaults(func=cmd_scenario)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
