"""Pattern-guided transaction-bug testing toolkit.

Generates concurrent transaction test cases from a catalog of anomaly
patterns, executes them under a controlled schedule against a reference
transactional engine (or an external adapter), and detects isolation
violations by matching execution histories back against the patterns.
"""

from .campaign import CampaignConfig, CampaignSummary, dedup, replay, run_campaign
from .compose import TransactionCase, build_case
from .detector import BugReport, build_graph, derive_signature, detect, match
from .engine import Engine, FaultSwitch
from .executor import EngineAdapter, ExecutionTrace, OpRecord, run_schedule
from .patterns import (
    AnomalyPattern,
    IsolationLevel,
    format_pattern,
    is_violation,
    load_builtin_catalog,
    parse_pattern,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyPattern",
    "BugReport",
    "CampaignConfig",
    "CampaignSummary",
    "Engine",
    "EngineAdapter",
    "ExecutionTrace",
    "FaultSwitch",
    "IsolationLevel",
    "OpRecord",
    "TransactionCase",
    "build_case",
    "build_graph",
    "dedup",
    "derive_signature",
    "detect",
    "format_pattern",
    "is_violation",
    "load_builtin_catalog",
    "match",
    "parse_pattern",
    "replay",
    "run_campaign",
    "run_schedule",
]
