"""Trace-driven simulation of prompt-tuning clusters."""
from .engine import POLICIES, InvariantBreach, Simulator, run
from .report import JobOutcome, RunReport, account_cost, write_report
from .trace import BUNDLED_SEEDS, LOAD_PRESETS, Trace, TraceRecord, generate_trace, preset_trace, read_trace, write_trace

__all__ = [
    "POLICIES",
    "BUNDLED_SEEDS",
    "LOAD_PRESETS",
    "InvariantBreach",
    "JobOutcome",
    "RunReport",
    "Simulator",
    "Trace",
    "TraceRecord",
    "account_cost",
    "generate_trace",
    "preset_trace",
    "read_trace",
    "run",
    "write_report",
    "write_trace",
]
