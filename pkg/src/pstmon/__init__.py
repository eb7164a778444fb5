"""Runtime monitoring of probabilistic binary session types."""

from .monitor import Boundary, Decision, Endpoint, EventKind, Message, Monitor, MonitorEvent, new_monitor
from .pst import (
    InvalidSessionType, ProbAnnotation, PSTSyntaxError, Sort, build_table, dual, load, parse, pretty, validate,
)
from .stats import ConfidenceLevel, check_interval, estimate, judge, max_error, z_of

__all__ = [
    "Boundary", "ConfidenceLevel", "Decision", "Endpoint", "EventKind", "InvalidSessionType", "Message",
    "Monitor", "MonitorEvent", "PSTSyntaxError", "ProbAnnotation", "Sort", "build_table", "check_interval",
    "dual", "estimate", "judge", "load", "max_error", "new_monitor", "parse", "pretty", "validate", "z_of",
]
