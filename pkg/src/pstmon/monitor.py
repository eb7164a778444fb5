"""The synthesised monitor: a CFSM over the choice point table.

Every accepted message bumps the counters of the current choice point and
re-judges all checked branches of that choice point.  A warning is emitted
the first time a (branch, boundary) pair leaves its interval and retracted
the first time it comes back; repeated states are silent.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from . import pst
from .pst import ChoicePointTable, Direction, SessionType
from .stats import ChoiceCounters, ConfidenceLevel, IntervalReport, Judgement, check_interval, judge


class Endpoint(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def other(self) -> "Endpoint":
        return Endpoint.RIGHT if self is Endpoint.LEFT else Endpoint.LEFT


def controller(direction: Direction) -> Endpoint:
    """The endpoint that selects the branch at a choice point of this direction.

    Left plays the type as written, so it selects at internal choices and the
    Right endpoint (playing the dual) selects at external ones.
    """
    return Endpoint.RIGHT if direction is Direction.EXTERNAL else Endpoint.LEFT


class Boundary(enum.Enum):
    LOW = "low"
    HIGH = "high"


class EventKind(enum.Enum):
    WARNING = "warning"
    RETRACTION = "retraction"
    VIOLATION = "violation"
    TERMINATION = "termination"


class Decision(enum.Enum):
    FORWARD = "forward"
    DROP = "drop"


Value = Union[int, str, bool]
WarningKey = tuple[int, str, Boundary]


@dataclass(frozen=True)
class Message:
    origin: Endpoint
    label: str
    payload: tuple[Value, ...] = ()
    unknown: bool = False


@dataclass(frozen=True)
class MonitorEvent:
    kind: EventKind
    seq: int
    choice_point: Optional[int] = None
    branch: Optional[str] = None
    boundary: Optional[Boundary] = None
    blamed: Optional[Endpoint] = None
    report: Optional[IntervalReport] = None
    count_total: Optional[int] = None
    count_branch: Optional[int] = None
    reason: Optional[str] = None
    verdicts: tuple[WarningKey, ...] = ()
    abnormal: bool = False

    def to_dict(self) -> dict:
        d: dict = {"seq": self.seq, "kind": self.kind.value}
        if self.choice_point is not None:
            d["choice_point"] = self.choice_point
        if self.branch is not None:
            d["branch"] = self.branch
        if self.boundary is not None:
            d["boundary"] = self.boundary.value
        if self.blamed is not None:
            d["blamed"] = self.blamed.value
        if self.report is not None:
            d["estimated"] = _r4(self.report.estimated)
            d["expected"] = _r4(self.report.specified)
            d["interval_low"] = _r4(self.report.low)
            d["interval_high"] = _r4(self.report.high)
        if self.count_total is not None:
            d["count_total"] = self.count_total
            d["count_branch"] = self.count_branch
        if self.reason is not None:
            d["reason"] = self.reason
        if self.kind is EventKind.TERMINATION:
            d["verdicts"] = [{"choice_point": j, "branch": label, "boundary": b.value}
                             for j, label, b in self.verdicts]
            if self.abnormal:
                d["abnormal"] = True
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _r4(x: float) -> float:
    return round(x, 4) + 0.0


@dataclass(frozen=True)
class StepResult:
    events: tuple[MonitorEvent, ...]
    decision: Decision


class MonitorFinished(RuntimeError):
    """Raised when stepping a monitor whose session already terminated."""


class Monitor:
    def __init__(self, t: SessionType, level: Union[float, ConfidenceLevel]):
        diagnostics = pst.validate(t)
        if diagnostics:
            raise pst.InvalidSessionType(diagnostics)
        self.type = t
        self.table: ChoicePointTable = pst.build_table(t)
        self.level = level if isinstance(level, ConfidenceLevel) else ConfidenceLevel(level)
        self.position: Optional[int] = self.table.initial
        self.counters = {j: ChoiceCounters() for j in self.table.entries}
        self.active: dict[WarningKey, bool] = {}
        for cp in self.table:
            for b in cp.branches:
                if b.annotation.checks_low:
                    self.active[(cp.index, b.label, Boundary.LOW)] = False
                if b.annotation.checks_high:
                    self.active[(cp.index, b.label, Boundary.HIGH)] = False
        self.seq = 0
        self.violated = False
        self.finished = False
        self.events: list[MonitorEvent] = []

    # -- state queries

    @property
    def halted(self) -> bool:
        return self.violated or self.finished

    @property
    def current(self):
        return None if self.position is None else self.table[self.position]

    @property
    def expected_origin(self) -> Optional[Endpoint]:
        cp = self.current
        return None if cp is None else controller(cp.direction)

    def active_warnings(self) -> list[WarningKey]:
        return [k for k, on in self.active.items() if on]

    # -- transitions

    def _emit(self, kind: EventKind, **fields) -> MonitorEvent:
        self.seq += 1
        event = MonitorEvent(kind, self.seq, **fields)
        self.events.append(event)
        return event

    def start(self) -> tuple[MonitorEvent, ...]:
        """Emit Termination straight away when the type is ``end``."""
        if self.position is None and not self.halted:
            return (self._terminate(),)
        return ()

    def _terminate(self, reason: Optional[str] = None, abnormal: bool = False) -> MonitorEvent:
        self.finished = True
        return self._emit(EventKind.TERMINATION, verdicts=tuple(self.active_warnings()),
                          reason=reason, abnormal=abnormal)

    def abort(self, reason: str) -> tuple[MonitorEvent, ...]:
        """Close the session abnormally, e.g. when a connection drops."""
        if self.halted:
            return ()
        return (self._terminate(reason, abnormal=True),)

    def _violation(self, origin: Endpoint, reason: str, label: Optional[str] = None) -> StepResult:
        self.violated = True
        event = self._emit(EventKind.VIOLATION, choice_point=self.position, branch=label,
                           blamed=origin, reason=reason)
        return StepResult((event,), Decision.DROP)

    def reject(self, origin: Endpoint, reason: str, label: Optional[str] = None) -> StepResult:
        """Record a violation detected before a Message could be built."""
        if self.violated:
            return StepResult((), Decision.DROP)
        if self.finished:
            raise MonitorFinished("session already terminated")
        return self._violation(origin, reason, label)

    def step(self, m: Message) -> StepResult:
        if self.violated:
            return StepResult((), Decision.DROP)
        if self.finished:
            raise MonitorFinished("session already terminated")
        cp = self.current
        if cp is None:
            return StepResult(self.start(), Decision.DROP)

        expected = controller(cp.direction)
        if m.origin is not expected:
            return self._violation(
                m.origin, f"out-of-turn message from {m.origin.value}; "
                          f"choice point {cp.index} expects {expected.value}", m.label)
        branch = None if m.unknown else cp.branch(m.label)
        if branch is None:
            return self._violation(m.origin, f"unknown label {m.label!r}", m.label)
        problem = payload_problem(branch.sorts, m.payload)
        if problem:
            return self._violation(m.origin, f"payload of {m.label!r}: {problem}", m.label)

        counters = self.counters[cp.index]
        counters.record(m.label)
        events = []
        blamed = controller(cp.direction)
        for b in cp.branches:
            ann = b.annotation
            if ann.p is None:
                continue
            count = counters[b.label]
            report = check_interval(self.level, counters.total, count, ann.p)
            verdict = judge(ann, report)
            for boundary, checked, deviated in (
                    (Boundary.LOW, ann.checks_low, verdict is Judgement.DEVIATED_LOW),
                    (Boundary.HIGH, ann.checks_high, verdict is Judgement.DEVIATED_HIGH)):
                if not checked:
                    continue
                key = (cp.index, b.label, boundary)
                if deviated == self.active[key]:
                    continue
                self.active[key] = deviated
                kind = EventKind.WARNING if deviated else EventKind.RETRACTION
                events.append(self._emit(
                    kind, choice_point=cp.index, branch=b.label, boundary=boundary,
                    blamed=blamed if deviated else None, report=report,
                    count_total=counters.total, count_branch=count))

        self.position = branch.successor
        if self.position is None:
            events.append(self._terminate())
        return StepResult(tuple(events), Decision.FORWARD)

    # -- reporting

    def snapshot(self) -> "StatusReport":
        rows = []
        for cp in self.table:
            counters = self.counters[cp.index]
            for b in cp.branches:
                count = counters[b.label]
                est = low = high = None
                if counters.total:
                    est = count / counters.total
                    if b.annotation.p is not None:
                        r = check_interval(self.level, counters.total, count, b.annotation.p)
                        low, high = r.low, r.high
                flags = tuple(bd for bd in Boundary if self.active.get((cp.index, b.label, bd)))
                rows.append(StatusRow(cp.index, cp.direction, b.label, str(b.annotation),
                                      counters.total, count, est, low, high, flags))
        return StatusReport(self.position, tuple(rows))


def payload_problem(sorts: Sequence[pst.Sort], payload: Sequence[Value]) -> Optional[str]:
    if len(sorts) != len(payload):
        return f"expected {len(sorts)} value(s), got {len(payload)}"
    for k, (sort, value) in enumerate(zip(sorts, payload)):
        if not sort.accepts(value):
            return f"value {k} should be {sort.value}, got {value!r}"
    return None


@dataclass(frozen=True)
class StatusRow:
    choice_point: int
    direction: Direction
    branch: str
    annotation: str
    count_total: int
    count_branch: int
    estimate: Optional[float]
    low: Optional[float]
    high: Optional[float]
    active: tuple[Boundary, ...] = field(default=())


@dataclass(frozen=True)
class StatusReport:
    position: Optional[int]
    rows: tuple[StatusRow, ...]

    def row(self, choice_point: int, branch: str) -> StatusRow:
        for r in self.rows:
            if r.choice_point == choice_point and r.branch == branch:
                return r
        raise KeyError((choice_point, branch))

    def format(self) -> str:
        def num(x):
            return "n/a" if x is None else f"{x:.4f}"

        lines = [f"position: {'end' if self.position is None else self.position}"]
        for r in self.rows:
            interval = "n/a" if r.low is None else f"[{r.low:.4f}, {r.high:.4f}]"
            flags = ",".join(b.value for b in r.active) or "-"
            lines.append(f"{r.choice_point} {r.direction.value:8} {r.branch:12} [{r.annotation}] "
                         f"{r.count_branch}/{r.count_total} est={num(r.estimate)} "
                         f"ci={interval} warn={flags}")
        return "\n".join(lines)


def new_monitor(t: SessionType, level: Union[float, ConfidenceLevel]) -> Monitor:
    return Monitor(t, level)
