"""Synthetic parties and a seeded Monte Carlo harness over the monitor core.

Acceptance thresholds for the harness come from two back-of-envelope bounds.

False alarms.  A conforming party trips a checked boundary on a given visit
with probability about ``1 - level``.  Over ``k`` checked boundaries and
``n`` visits the union bound gives at most ``(1 - level) * k * n`` alarms
per run in expectation; at level 0.99999 with 5 boundaries and 1,000 visits
that is 0.05, so allowing 20 of 100 runs to end with an active warning is
very loose.  See :func:`false_alarm_bound`.

Detection.  A branch specified at ``p`` but taken at rate ``q`` has an
estimate near ``q`` once counts are moderate, and the interval half-width
``Z * sqrt(p (1 - p) / c)`` falls below ``|q - p|`` as soon as
``c > Z**2 p (1 - p) / (q - p)**2``.  For Help at 0.2 played at 0.6 and
level 0.99999 that is 20 visits; a 200-visit budget leaves room for the
sampling noise of the early estimates.  See :func:`separation_visits`.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from . import pst
from .monitor import Boundary, Endpoint, EventKind, Message, Monitor, Value, controller
from .pst import ChoicePointTable, Sort
from .stats import z_of

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


class XorShift64Star:
    """xorshift64* generator; the state is seeded through splitmix64 so it is never zero."""

    def __init__(self, seed: int, *stream: int):
        s = splitmix64(seed & MASK64)
        for k in stream:
            s = splitmix64(s ^ (k & MASK64))
        self.state = s or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, lo: int, hi: int) -> int:
        return lo + self.next_u64() % (hi - lo + 1)


PayloadGen = Callable[[XorShift64Star], tuple[Value, ...]]


def default_payload(sorts: tuple[Sort, ...]) -> PayloadGen:
    def gen(rng: XorShift64Star) -> tuple[Value, ...]:
        out: list[Value] = []
        for s in sorts:
            if s is Sort.INT:
                out.append(rng.randint(1, 100))
            elif s is Sort.BOOL:
                out.append(rng.random() < 0.5)
            else:
                out.append(f"s{rng.randint(0, 999)}")
        return tuple(out)
    return gen


def false_alarm_bound(level: float, boundaries: int, visits: int) -> float:
    """Union bound on expected spurious warnings per run for conforming parties."""
    return (1.0 - level) * boundaries * visits


def separation_visits(level: float, p: float, q: float) -> int:
    """Smallest visit count whose interval around ``p`` excludes the rate ``q``."""
    if p == q:
        raise ValueError("rates must differ")
    z = z_of(level)
    return math.floor(z * z * p * (1 - p) / (q - p) ** 2) + 1


class ModelError(ValueError):
    pass


@dataclass
class PartyModel:
    """How one party chooses at the choice points it controls.

    ``distributions`` maps a choice point index to the party's true branch
    probabilities.  Choice points left out fall back to the type's own
    annotations when those form a full distribution.  With ``stop_after``
    set, the party takes the ``terminal`` branch once its choice point has
    been visited that many times; before that the terminal branch is only
    taken if sampled.
    """

    distributions: dict[int, dict[str, float]] = field(default_factory=dict)
    payloads: dict[str, PayloadGen] = field(default_factory=dict)
    stop_after: Optional[int] = None
    terminal: Optional[str] = None

    def resolved(self, table: ChoicePointTable, side: Endpoint) -> dict[int, list[tuple[str, float]]]:
        out = {}
        for j in self.distributions:
            if j not in table.entries:
                raise ModelError(f"unknown choice point {j}")
            if controller(table[j].direction) is not side:
                raise ModelError(f"choice point {j} is not controlled by the {side.value} party")
        for cp in table:
            if controller(cp.direction) is not side:
                continue
            dist = self.distributions.get(cp.index)
            if dist is None:
                dist = {b.label: b.annotation.p for b in cp.branches}
                if any(p is None for p in dist.values()):
                    raise ModelError(f"choice point {cp.index} has wildcard annotations; "
                                     "give the model an explicit distribution")
            unknown = set(dist) - set(cp.labels)
            if unknown:
                raise ModelError(f"labels {sorted(unknown)} are not branches of choice point {cp.index}")
            if any(p < 0 for p in dist.values()) or abs(math.fsum(dist.values()) - 1.0) > 1e-9:
                raise ModelError(f"distribution for choice point {cp.index} must be non-negative and sum to 1")
            out[cp.index] = [(b.label, dist.get(b.label, 0.0)) for b in cp.branches]
        return out


def _sample(rng: XorShift64Star, dist: list[tuple[str, float]]) -> str:
    u = rng.random()
    acc = 0.0
    for label, p in dist:
        acc += p
        if u < acc:
            return label
    return next(label for label, p in reversed(dist) if p > 0)


@dataclass
class RunRecord:
    run: int
    messages: int
    visits: dict[int, int]
    warnings: int
    retractions: int
    first_warning: Optional[int]
    active_at_end: int
    outcome: str


@dataclass
class ExperimentResult:
    runs: int
    warnings_issued_ever: int
    active_at_end: int
    latency: list[Optional[int]]
    records: list[RunRecord]

    def median_latency(self) -> Optional[float]:
        seen = [x for x in self.latency if x is not None]
        return statistics.median(seen) if seen else None

    def summary(self) -> dict:
        seen = [x for x in self.latency if x is not None]
        return {
            "runs": self.runs,
            "warnings_issued_ever": self.warnings_issued_ever,
            "active_at_end": self.active_at_end,
            "runs_with_latency": len(seen),
            "median_latency": self.median_latency(),
            "max_latency": max(seen) if seen else None,
        }


WatchKey = tuple[int, str, Boundary]


def _find_terminal(table: ChoicePointTable, label: str) -> int:
    for cp in table:
        b = cp.branch(label)
        if b is not None and b.successor is None:
            return cp.index
    raise ModelError(f"no branch {label!r} leading to end")


def simulate_session(monitor: Monitor, models: dict[Endpoint, PartyModel], rngs: dict[Endpoint, XorShift64Star],
                     max_messages: int = 1_000_000, watch: Optional[WatchKey] = None) -> RunRecord:
    table = monitor.table
    plans = {side: m.resolved(table, side) for side, m in models.items()}
    stops = {}
    for side, m in models.items():
        if m.stop_after is not None:
            if m.terminal is None:
                raise ModelError("stop_after needs a terminal label")
            stops[side] = (_find_terminal(table, m.terminal), m.stop_after, m.terminal)
    gens: dict[str, PayloadGen] = {}
    for cp in table:
        for b in cp.branches:
            gens.setdefault(b.label, default_payload(b.sorts))
    for m in models.values():
        gens.update(m.payloads)

    monitor.start()
    messages = 0
    first = None
    while not monitor.halted and messages < max_messages:
        cp = monitor.current
        side = controller(cp.direction)
        rng = rngs[side]
        stop = stops.get(side)
        if stop and stop[0] == cp.index and monitor.counters[cp.index].total >= stop[1]:
            label = stop[2]
        else:
            label = _sample(rng, plans[side][cp.index])
        result = monitor.step(Message(side, label, gens[label](rng)))
        messages += 1
        if first is None:
            for e in result.events:
                if e.kind is EventKind.WARNING and (watch is None or (e.choice_point, e.branch, e.boundary) == watch):
                    first = e.count_total
                    break
    kinds = [e.kind for e in monitor.events]
    outcome = "violation" if monitor.violated else "terminated" if monitor.finished else "cut"
    return RunRecord(
        run=-1, messages=messages,
        visits={j: c.total for j, c in monitor.counters.items()},
        warnings=kinds.count(EventKind.WARNING), retractions=kinds.count(EventKind.RETRACTION),
        first_warning=first, active_at_end=len(monitor.active_warnings()), outcome=outcome)


def run_experiment(t: pst.SessionType, level, left: PartyModel, right: PartyModel, runs: int, seed: int,
                   watch: Optional[WatchKey] = None, max_messages: int = 1_000_000) -> ExperimentResult:
    """Monitor ``runs`` independent seeded sessions and aggregate warning statistics.

    Run ``k`` draws from streams derived from ``(seed, k)`` only, so the
    same seed yields the same party behaviour at every confidence level.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    models = {Endpoint.LEFT: left, Endpoint.RIGHT: right}
    records = []
    for k in range(runs):
        rngs = {Endpoint.RIGHT: XorShift64Star(seed, k, 0), Endpoint.LEFT: XorShift64Star(seed, k, 1)}
        rec = simulate_session(Monitor(t, level), models, rngs, max_messages, watch)
        rec.run = k
        records.append(rec)
    return ExperimentResult(
        runs=runs,
        warnings_issued_ever=sum(1 for r in records if r.warnings),
        active_at_end=sum(1 for r in records if r.active_at_end),
        latency=[r.first_warning for r in records],
        records=records,
    )


# ------------------------------------------------------------ config files


@dataclass
class ExperimentConfig:
    type: pst.SessionType
    level: float
    runs: int
    seed: int
    left: PartyModel
    right: PartyModel
    watch: Optional[WatchKey] = None
    max_messages: int = 1_000_000

    def run(self) -> ExperimentResult:
        return run_experiment(self.type, self.level, self.left, self.right, self.runs, self.seed,
                              self.watch, self.max_messages)


def _model(raw: dict) -> PartyModel:
    dists = {int(j): {str(k): float(v) for k, v in d.items()} for j, d in raw.get("distributions", {}).items()}
    return PartyModel(dists, stop_after=raw.get("stop_after"), terminal=raw.get("terminal"))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a JSON experiment description; the type path is relative to the file."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    type_path = path.parent / raw["type"]
    watch = raw.get("watch")
    if watch is not None:
        watch = (int(watch["choice_point"]), watch["branch"], Boundary(watch["boundary"]))
    return ExperimentConfig(
        type=pst.load(type_path.read_text(encoding="utf-8")),
        level=float(raw["confidence"]),
        runs=int(raw.get("runs", 100)),
        seed=int(raw.get("seed", 0)),
        left=_model(raw.get("left", {})),
        right=_model(raw.get("right", {})),
        watch=watch,
        max_messages=int(raw.get("max_messages", 1_000_000)),
    )


def write_results(result: ExperimentResult, out_dir: Union[str, Path]) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path = out_dir / "runs.csv"
    with runs_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["run", "messages", "visits", "warnings", "retractions",
                    "first_warning", "active_at_end", "outcome"])
        for r in result.records:
            visits = ";".join(f"{j}={n}" for j, n in sorted(r.visits.items()))
            w.writerow([r.run, r.messages, visits, r.warnings, r.retractions,
                        "" if r.first_warning is None else r.first_warning, r.active_at_end, r.outcome])
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(result.summary(), indent=2) + "\n", encoding="utf-8")
    return runs_path, summary_path
