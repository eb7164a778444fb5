"""Connection management: newline-delimited frames, trace replay, TCP proxy.

Frames are UTF-8 lines ``LABEL`` or ``LABEL(v1,...,vk)``.  Str values escape
commas and backslashes as ``\\,`` and ``\\\\``.  A trace file holds one
frame per line prefixed with the sender, ``L:`` or ``R:``.
"""

from __future__ import annotations

import logging
import queue
import re
import socket
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Iterable, Optional, Sequence, Union

from . import pst
from .monitor import Decision, Endpoint, EventKind, Message, Monitor, MonitorEvent, Value
from .pst import ChoicePoint, Sort

logger = logging.getLogger(__name__)

MAX_FRAME = 64 * 1024

EXIT_OK = 0
EXIT_INCOMPLETE = 1
EXIT_WARNINGS = 2
EXIT_VIOLATION = 3
EXIT_TRANSPORT = 4


class DecodeError(ValueError):
    """A frame that cannot be turned into a Message."""


class PayloadError(DecodeError):
    def __init__(self, label: str, position: int, message: str):
        super().__init__(f"payload of {label!r}, value {position}: {message}")
        self.label = label
        self.position = position


_FRAME_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)(?:\((.*)\))?", re.DOTALL)
_INT_RE = re.compile(r"[+-]?[0-9]+")


def split_args(text: str) -> list[str]:
    args, cur, escaped = [], [], False
    for ch in text:
        if escaped:
            cur.append(ch)
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == ",":
            args.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if escaped:
        raise DecodeError("dangling escape at end of frame")
    args.append("".join(cur))
    return args


def _literal(label: str, k: int, sort: Sort, text: str) -> Value:
    if sort is Sort.INT:
        if not _INT_RE.fullmatch(text):
            raise PayloadError(label, k, f"Int expected, got {text!r}")
        return int(text)
    if sort is Sort.BOOL:
        if text not in ("true", "false"):
            raise PayloadError(label, k, f"Bool expected, got {text!r}")
        return text == "true"
    return text


def decode_frame(line: str, expected: ChoicePoint, origin: Endpoint) -> Message:
    """Parse one frame body against the choice point the monitor is at.

    An unknown label still decodes (flagged ``unknown``) so the monitor can
    report it; malformed framing and payload sort mismatches raise.
    """
    m = _FRAME_RE.fullmatch(line)
    if m is None:
        raise DecodeError(f"unparseable frame {line[:80]!r}")
    label, body = m.group(1), m.group(2)
    branch = expected.branch(label)
    if branch is None:
        return Message(origin, label, (), unknown=True)
    sorts = branch.sorts
    # "L()" carries nothing, unless the branch expects a single (empty) value
    args = [] if body is None or (body == "" and len(sorts) != 1) else split_args(body)
    if len(args) != len(sorts):
        raise PayloadError(label, min(len(args), len(sorts)),
                           f"expected {len(sorts)} value(s), got {len(args)}")
    return Message(origin, label, tuple(_literal(label, k, s, a) for k, (s, a) in enumerate(zip(sorts, args))))


def encode_value(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return v.replace("\\", "\\\\").replace(",", "\\,")


def encode_frame(label: str, payload: Sequence[Value] = ()) -> str:
    if len(payload) == 0:
        return label
    return f"{label}({','.join(encode_value(v) for v in payload)})"


def peek_label(line: str) -> str:
    m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", line)
    return m.group() if m else line[:40]


# ---------------------------------------------------------------- traces

_ORIGIN = {"L": Endpoint.LEFT, "R": Endpoint.RIGHT}
_PREFIX = {Endpoint.LEFT: "L", Endpoint.RIGHT: "R"}


@dataclass(frozen=True)
class TraceRecord:
    origin: Endpoint
    text: str
    lineno: int = field(default=0, compare=False)

    def __str__(self) -> str:
        return f"{_PREFIX[self.origin]}: {self.text}"


class TraceError(ValueError):
    pass


def parse_trace(text: str) -> list[TraceRecord]:
    records = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, sep, body = line.partition(":")
        if not sep or tag.strip() not in _ORIGIN:
            raise TraceError(f"line {n}: expected 'L:' or 'R:' prefix")
        records.append(TraceRecord(_ORIGIN[tag.strip()], body.strip(), n))
    return records


def format_trace(records: Iterable[TraceRecord]) -> str:
    return "".join(f"{r}\n" for r in records)


# -------------------------------------------------------------- sessions


class EventLog:
    """Append-only JSON-lines sink; each line is written under a lock."""

    def __init__(self, stream: Optional[IO[str]] = None):
        self.stream = stream
        self.lock = threading.Lock()

    def write(self, events: Iterable[MonitorEvent]) -> None:
        if self.stream is None:
            return
        for e in events:
            line = e.to_json() + "\n"
            with self.lock:
                self.stream.write(line)
                self.stream.flush()


@dataclass
class FeedResult:
    events: tuple[MonitorEvent, ...]
    forward: bool


class MonitoredSession:
    """Turns raw frames into monitor steps; shared by replay and the proxy."""

    def __init__(self, monitor: Monitor, log: Optional[EventLog] = None,
                 capture: Optional[Callable[[TraceRecord], None]] = None):
        self.monitor = monitor
        self.log = log or EventLog()
        self.capture = capture

    def start(self) -> tuple[MonitorEvent, ...]:
        events = self.monitor.start()
        self.log.write(events)
        return events

    def feed(self, origin: Endpoint, text: str) -> FeedResult:
        if self.capture is not None:
            self.capture(TraceRecord(origin, text))
        mon = self.monitor
        if mon.violated:
            return FeedResult((), False)
        expected = mon.expected_origin
        if expected is not None and origin is not expected:
            result = mon.step(Message(origin, peek_label(text)))
        else:
            try:
                msg = decode_frame(text, mon.current, origin) if mon.current is not None \
                    else Message(origin, peek_label(text))
            except PayloadError as exc:
                result = mon.reject(origin, str(exc), exc.label)
            except DecodeError:
                result = mon.reject(origin, "unparseable frame")
            else:
                result = mon.step(msg)
        self.log.write(result.events)
        return FeedResult(result.events, result.decision is Decision.FORWARD)

    def oversized(self, origin: Endpoint) -> FeedResult:
        result = self.monitor.reject(origin, f"frame exceeds {MAX_FRAME} bytes")
        self.log.write(result.events)
        return FeedResult(result.events, False)

    def abort(self, reason: str) -> tuple[MonitorEvent, ...]:
        events = self.monitor.abort(reason)
        self.log.write(events)
        return events


def exit_status(monitor: Monitor) -> int:
    if monitor.violated:
        return EXIT_VIOLATION
    if not monitor.finished:
        return EXIT_INCOMPLETE
    last = monitor.events[-1]
    if last.kind is EventKind.TERMINATION and last.abnormal:
        return EXIT_TRANSPORT
    return EXIT_WARNINGS if monitor.active_warnings() else EXIT_OK


# ---------------------------------------------------------------- replay


@dataclass
class ReplayResult:
    events: list[MonitorEvent]
    status: int
    unreachable: list[TraceRecord]

    def log_text(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)


def _type_of(source: Union[str, Path, pst.SessionType]) -> pst.SessionType:
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    if isinstance(source, str):
        return pst.load(source)
    return source


def replay_records(t: pst.SessionType, level, records: Sequence[TraceRecord],
                   log: Optional[EventLog] = None) -> ReplayResult:
    session = MonitoredSession(Monitor(t, level), log)
    session.start()
    unreachable = []
    for rec in records:
        if session.monitor.halted:
            unreachable.append(rec)
            continue
        session.feed(rec.origin, rec.text)
    mon = session.monitor
    return ReplayResult(list(mon.events), exit_status(mon), unreachable)


def replay(type_source: Union[str, Path, pst.SessionType], level, trace_file: Union[str, Path],
           log: Optional[EventLog] = None) -> ReplayResult:
    """Run a recorded trace file through a fresh monitor."""
    records = parse_trace(Path(trace_file).read_text(encoding="utf-8"))
    return replay_records(_type_of(type_source), level, records, log)


# ----------------------------------------------------------------- proxy


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"bad address {text!r}, expected host:port")
    return host or "127.0.0.1", int(port)


@dataclass
class SessionConfig:
    type_source: Union[str, Path]
    level: float
    listen: str
    forward: str
    log_sink: Union[str, Path, None] = None  # None means standard output
    halt_on_violation: bool = True
    capture: Union[str, Path, None] = None

    def __post_init__(self):
        if not 0.0 <= self.level < 1.0:
            raise ValueError(f"confidence level must lie in [0, 1), got {self.level}")
        parse_address(self.listen)
        parse_address(self.forward)


_EOF = object()
_TOO_LONG = object()


def _reader(sock: socket.socket, origin: Endpoint, inbox: queue.Queue) -> None:
    f = sock.makefile("rb")
    try:
        while True:
            line = f.readline(MAX_FRAME + 1)
            if not line:
                break
            if not line.endswith(b"\n"):
                if len(line) > MAX_FRAME:
                    inbox.put((origin, _TOO_LONG))
                    return
                # last frame without terminator
            inbox.put((origin, line.rstrip(b"\n").rstrip(b"\r")))
    except OSError:
        pass
    finally:
        inbox.put((origin, _EOF))


def run_session(right: socket.socket, left: socket.socket, monitor: Monitor,
                log: Optional[EventLog] = None, capture: Optional[Callable[[TraceRecord], None]] = None,
                halt_on_violation: bool = True) -> int:
    """Pump frames between two connected parties through ``monitor``.

    Frames are handled strictly in arrival order; one that arrives from the
    party whose turn it is not reaches the monitor as an out-of-turn message.
    """
    session = MonitoredSession(monitor, log, capture)
    socks = {Endpoint.RIGHT: right, Endpoint.LEFT: left}
    inbox: queue.Queue = queue.Queue()
    readers = [threading.Thread(target=_reader, args=(s, e, inbox), daemon=True) for e, s in socks.items()]
    for r in readers:
        r.start()
    open_sides = set(socks)
    try:
        session.start()
        while not monitor.finished and open_sides:
            if monitor.violated and halt_on_violation:
                break
            origin, item = inbox.get()
            if item is _EOF:
                open_sides.discard(origin)
                if not monitor.halted:
                    session.abort(f"{origin.value} endpoint disconnected")
                continue
            if item is _TOO_LONG:
                session.oversized(origin)
                continue
            try:
                text = item.decode("utf-8")
            except UnicodeDecodeError:
                result = session.monitor.reject(origin, "unparseable frame")
                session.log.write(result.events)
                continue
            result = session.feed(origin, text)
            if result.forward:
                try:
                    socks[origin.other].sendall(item + b"\n")
                except OSError:
                    session.abort(f"{origin.other.value} endpoint unreachable")
    finally:
        for s in socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
    return exit_status(monitor)


class Proxy:
    """Listens for the Right (client) party and dials the Left (server) party."""

    def __init__(self, cfg: SessionConfig, log: Optional[EventLog] = None):
        self.cfg = cfg
        self.type = _type_of(Path(cfg.type_source))
        self.log = log
        self.sock: Optional[socket.socket] = None

    def bind(self) -> tuple[str, int]:
        host, port = parse_address(self.cfg.listen)
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.listen(8)
        self.sock = sock
        return sock.getsockname()[:2]

    def _open_log(self):
        if self.log is not None:
            return self.log, None
        if self.cfg.log_sink is None:
            return EventLog(sys.stdout), None
        f = open(self.cfg.log_sink, "a", encoding="utf-8")
        return EventLog(f), f

    def _session(self, client: socket.socket, log: EventLog, capture=None) -> int:
        try:
            server = socket.create_connection(parse_address(self.cfg.forward), timeout=10)
            server.settimeout(None)
        except OSError as exc:
            log_error = f"cannot reach server {self.cfg.forward}: {exc}"
            log.write(Monitor(self.type, self.cfg.level).abort(log_error))
            client.close()
            return EXIT_TRANSPORT
        return run_session(client, server, Monitor(self.type, self.cfg.level), log, capture,
                           self.cfg.halt_on_violation)

    def serve_one(self) -> int:
        if self.sock is None:
            self.bind()
        log, owned = self._open_log()
        cap_file = open(self.cfg.capture, "w", encoding="utf-8") if self.cfg.capture else None

        def capture(rec: TraceRecord) -> None:
            cap_file.write(f"{rec}\n")
            cap_file.flush()

        try:
            client, _ = self.sock.accept()
            return self._session(client, log, capture if cap_file else None)
        finally:
            self.sock.close()
            if cap_file:
                cap_file.close()
            if owned:
                owned.close()

    def serve(self, sessions: int) -> list[int]:
        """Accept ``sessions`` clients and monitor them concurrently."""
        if self.sock is None:
            self.bind()
        log, owned = self._open_log()
        statuses: list[int] = []
        lock = threading.Lock()

        def work(client):
            status = self._session(client, log)
            with lock:
                statuses.append(status)

        threads = []
        try:
            for _ in range(sessions):
                client, _ = self.sock.accept()
                th = threading.Thread(target=work, args=(client,))
                th.start()
                threads.append(th)
            for th in threads:
                th.join()
        finally:
            self.sock.close()
            if owned:
                owned.close()
        return statuses


def run_proxy(cfg: SessionConfig) -> int:
    try:
        proxy = Proxy(cfg)
        proxy.bind()
    except OSError as exc:
        logger.error("cannot listen on %s: %s", cfg.listen, exc)
        return EXIT_TRANSPORT
    return proxy.serve_one()
