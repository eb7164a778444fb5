"""Probabilistic session types: syntax tree, concrete syntax, validation, duality.

The textual language::

    rec X . &{ ?Guess(num:Int)[0.75] . +{ !Correct[0.01] . X,
                                          !Incorrect[0.99] . X },
               ?Help[0.2] . +{ !Hint(info:Str)[1] . X },
               ?Quit[0.05] . end }

``&{...}`` is an external choice (branches prefixed ``?``), ``+{...}`` an
internal choice (branches prefixed ``!``).  Annotations are ``[p]``,
``[p,*]`` (lower bound only), ``[*,p]`` (upper bound only) or ``[*]``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

MASS_TOLERANCE = 1e-9


class Sort(enum.Enum):
    INT = "Int"
    STR = "Str"
    BOOL = "Bool"

    def accepts(self, value) -> bool:
        if self is Sort.INT:
            return isinstance(value, int) and not isinstance(value, bool)
        if self is Sort.BOOL:
            return isinstance(value, bool)
        return isinstance(value, str)


class AnnotationKind(enum.Enum):
    EXACT = "exact"
    LOWER_ONLY = "lower"
    UPPER_ONLY = "upper"
    UNCHECKED = "unchecked"


@dataclass(frozen=True)
class ProbAnnotation:
    kind: AnnotationKind
    p: Optional[float] = None

    @classmethod
    def exact(cls, p: float) -> "ProbAnnotation":
        return cls(AnnotationKind.EXACT, p)

    @classmethod
    def lower_only(cls, p: float) -> "ProbAnnotation":
        return cls(AnnotationKind.LOWER_ONLY, p)

    @classmethod
    def upper_only(cls, p: float) -> "ProbAnnotation":
        return cls(AnnotationKind.UPPER_ONLY, p)

    @classmethod
    def unchecked(cls) -> "ProbAnnotation":
        return cls(AnnotationKind.UNCHECKED)

    @property
    def checks_low(self) -> bool:
        return self.kind in (AnnotationKind.EXACT, AnnotationKind.LOWER_ONLY)

    @property
    def checks_high(self) -> bool:
        return self.kind in (AnnotationKind.EXACT, AnnotationKind.UPPER_ONLY)

    def __str__(self) -> str:
        if self.kind is AnnotationKind.UNCHECKED:
            return "*"
        p = format_prob(self.p)
        if self.kind is AnnotationKind.LOWER_ONLY:
            return f"{p},*"
        if self.kind is AnnotationKind.UPPER_ONLY:
            return f"*,{p}"
        return p


def format_prob(p: float) -> str:
    if float(p).is_integer():
        return str(int(p))
    return repr(float(p))


Position = tuple[int, int]


@dataclass(frozen=True)
class Branch:
    label: str
    payload: tuple[tuple[str, Sort], ...]
    annotation: ProbAnnotation
    cont: "SessionType"
    pos: Optional[Position] = field(default=None, compare=False, repr=False)

    @property
    def sorts(self) -> tuple[Sort, ...]:
        return tuple(s for _, s in self.payload)


@dataclass(frozen=True)
class External:
    branches: tuple[Branch, ...]
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Internal:
    branches: tuple[Branch, ...]
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Rec:
    var: str
    body: "SessionType"
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class End:
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


SessionType = Union[External, Internal, Rec, Var, End]
Choice = (External, Internal)


# ---------------------------------------------------------------- parsing


class PSTSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<number>-?\d[\w.+-]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[&+{},?!()\[\].:*])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"rec", "end"}


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    line, line_start, i = 1, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise PSTSyntaxError(f"unexpected character {source[i]!r}", line, i - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, text, line, i - line_start + 1))
        for k, ch in enumerate(text):
            if ch == "\n":
                line += 1
                line_start = i + k + 1
        i = m.end()
    tokens.append(_Token("eof", "", line, i - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Optional[_Token] = None):
        tok = tok or self.tok
        return PSTSyntaxError(message, tok.line, tok.col)

    def describe(self, tok: _Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def advance(self) -> _Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind not in ("punct", "ident"):
            raise self.error(f"expected {text!r}, found {self.describe(self.tok)}")
        return self.advance()

    def ident(self, what: str) -> _Token:
        if self.tok.kind != "ident" or self.tok.text in _KEYWORDS:
            raise self.error(f"expected {what}, found {self.describe(self.tok)}")
        return self.advance()

    def parse(self) -> SessionType:
        t = self.type_()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.describe(self.tok)} after type")
        return t

    def type_(self) -> SessionType:
        tok = self.tok
        pos = (tok.line, tok.col)
        if tok.kind == "ident":
            if tok.text == "rec":
                self.advance()
                var = self.ident("recursion variable").text
                self.expect(".")
                return Rec(var, self.type_(), pos)
            if tok.text == "end":
                self.advance()
                return End(pos)
            self.advance()
            return Var(tok.text, pos)
        if tok.text == "&":
            self.advance()
            return External(self.branches("?"), pos)
        if tok.text == "+":
            self.advance()
            return Internal(self.branches("!"), pos)
        raise self.error(f"expected a session type, found {self.describe(tok)}")

    def branches(self, direction: str) -> tuple[Branch, ...]:
        self.expect("{")
        out = [self.branch(direction)]
        while self.tok.text == ",":
            self.advance()
            out.append(self.branch(direction))
        self.expect("}")
        return tuple(out)

    def branch(self, direction: str) -> Branch:
        tok = self.tok
        if tok.text != direction:
            where = "external" if direction == "?" else "internal"
            raise self.error(f"expected {direction!r} in {where} choice, found {self.describe(tok)}")
        self.advance()
        label = self.ident("label")
        payload: list[tuple[str, Sort]] = []
        if self.tok.text == "(":
            self.advance()
            if self.tok.text != ")":
                payload.append(self.param())
                while self.tok.text == ",":
                    self.advance()
                    payload.append(self.param())
            self.expect(")")
        self.expect("[")
        annotation = self.annotation()
        self.expect("]")
        self.expect(".")
        cont = self.type_()
        return Branch(label.text, tuple(payload), annotation, cont, (label.line, label.col))

    def param(self) -> tuple[str, Sort]:
        name = self.ident("payload field name").text
        self.expect(":")
        tok = self.ident("sort")
        try:
            return name, Sort(tok.text)
        except ValueError:
            raise self.error(f"unknown sort {tok.text!r}", tok) from None

    def prob(self) -> float:
        tok = self.tok
        if tok.kind != "number":
            raise self.error(f"expected a probability, found {self.describe(tok)}")
        self.advance()
        try:
            value = float(tok.text)
        except ValueError:
            raise self.error(f"malformed probability literal {tok.text!r}", tok) from None
        if not math.isfinite(value) or tok.text.startswith("-"):
            raise self.error(f"malformed probability literal {tok.text!r}", tok)
        return value

    def annotation(self) -> ProbAnnotation:
        if self.tok.text == "*":
            self.advance()
            if self.tok.text == ",":
                self.advance()
                return ProbAnnotation.upper_only(self.prob())
            return ProbAnnotation.unchecked()
        p = self.prob()
        if self.tok.text == ",":
            self.advance()
            self.expect("*")
            return ProbAnnotation.lower_only(p)
        return ProbAnnotation.exact(p)


def parse(source: str) -> SessionType:
    """Parse PST source text; raises PSTSyntaxError with line/column."""
    return _Parser(source).parse()


# ----------------------------------------------------------- pretty-print


def pretty(t: SessionType, indent: Optional[int] = None) -> str:
    """Render ``t`` in the concrete syntax.

    With ``indent`` set, each branch goes on its own line.
    """
    return _pretty(t, indent, 0)


def _pretty(t: SessionType, indent: Optional[int], depth: int) -> str:
    if isinstance(t, End):
        return "end"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Rec):
        return f"rec {t.var} . {_pretty(t.body, indent, depth)}"
    opener, mark = ("&", "?") if isinstance(t, External) else ("+", "!")
    parts = []
    for b in t.branches:
        params = ""
        if b.payload:
            params = "(" + ", ".join(f"{n}:{s.value}" for n, s in b.payload) + ")"
        cont = _pretty(b.cont, indent, depth + 1)
        parts.append(f"{mark}{b.label}{params}[{b.annotation}] . {cont}")
    if indent is None:
        return opener + "{ " + ", ".join(parts) + " }"
    pad = " " * (indent * (depth + 1))
    close = " " * (indent * depth)
    return opener + "{\n" + ",\n".join(pad + p for p in parts) + "\n" + close + "}"


# ------------------------------------------------------------- validation


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    pos: Optional[Position] = None

    def __str__(self) -> str:
        if self.pos:
            return f"{self.pos[0]}:{self.pos[1]}: {self.message}"
        return self.message


def validate(t: SessionType) -> list[Diagnostic]:
    """Return one diagnostic per well-formedness violation (empty when valid)."""
    out: list[Diagnostic] = []
    _check(t, {}, out)
    return out


def _check(t: SessionType, env: dict[str, bool], out: list[Diagnostic]) -> None:
    # env maps each bound variable to whether a choice prefix separates it from its binder
    if isinstance(t, End):
        return
    if isinstance(t, Var):
        if t.name not in env:
            out.append(Diagnostic("unbound-variable", f"unbound recursion variable {t.name!r}", t.pos))
        elif not env[t.name]:
            out.append(Diagnostic("unguarded-recursion", f"unguarded recursion on {t.name!r}", t.pos))
        return
    if isinstance(t, Rec):
        _check(t.body, {**env, t.var: False}, out)
        return
    if not t.branches:
        out.append(Diagnostic("empty-choice", "choice point has no branches", t.pos))
        return
    seen = set()
    for b in t.branches:
        if b.label in seen:
            out.append(Diagnostic("duplicate-label", f"duplicate label {b.label!r}", b.pos))
        seen.add(b.label)
        p = b.annotation.p
        if b.annotation.kind is not AnnotationKind.UNCHECKED and not (0.0 < p <= 1.0):
            out.append(Diagnostic(
                "probability-range", f"probability {format_prob(p)} of {b.label!r} is outside (0, 1]", b.pos))
    numeric = [b.annotation.p for b in t.branches if b.annotation.p is not None]
    mass = math.fsum(numeric)
    has_wildcard = any(b.annotation.kind is AnnotationKind.UNCHECKED for b in t.branches)
    labels = ", ".join(b.label for b in t.branches)
    if has_wildcard:
        if mass > 1.0 + MASS_TOLERANCE:
            out.append(Diagnostic("mass-sum", f"probabilities of {{{labels}}} sum to {mass:g} > 1", t.pos))
    elif abs(mass - 1.0) > MASS_TOLERANCE:
        out.append(Diagnostic("mass-sum", f"probabilities of {{{labels}}} sum to {mass:g}, not 1", t.pos))
    guarded = dict.fromkeys(env, True)
    for b in t.branches:
        _check(b.cont, guarded, out)


class InvalidSessionType(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


def load(source: str) -> SessionType:
    """Parse and validate; raises on any syntax error or diagnostic."""
    t = parse(source)
    diagnostics = validate(t)
    if diagnostics:
        raise InvalidSessionType(diagnostics)
    return t


# ------------------------------------------------------------------ duality


def dual(t: SessionType) -> SessionType:
    if isinstance(t, (End, Var)):
        return t
    if isinstance(t, Rec):
        return Rec(t.var, dual(t.body), t.pos)
    branches = tuple(Branch(b.label, b.payload, b.annotation, dual(b.cont), b.pos) for b in t.branches)
    if isinstance(t, External):
        return Internal(branches, t.pos)
    return External(branches, t.pos)


def choice_nodes(t: SessionType) -> Iterator[Union[External, Internal]]:
    """Yield every choice node in pre-order."""
    if isinstance(t, Rec):
        yield from choice_nodes(t.body)
    elif isinstance(t, Choice):
        yield t
        for b in t.branches:
            yield from choice_nodes(b.cont)


# ------------------------------------------------------ choice point table


class Direction(enum.Enum):
    EXTERNAL = "external"
    INTERNAL = "internal"


@dataclass(frozen=True)
class TableBranch:
    label: str
    payload: tuple[tuple[str, Sort], ...]
    annotation: ProbAnnotation
    successor: Optional[int]  # None means the session ends

    @property
    def sorts(self) -> tuple[Sort, ...]:
        return tuple(s for _, s in self.payload)


@dataclass(frozen=True)
class ChoicePoint:
    index: int
    direction: Direction
    branches: tuple[TableBranch, ...]

    def branch(self, label: str) -> Optional[TableBranch]:
        for b in self.branches:
            if b.label == label:
                return b
        return None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(b.label for b in self.branches)


@dataclass(frozen=True)
class ChoicePointTable:
    entries: dict[int, ChoicePoint]
    initial: Optional[int]

    def __getitem__(self, j: int) -> ChoicePoint:
        return self.entries[j]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ChoicePoint]:
        return iter(self.entries[j] for j in sorted(self.entries))

    def format(self) -> str:
        lines = [f"initial: {'end' if self.initial is None else self.initial}"]
        for cp in self:
            lines.append(f"{cp.index}: {cp.direction.value}")
            for b in cp.branches:
                sorts = ",".join(s.value for s in b.sorts)
                nxt = "end" if b.successor is None else str(b.successor)
                lines.append(f"    {b.label}({sorts}) [{b.annotation}] -> {nxt}")
        return "\n".join(lines)


def build_table(t: SessionType) -> ChoicePointTable:
    """Number choice points in pre-order and link branches to successors.

    A recursion variable resolves to the index of its binder's first choice
    point, so loop iterations revisit (and keep counting on) the same index.
    """
    entries: dict[int, ChoicePoint] = {}
    counter = [0]

    def resolve(node: SessionType, env: dict[str, Optional[int]]) -> Optional[int]:
        if isinstance(node, End):
            return None
        if isinstance(node, Var):
            if node.name not in env:
                raise InvalidSessionType([Diagnostic("unbound-variable", f"unbound {node.name!r}", node.pos)])
            return env[node.name]
        if isinstance(node, Rec):
            bound = []
            core: SessionType = node
            while isinstance(core, Rec):
                bound.append(core.var)
                core = core.body
            if isinstance(core, Var) and core.name in bound:
                raise InvalidSessionType(
                    [Diagnostic("unguarded-recursion", f"unguarded recursion on {core.name!r}", core.pos)])
            if isinstance(core, Var):
                return resolve(core, env)
            target = counter[0] if isinstance(core, Choice) else None
            return resolve(core, {**env, **dict.fromkeys(bound, target)})
        j = counter[0]
        counter[0] += 1
        direction = Direction.EXTERNAL if isinstance(node, External) else Direction.INTERNAL
        branches = tuple(
            TableBranch(b.label, b.payload, b.annotation, resolve(b.cont, env)) for b in node.branches)
        entries[j] = ChoicePoint(j, direction, branches)
        return j

    initial = resolve(t, {})
    return ChoicePointTable(entries, initial)
