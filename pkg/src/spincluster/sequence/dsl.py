"""Pulse-sequence data model and its line-oriented text format.

Grammar (one statement per line or ``;``-separated, ``#`` starts a comment)::

    seq      := stmt+
    stmt     := "sequence" NAME
              | "sweep" IDENT UNIT NUMBER NUMBER INT
              | step ("&" step)*
    step     := "pulse" CHAN AXIS ANGLE ["freq" FREQ] ["alt"]
              | "delay" DUR
              | "lock" CHAN SIGN DUR ["alt"]
              | "pump" DUR
              | "readout"
    CHAN     := "NV" | "N"
    AXIS     := "x" | "y" | "-x" | "-y" | NUMBER (degrees) | IDENT
    SIGN     := "+" | "-"
    DUR      := NUMBER TIME_UNIT | IDENT ["/" INT]
    FREQ     := NUMBER FREQ_UNIT | IDENT

Steps joined by ``&`` start together.  ``alt`` flips a pulse phase by 180
degrees, or a lock direction, on every odd shot.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

TIME_UNITS = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
ANGLE_UNITS = {"deg": 1.0}
UNIT_KIND = {**{u: "time" for u in TIME_UNITS}, **{u: "freq" for u in FREQ_UNITS}, "deg": "angle"}
AXES = {"x": 0.0, "y": 90.0, "-x": 180.0, "-y": 270.0}
CHANNELS = ("NV", "N")

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NUMBER = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_QUANTITY = re.compile(r"([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*([A-Za-z]+)\Z")


class SequenceError(ValueError):
    def __init__(self, message: str, line: int, column: int, expected=None):
        self.line = line
        self.column = column
        self.expected = tuple(expected or ())
        self.message = message
        detail = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"line {line}, column {column}: {message}{detail}")


class SequenceSyntaxError(SequenceError):
    pass


class SequenceSemanticError(SequenceError):
    pass


@dataclass(frozen=True)
class Sym:
    """Reference to the sweep variable, optionally divided by an integer."""

    name: str
    divisor: int = 1

    def __str__(self):
        return self.name if self.divisor == 1 else f"{self.name}/{self.divisor}"


@dataclass(frozen=True)
class SweepVar:
    name: str
    unit: str
    start: float
    stop: float
    count: int

    @property
    def kind(self) -> str:
        return UNIT_KIND[self.unit]

    def grid(self):
        """Sweep values in SI units (s, Hz) or degrees for angles."""
        import numpy as np

        scale = {**TIME_UNITS, **FREQ_UNITS, **ANGLE_UNITS}[self.unit]
        return np.linspace(self.start, self.stop, self.count) * scale


@dataclass(frozen=True)
class PulseStep:
    kind: str                      # pulse | delay | lock | pump | readout
    channel: str = ""              # NV | N | optical
    phase_deg: float | Sym | None = None
    angle_deg: float | None = None
    duration: float | Sym | None = None  # seconds
    freq: float | Sym | None = None      # Hz
    sign: int | None = None
    alt: bool = False
    parallel: bool = False         # starts together with the previous step

    @property
    def axis_phase(self) -> float | Sym | None:
        """Pulse phase in radians (a ``Sym`` when swept)."""
        if self.phase_deg is None or isinstance(self.phase_deg, Sym):
            return self.phase_deg
        return math.radians(self.phase_deg)

    @property
    def angle(self) -> float | None:
        return None if self.angle_deg is None else math.radians(self.angle_deg)

    @property
    def sweep_tag(self) -> str | None:
        for v in (self.phase_deg, self.duration, self.freq):
            if isinstance(v, Sym):
                return v.name
        return None


@dataclass(frozen=True)
class PulseSequence:
    name: str
    steps: tuple[PulseStep, ...]
    sweep: SweepVar | None = None

    def blocks(self) -> list[list[PulseStep]]:
        out: list[list[PulseStep]] = []
        for s in self.steps:
            if s.parallel and out:
                out[-1].append(s)
            else:
                out.append([s])
        return out

    @property
    def has_alternation(self) -> bool:
        return any(s.alt for s in self.steps)

    def without_channel(self, channel: str, name: str | None = None) -> "PulseSequence":
        """Copy with every step on ``channel`` removed (block structure kept)."""
        steps = []
        for block in self.blocks():
            kept = [s for s in block if s.channel != channel]
            steps += [replace(s, parallel=i > 0) for i, s in enumerate(kept)]
        return PulseSequence(name or f"{self.name}_REF", tuple(steps), self.sweep)


# ---- tokenizer -------------------------------------------------------------

@dataclass
class _Tok:
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[list[_Tok]]:
    """Split into statements (lists of tokens) keeping 1-based positions."""
    stmts: list[list[_Tok]] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        cur: list[_Tok] = []
        for m in re.finditer(r"[;&]|[^\s;&]+", line):
            t = m.group(0)
            if t == ";":
                if cur:
                    stmts.append(cur)
                cur = []
            else:
                cur.append(_Tok(t, ln, m.start() + 1))
        if cur:
            stmts.append(cur)
    return stmts


class _Cursor:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self, expected) -> _Tok:
        t = self.peek()
        if t is None:
            last = self.toks[-1]
            raise SequenceSyntaxError("unexpected end of statement", last.line,
                                      last.col + len(last.text), expected)
        self.i += 1
        return t

    def done(self) -> bool:
        return self.i >= len(self.toks)


def _number(tok: _Tok, what: str) -> float:
    if not _NUMBER.fullmatch(tok.text):
        raise SequenceSyntaxError(f"invalid {what} {tok.text!r}", tok.line, tok.col, ["number"])
    v = float(tok.text)
    if not math.isfinite(v):
        raise SequenceSyntaxError(f"non-finite {what}", tok.line, tok.col, ["number"])
    return v


def _quantity(cur: _Cursor, units: dict, what: str, allow_divisor: bool):
    """A literal with unit (``200ns`` or ``200 ns``) or a sweep reference."""
    tok = cur.next([f"{what}"])
    m = _QUANTITY.fullmatch(tok.text)
    if m:
        unit = m.group(2)
        if unit not in units:
            raise SequenceSyntaxError(f"unknown unit {unit!r}", tok.line, tok.col, sorted(units))
        return float(m.group(1)) * units[unit], tok
    if _NUMBER.fullmatch(tok.text):
        nxt = cur.peek()
        if nxt is not None and nxt.text in units:
            cur.next([])
            return float(tok.text) * units[nxt.text], tok
        if nxt is not None and nxt.text.isalpha():
            raise SequenceSyntaxError(f"unknown unit {nxt.text!r}", nxt.line, nxt.col, sorted(units))
        raise SequenceSyntaxError(f"{what} needs a unit", tok.line, tok.col + len(tok.text),
                                  sorted(units))
    name, _, div = tok.text.partition("/")
    if _IDENT.match(name):
        if div:
            if not allow_divisor or not div.isdigit() or int(div) < 1:
                raise SequenceSyntaxError(f"invalid divisor in {tok.text!r}", tok.line, tok.col,
                                          ["positive integer"])
            return Sym(name, int(div)), tok
        return Sym(name), tok
    raise SequenceSyntaxError(f"invalid {what} {tok.text!r}", tok.line, tok.col,
                              [f"number with unit", "sweep variable"])


def _channel(cur: _Cursor) -> str:
    tok = cur.next(list(CHANNELS))
    if tok.text not in CHANNELS:
        raise SequenceSemanticError(f"unknown channel {tok.text!r}", tok.line, tok.col, CHANNELS)
    return tok.text


def _parse_step(cur: _Cursor, parallel: bool) -> tuple[PulseStep, _Tok]:
    head = cur.next(["pulse", "delay", "lock", "pump", "readout"])
    kw = head.text
    if kw == "pulse":
        ch = _channel(cur)
        ax = cur.next(["axis"])
        if ax.text in AXES:
            phase = AXES[ax.text]
        elif _NUMBER.fullmatch(ax.text):
            phase = _number(ax, "phase")
        elif _IDENT.match(ax.text):
            phase = Sym(ax.text)
        else:
            raise SequenceSyntaxError(f"invalid axis {ax.text!r}", ax.line, ax.col,
                                      list(AXES) + ["phase in degrees", "sweep variable"])
        angle = _number(cur.next(["angle in degrees"]), "angle")
        freq = None
        alt = False
        while not cur.done() and cur.peek().text != "&":
            t = cur.next(["freq", "alt"])
            if t.text == "freq" and freq is None:
                freq, _ = _quantity(cur, FREQ_UNITS, "frequency", allow_divisor=False)
            elif t.text == "alt" and not alt:
                alt = True
            else:
                raise SequenceSyntaxError(f"unexpected {t.text!r}", t.line, t.col, ["freq", "alt", "&"])
        return PulseStep("pulse", ch, phase_deg=phase, angle_deg=angle, freq=freq, alt=alt,
                         parallel=parallel), head
    if kw == "delay":
        dur, _ = _quantity(cur, TIME_UNITS, "duration", allow_divisor=True)
        return PulseStep("delay", "", duration=dur, parallel=parallel), head
    if kw == "lock":
        ch = _channel(cur)
        s = cur.next(["+", "-"])
        if s.text not in ("+", "-"):
            raise SequenceSyntaxError(f"invalid lock sign {s.text!r}", s.line, s.col, ["+", "-"])
        dur, _ = _quantity(cur, TIME_UNITS, "duration", allow_divisor=True)
        alt = False
        if not cur.done() and cur.peek().text == "alt":
            cur.next([])
            alt = True
        return PulseStep("lock", ch, duration=dur, sign=1 if s.text == "+" else -1, alt=alt,
                         parallel=parallel), head
    if kw == "pump":
        dur, _ = _quantity(cur, TIME_UNITS, "duration", allow_divisor=True)
        return PulseStep("pump", "optical", duration=dur, parallel=parallel), head
    if kw == "readout":
        return PulseStep("readout", "NV", parallel=parallel), head
    raise SequenceSyntaxError(f"unknown statement {kw!r}", head.line, head.col,
                              ["sequence", "sweep", "pulse", "delay", "lock", "pump", "readout"])


def parse_sequence(text: str, name: str = "custom") -> PulseSequence:
    stmts = _tokenize(text)
    if not stmts:
        raise SequenceSyntaxError("empty sequence", 1, 1, ["sequence", "sweep", "pulse", "delay",
                                                           "lock", "pump", "readout"])
    sweep: SweepVar | None = None
    steps: list[tuple[PulseStep, _Tok]] = []
    seen_name = False
    for toks in stmts:
        cur = _Cursor(toks)
        first = cur.peek()
        if first.text == "sequence":
            cur.next([])
            t = cur.next(["name"])
            if seen_name or not re.fullmatch(r"[A-Za-z0-9_.\-+]+", t.text):
                raise SequenceSyntaxError("invalid or repeated sequence name", t.line, t.col, ["name"])
            name, seen_name = t.text, True
        elif first.text == "sweep":
            cur.next([])
            ident = cur.next(["identifier"])
            if not _IDENT.match(ident.text):
                raise SequenceSyntaxError(f"invalid sweep name {ident.text!r}", ident.line,
                                          ident.col, ["identifier"])
            unit = cur.next(["unit"])
            if unit.text not in UNIT_KIND:
                raise SequenceSyntaxError(f"unknown unit {unit.text!r}", unit.line, unit.col,
                                          sorted(UNIT_KIND))
            start = _number(cur.next(["start"]), "start")
            stop = _number(cur.next(["stop"]), "stop")
            ct = cur.next(["count"])
            if not ct.text.isdigit() or int(ct.text) < 1:
                raise SequenceSyntaxError("sweep count must be a positive integer", ct.line,
                                          ct.col, ["positive integer"])
            if sweep is not None:
                raise SequenceSemanticError("only one sweep variable may be declared",
                                            first.line, first.col)
            sweep = SweepVar(ident.text, unit.text, start, stop, int(ct.text))
        else:
            parallel = False
            while True:
                step, tok = _parse_step(cur, parallel)
                steps.append((step, tok))
                if cur.done():
                    break
                amp = cur.next(["&"])
                if amp.text != "&":
                    raise SequenceSyntaxError(f"unexpected {amp.text!r}", amp.line, amp.col, ["&"])
                if cur.done():
                    raise SequenceSyntaxError("dangling '&'", amp.line, amp.col + 1,
                                              ["pulse", "delay", "lock"])
                parallel = True
        if not cur.done():
            t = cur.peek()
            raise SequenceSyntaxError(f"unexpected {t.text!r}", t.line, t.col, ["end of statement"])
    _check(steps, sweep)
    return PulseSequence(name, tuple(s for s, _ in steps), sweep)


def _check(steps, sweep: SweepVar | None) -> None:
    if not steps:
        raise SequenceSemanticError("sequence has no steps", 1, 1)
    readouts = [tok for s, tok in steps if s.kind == "readout"]
    if len(readouts) > 1:
        t = readouts[1]
        raise SequenceSemanticError("duplicate readout", t.line, t.col)
    if readouts and steps[-1][0].kind != "readout":
        t = readouts[0]
        raise SequenceSemanticError("readout must be the last step", t.line, t.col)
    for s, tok in steps:
        for attr, kind in (("phase_deg", "angle"), ("duration", "time"), ("freq", "freq")):
            v = getattr(s, attr)
            if not isinstance(v, Sym):
                continue
            if sweep is None or v.name != sweep.name:
                raise SequenceSemanticError(f"unbound sweep variable {v.name!r}", tok.line, tok.col)
            if sweep.kind != kind:
                raise SequenceSemanticError(
                    f"sweep variable {v.name!r} has unit {sweep.unit}, cannot be used as {attr}",
                    tok.line, tok.col)
            if v.divisor != 1 and attr != "duration":
                raise SequenceSemanticError("divisors are only allowed on durations",
                                            tok.line, tok.col)
        if s.kind in ("delay", "lock", "pump") and not isinstance(s.duration, Sym) and s.duration < 0:
            raise SequenceSemanticError("durations must be non-negative", tok.line, tok.col)
        if s.kind in ("pump", "readout") and s.parallel:
            raise SequenceSemanticError(f"{s.kind} cannot run in parallel", tok.line, tok.col)
        if s.kind == "delay" and s.parallel:
            raise SequenceSemanticError("delay cannot run in parallel", tok.line, tok.col)
        if s.freq is not None and s.channel != "N":
            raise SequenceSemanticError("only N pulses take a drive frequency", tok.line, tok.col)
    block: list = []
    for s, tok in steps + [(None, None)]:
        if s is not None and s.parallel:
            head = block[0][0]
            if s.kind != head.kind:
                raise SequenceSemanticError(f"cannot run {s.kind} in parallel with {head.kind}",
                                            tok.line, tok.col)
            if any(b.channel == s.channel for b, _ in block):
                raise SequenceSemanticError(f"channel {s.channel} used twice in one block",
                                            tok.line, tok.col)
            if s.kind == "lock" and s.duration != head.duration:
                raise SequenceSemanticError("parallel locks must have equal durations",
                                            tok.line, tok.col)
            block.append((s, tok))
        else:
            block = [(s, tok)]


# ---- printer ---------------------------------------------------------------

def _fmt_num(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _fmt_quantity(v, units: dict) -> str:
    if isinstance(v, Sym):
        return str(v)
    # smallest unit whose printed value reads back to exactly the same float
    for unit, scale in sorted(units.items(), key=lambda kv: kv[1]):
        text = _fmt_num(v / scale)
        if float(text) * scale == v and abs(v / scale) < 1e4:
            return f"{text}{unit}"
    base = next(u for u, s in units.items() if s == 1.0)
    return f"{_fmt_num(v)}{base}"


def _fmt_step(s: PulseStep) -> str:
    if s.kind == "pulse":
        if isinstance(s.phase_deg, Sym):
            ax = str(s.phase_deg)
        else:
            ax = next((k for k, v in AXES.items() if v == s.phase_deg), _fmt_num(s.phase_deg))
        out = f"pulse {s.channel} {ax} {_fmt_num(s.angle_deg)}"
        if s.freq is not None:
            out += f" freq {_fmt_quantity(s.freq, FREQ_UNITS)}"
        return out + (" alt" if s.alt else "")
    if s.kind == "delay":
        return f"delay {_fmt_quantity(s.duration, TIME_UNITS)}"
    if s.kind == "lock":
        sign = "+" if s.sign > 0 else "-"
        return (f"lock {s.channel} {sign} {_fmt_quantity(s.duration, TIME_UNITS)}"
                + (" alt" if s.alt else ""))
    if s.kind == "pump":
        return f"pump {_fmt_quantity(s.duration, TIME_UNITS)}"
    return "readout"


def print_sequence(seq: PulseSequence) -> str:
    lines = [f"sequence {seq.name}"]
    if seq.sweep is not None:
        sw = seq.sweep
        lines.append(f"sweep {sw.name} {sw.unit} {_fmt_num(sw.start)} {_fmt_num(sw.stop)} {sw.count}")
    for block in seq.blocks():
        lines.append(" & ".join(_fmt_step(s) for s in block))
    return "\n".join(lines) + "\n"
