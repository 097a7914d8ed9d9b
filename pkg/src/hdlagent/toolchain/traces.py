"""Canonical port traces (TraceV1) and normalisation of simulator dumps.

TraceV1 is line oriented::

    #port <name> <width>
    ...
    <sample_index> <name> <hex>

Hex values are lowercase and zero padded to ``ceil(width / 4)`` digits. Other
lines starting with ``#`` are comments and blank lines are ignored.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from ..errors import TraceParseError, TraceSchemaError

_HEX = re.compile(r"[0-9a-fA-F]+")


class Dialect(str, enum.Enum):
    TraceV1 = "TraceV1"
    ValueChange = "ValueChange"


@dataclass(frozen=True)
class PortDecl:
    name: str
    width: int

    @property
    def digits(self) -> int:
        return (self.width + 3) // 4


@dataclass(frozen=True)
class Sample:
    index: int
    port: str
    value_hex: str

    @property
    def value(self) -> int:
        return int(self.value_hex, 16)


@dataclass(frozen=True)
class PortTrace:
    header: tuple = ()
    samples: tuple = ()
    _widths: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "_widths", {p.name: p.width for p in self.header})

    @property
    def widths(self) -> dict:
        return dict(self._widths)

    @property
    def ports(self) -> list[str]:
        return [p.name for p in self.header]

    @property
    def indices(self) -> list[int]:
        return sorted({s.index for s in self.samples})

    def table(self) -> dict:
        """(sample_index, port) -> hex."""
        return {(s.index, s.port): s.value_hex for s in self.samples}

    def values(self, port: str) -> list[str]:
        return [s.value_hex for s in self.samples if s.port == port]

    def subset(self, ports) -> "PortTrace":
        keep = set(ports)
        return PortTrace([p for p in self.header if p.name in keep],
                         [s for s in self.samples if s.port in keep])

    def rename(self, mapping: dict) -> "PortTrace":
        return PortTrace([PortDecl(mapping.get(p.name, p.name), p.width) for p in self.header],
                         [Sample(s.index, mapping.get(s.port, s.port), s.value_hex)
                          for s in self.samples])


def format_hex(value: int, width: int) -> str:
    return format(value, f"0{(width + 3) // 4}x")


def serialize_trace(trace: PortTrace) -> str:
    lines = [f"#port {p.name} {p.width}" for p in trace.header]
    lines += [f"{s.index} {s.port} {s.value_hex}" for s in trace.samples]
    return "".join(line + "\n" for line in lines)


def canonical_value(raw: str, width: int, line_no: int | None = None) -> str:
    if not _HEX.fullmatch(raw):
        raise TraceParseError(f"value {raw!r} is not hexadecimal", line_no)
    value = int(raw, 16)
    if value.bit_length() > width:
        raise TraceParseError(f"value {raw} exceeds declared width {width}", line_no)
    return format_hex(value, width)


def parse_trace_v1(text: str) -> PortTrace:
    header: list[PortDecl] = []
    widths: dict = {}
    samples: list[Sample] = []
    seen = set()
    last_index = -1
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#port"):
            toks = line.split()
            if len(toks) != 3 or toks[0] != "#port":
                raise TraceParseError(f"malformed port declaration {line!r}", n)
            if samples:
                raise TraceParseError("port declaration after the first sample", n)
            name = toks[1]
            try:
                width = int(toks[2])
            except ValueError:
                raise TraceParseError(f"width {toks[2]!r} is not an integer", n) from None
            if width < 1:
                raise TraceParseError(f"width of {name} must be >= 1", n)
            if name in widths:
                raise TraceSchemaError(f"port {name} declared twice", n)
            widths[name] = width
            header.append(PortDecl(name, width))
            continue
        if line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 3:
            raise TraceParseError(f"expected '<index> <port> <hex>', got {line!r}", n)
        try:
            index = int(toks[0])
        except ValueError:
            raise TraceParseError(f"sample index {toks[0]!r} is not an integer", n) from None
        if index < 0:
            raise TraceParseError("negative sample index", n)
        if index < last_index:
            raise TraceParseError(f"sample index {index} decreases (previous {last_index})", n)
        port = toks[1]
        if port not in widths:
            raise TraceSchemaError(f"port {port} is not declared", n)
        if (index, port) in seen:
            raise TraceParseError(f"duplicate sample for {port} at index {index}", n)
        seen.add((index, port))
        last_index = index
        samples.append(Sample(index, port, canonical_value(toks[2], widths[port], n)))
    return PortTrace(header, samples)


def _vcd_bits_to_hex(bits: str, width: int, line_no: int) -> str:
    bits = bits.lower()
    if any(b in "xz" for b in bits):
        raise TraceParseError(f"unknown (x/z) value sampled: {bits}", line_no)
    if not re.fullmatch(r"[01]+", bits):
        raise TraceParseError(f"bad binary value {bits!r}", line_no)
    value = int(bits, 2)
    if value.bit_length() > width:
        raise TraceParseError(f"value exceeds width {width}", line_no)
    return format_hex(value, width)


def parse_value_change(text: str, strobe: str | None = None, ports=None) -> PortTrace:
    """Convert a value-change dump into a PortTrace.

    With ``strobe`` set, one sample per kept port is emitted at every timestamp
    where the strobe signal is 1; the sample index counts strobes. Without a
    strobe every timestamp with changes yields samples for the changed ports.
    """
    ids: dict = {}          # vcd id -> list of names
    decls: list[PortDecl] = []
    scope: list[str] = []
    lines = text.splitlines()
    n = 0
    names_seen: dict = {}
    while n < len(lines):
        toks = lines[n].split()
        n += 1
        if not toks:
            continue
        if toks[0] == "$scope" and len(toks) >= 3:
            scope.append(toks[2])
        elif toks[0] == "$upscope":
            scope.pop() if scope else None
        elif toks[0] == "$var":
            if len(toks) < 5:
                raise TraceParseError("malformed $var", n)
            width, code, name = int(toks[2]), toks[3], toks[4]
            if name in names_seen and names_seen[name] != code:
                name = ".".join(scope[1:] + [name]) if len(scope) > 1 else name
            names_seen[name] = code
            if code in ids:
                ids[code].append(name)
            else:
                ids[code] = [name]
            decls.append(PortDecl(name, width))
        elif toks[0] == "$enddefinitions":
            break
    width_of = {d.name: d.width for d in decls}
    keep = [d for d in decls if (ports is None or d.name in ports) and d.name != strobe]
    keep_names = {d.name for d in keep}
    if strobe is not None and strobe not in width_of:
        raise TraceSchemaError(f"strobe signal {strobe} is not declared")

    current: dict = {}
    changed: dict = {}
    samples: list[Sample] = []
    sample_no = 0

    def flush(line_no):
        nonlocal sample_no
        if strobe is not None:
            val = current.get(strobe)
            if val is not None and val[0].lstrip("0") == "1":
                for d in keep:
                    if d.name not in current:
                        raise TraceParseError(f"{d.name} has no value at strobe", line_no)
                    bits, where = current[d.name]
                    samples.append(Sample(sample_no, d.name,
                                          _vcd_bits_to_hex(bits, d.width, where)))
                sample_no += 1
        elif changed:
            for d in keep:
                if d.name in changed:
                    bits, where = changed[d.name]
                    samples.append(Sample(sample_no, d.name,
                                          _vcd_bits_to_hex(bits, d.width, where)))
            sample_no += 1
        changed.clear()

    started = False
    for k in range(n, len(lines)):
        line = lines[k].strip()
        line_no = k + 1
        if not line or line.startswith("$"):
            continue
        if line.startswith("#"):
            if started:
                flush(line_no)
            started = True
            continue
        if line[0] in "bBrR":
            parts = line[1:].split()
            if len(parts) != 2:
                raise TraceParseError(f"malformed vector change {line!r}", line_no)
            bits, code = parts
        elif line[0] in "01xXzZ":
            bits, code = line[0], line[1:].strip()
        else:
            raise TraceParseError(f"unrecognised line {line!r}", line_no)
        if code not in ids:
            raise TraceSchemaError(f"identifier {code} is not declared", line_no)
        for name in ids[code]:
            current[name] = (bits, line_no)
            if name in keep_names:
                changed[name] = (bits, line_no)
    flush(len(lines))
    return PortTrace(keep, samples)


def normalize_dump(raw: bytes, dialect=Dialect.TraceV1, **kwargs) -> PortTrace:
    dialect = Dialect(dialect)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceParseError(f"dump is not UTF-8: {exc}") from exc
    if dialect == Dialect.TraceV1:
        return parse_trace_v1(text)
    return parse_value_change(text, **kwargs)
