"""Structural scanning of Verilog-2001 text.

Only module headers, port declarations, named/positional instantiations and
continuous assigns are recognised. That is all the framework needs to build
the instance graph and to lint port widths against an interface definition.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

KEYWORDS = {
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "logic", "signed",
    "assign", "always", "initial", "begin", "end", "if", "else", "case", "endcase", "for",
    "posedge", "negedge", "or", "and", "not", "parameter", "localparam", "integer",
    "default", "function", "endfunction", "task", "endtask", "generate", "endgenerate",
    "genvar",
}
_LITERAL = re.compile(r"\d*\s*'\s*[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ_?]+|\b\d+\b")
_IDENT = re.compile(r"[A-Za-z_][\w$]*(?:\.[A-Za-z_][\w$]*)*")
_RANGE = re.compile(r"\[\s*(\d+)\s*:\s*(\d+)\s*\]")
_DIR_DECL = re.compile(
    r"\b(input|output|inout)\b\s*(?:wire|reg|logic)?\s*(signed)?\s*(\[[^\]]*\])?\s*([^;]*?);")


def strip_comments(code: str) -> str:
    def blank(m):
        return re.sub(r"[^\n]", " ", m.group(0))
    code = re.sub(r"/\*.*?\*/", blank, code, flags=re.S)
    return re.sub(r"//[^\n]*", blank, code)


def range_width(rng: str | None) -> int | None:
    if not rng:
        return 1
    m = _RANGE.fullmatch(rng.strip())
    if not m:
        return None
    return abs(int(m.group(1)) - int(m.group(2))) + 1


@dataclass
class VPort:
    name: str
    direction: str
    width: int | None
    signed: bool = False


@dataclass
class VModule:
    name: str
    ports: list
    start: int
    body_start: int
    end: int  # offset of the `endmodule` keyword

    def port(self, name: str) -> VPort | None:
        for p in self.ports:
            if p.name == name:
                return p
        return None

    @property
    def port_names(self) -> list[str]:
        return [p.name for p in self.ports]


@dataclass
class VInstance:
    module: str
    name: str
    connections: dict = field(default_factory=dict)
    offset: int = 0


_MODULE = re.compile(r"\bmodule\s+([A-Za-z_]\w*)\s*(#\s*\((?:[^()]|\([^()]*\))*\)\s*)?")


def find_modules(code: str) -> list[VModule]:
    clean = strip_comments(code)
    mods = []
    for m in _MODULE.finditer(clean):
        pos = m.end()
        header = ""
        if pos < len(clean) and clean[pos] == "(":
            close = _balanced(clean, pos)
            header = clean[pos + 1:close - 1]
            pos = close
        semi = clean.find(";", pos)
        if semi < 0:
            continue
        end = clean.find("endmodule", semi)
        end = len(clean) if end < 0 else end
        body = clean[semi + 1:end]
        mods.append(VModule(m.group(1), _ports(header, body), m.start(), semi + 1, end))
    return mods


def _ports(header: str, body: str) -> list[VPort]:
    ports: list[VPort] = []
    if re.search(r"\b(input|output|inout)\b", header):
        cur = None
        for item in _split_top(header, ","):
            item = item.strip()
            if not item:
                continue
            m = re.match(r"(?:(input|output|inout)\b\s*(?:wire|reg|logic)?\s*(signed)?\s*"
                         r"(\[[^\]]*\])?)?\s*([A-Za-z_]\w*)\s*$", item)
            if not m:
                continue
            if m.group(1):
                cur = (m.group(1), bool(m.group(2)), range_width(m.group(3)))
            if cur is None:
                continue
            ports.append(VPort(m.group(4), cur[0], cur[2], cur[1]))
        return ports
    names = [n.strip() for n in header.split(",") if n.strip()]
    decl = {}
    for m in _DIR_DECL.finditer(body):
        width = range_width(m.group(3))
        for n in m.group(4).split(","):
            n = n.strip()
            if re.fullmatch(r"[A-Za-z_]\w*", n):
                decl[n] = VPort(n, m.group(1), width, bool(m.group(2)))
    for n in names:
        ports.append(decl.get(n, VPort(n, "unknown", None)))
    return ports


def _balanced(text: str, i: int) -> int:
    """Index just past the parenthesis matching ``text[i] == '('``."""
    depth = 0
    for j in range(i, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return j + 1
    return len(text)


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for c in text:
        if c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        if c == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(c)
    parts.append("".join(cur))
    return parts


def find_instances(code: str, module: VModule, known: dict) -> list[VInstance]:
    """Instantiations of modules in ``known`` (name -> VModule) inside ``module``."""
    clean = strip_comments(code)
    body = clean[module.body_start:module.end]
    out = []
    pat = re.compile(r"\b([A-Za-z_]\w*)\s*(#\s*\((?:[^()]|\([^()]*\))*\)\s*)?([A-Za-z_]\w*)\s*\(")
    pos = 0
    while True:
        m = pat.search(body, pos)
        if not m:
            break
        if m.group(1) not in known:
            pos = m.start() + 1
            continue
        open_i = m.end() - 1
        close = _balanced(body, open_i)
        inner = body[open_i + 1:close - 1]
        target = known[m.group(1)]
        conns = {}
        items = [s.strip() for s in _split_top(inner, ",") if s.strip()]
        for k, item in enumerate(items):
            nm = re.fullmatch(r"\.\s*([A-Za-z_]\w*)\s*\((.*)\)", item, re.S)
            if nm:
                conns[nm.group(1)] = " ".join(nm.group(2).split())
            elif k < len(target.ports):
                conns[target.ports[k].name] = " ".join(item.split())
        out.append(VInstance(m.group(1), m.group(3), conns, module.body_start + m.start()))
        pos = close
    return out


def find_assigns(code: str, module: VModule) -> list[tuple[str, str]]:
    clean = strip_comments(code)
    body = clean[module.body_start:module.end]
    out = []
    for m in re.finditer(r"\bassign\s+(.+?)\s*=\s*([^;]+);", body, re.S):
        out.append((" ".join(m.group(1).split()), " ".join(m.group(2).split())))
    # net declaration assignments: wire [7:0] n = expr;
    decl = r"\bwire\b\s*(?:signed)?\s*(?:\[[^\]]*\])?\s*([A-Za-z_]\w*)\s*=\s*([^;]+);"
    for m in re.finditer(decl, body, re.S):
        out.append((m.group(1), " ".join(m.group(2).split())))
    return out


def find_wire_widths(code: str, module: VModule) -> dict:
    clean = strip_comments(code)
    body = clean[module.body_start:module.end]
    out = {}
    for m in re.finditer(r"\b(?:wire|reg)\b\s*(signed)?\s*(\[[^\]]*\])?\s*([^;=]+)[;=]", body):
        width = range_width(m.group(2))
        for n in m.group(3).split(","):
            n = n.strip()
            if re.fullmatch(r"[A-Za-z_]\w*", n):
                out[n] = width
    return out


def identifiers(expr: str) -> list[str]:
    """Signal identifiers referenced by an expression (literals removed, order kept)."""
    expr = _LITERAL.sub(" ", expr)
    seen = []
    for tok in _IDENT.findall(expr):
        base = tok.split("[")[0]
        if base in KEYWORDS or base in seen:
            continue
        seen.append(base)
    return seen


def base_signal(expr: str) -> str | None:
    """Identifier when ``expr`` is a bare signal (optionally bit-selected), else None."""
    m = re.fullmatch(r"([A-Za-z_][\w$]*)\s*(\[[^\]]*\])?", expr.strip())
    return m.group(1) if m else None
