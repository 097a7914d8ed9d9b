"""Just enough C scanning to check decomposition rules.

Finds top-level function definitions and parses their parameter lists into
fixed-width port candidates. Not a C parser: macros, K&R definitions and
function pointers are out of reach and reported as unparsable parameters.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

FIXED_WIDTHS = {
    "int8_t": 8, "uint8_t": 8, "int16_t": 16, "uint16_t": 16,
    "int32_t": 32, "uint32_t": 32, "int64_t": 64, "uint64_t": 64,
    "bool": 1, "_Bool": 1,
}
_AP_TYPE = re.compile(r"^(?:ap_u?int|ac_int)\s*<\s*(\d+)\s*(?:,\s*\w+\s*)?>$")
_QUALIFIERS = {"const", "volatile", "signed", "unsigned", "register", "static", "inline",
               "extern", "struct"}


def strip_comments(src: str) -> str:
    """Blank out comments, string/char literals and preprocessor lines; keeps offsets."""
    out = list(src)
    i, n = 0, len(src)

    def blank(a, b):
        for k in range(a, b):
            if out[k] != "\n":
                out[k] = " "

    line_start = True
    while i < n:
        c = src[i]
        if line_start and c in " \t":
            i += 1
            continue
        if line_start and c == "#":
            j = i
            while j < n and src[j] != "\n":
                if src[j] == "\\" and j + 1 < n and src[j + 1] == "\n":
                    j += 2
                    continue
                j += 1
            blank(i, j)
            i = j
            continue
        line_start = False
        if src.startswith("//", i):
            j = src.find("\n", i)
            j = n if j < 0 else j
            blank(i, j)
            i = j
        elif src.startswith("/*", i):
            j = src.find("*/", i + 2)
            j = n if j < 0 else j + 2
            blank(i, j)
            i = j
        elif c in "\"'":
            j = i + 1
            while j < n and src[j] != c:
                j += 2 if src[j] == "\\" else 1
            blank(i + 1, min(j, n))
            i = j + 1
        else:
            if c == "\n":
                line_start = True
            i += 1
    return "".join(out)


@dataclass
class CParam:
    name: str
    ctype: str
    width: int | None
    array_dims: list = field(default_factory=list)
    is_pointer: bool = False
    is_const: bool = False
    unsized_array: bool = False
    raw: str = ""


@dataclass
class CFunction:
    name: str
    return_type: str
    params_text: str
    is_static: bool
    start: int
    body_start: int
    end: int

    @property
    def return_width(self) -> int | None:
        return type_width(self.return_type)

    @property
    def returns_value(self) -> bool:
        return self.return_type.split()[-1] != "void" if self.return_type.strip() else True


_HEADER = re.compile(r"([A-Za-z_][\w\s\*<>,]*?)\b([A-Za-z_]\w*)\s*\(([^;{}]*)\)\s*$", re.S)


def find_functions(src: str) -> list[CFunction]:
    clean = strip_comments(src)
    funcs = []
    depth = 0
    seg_start = 0
    i = 0
    while i < len(clean):
        c = clean[i]
        if c == "{":
            if depth == 0:
                header = clean[seg_start:i]
                m = _HEADER.search(header)
                if m and "=" not in header and not re.search(r"\b(struct|enum|union)\b\s*\w*\s*$",
                                                              header.strip()):
                    ret = " ".join(m.group(1).split())
                    if ret not in ("if", "for", "while", "switch", "return"):
                        words = ret.replace("*", " ").split()
                        funcs.append(CFunction(
                            name=m.group(2),
                            return_type=" ".join(w for w in ret.split()
                                                 if w not in ("static", "inline", "extern")),
                            params_text=" ".join(m.group(3).split()),
                            is_static="static" in words,
                            start=seg_start + m.start(1),
                            body_start=i,
                            end=_match_brace(clean, i),
                        ))
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                seg_start = i + 1
        elif c == ";" and depth == 0:
            seg_start = i + 1
        i += 1
    return funcs


def _match_brace(clean: str, i: int) -> int:
    depth = 0
    for j in range(i, len(clean)):
        if clean[j] == "{":
            depth += 1
        elif clean[j] == "}":
            depth -= 1
            if depth == 0:
                return j + 1
    return len(clean)


def type_width(ctype: str) -> int | None:
    words = [w for w in ctype.replace("*", " ").split() if w not in _QUALIFIERS]
    base = " ".join(words)
    if base in FIXED_WIDTHS:
        return FIXED_WIDTHS[base]
    m = _AP_TYPE.match(base)
    if m:
        return int(m.group(1))
    return None


def parse_params(params_text: str) -> list[CParam]:
    text = params_text.strip()
    if text in ("", "void"):
        return []
    params = []
    for raw in _split_params(text):
        raw = raw.strip()
        dims = [d.strip() for d in re.findall(r"\[([^\]]*)\]", raw)]
        decl = re.sub(r"\[[^\]]*\]", "", raw).strip()
        m = re.match(r"(.*?)([A-Za-z_]\w*)\s*$", decl, re.S)
        if not m:
            params.append(CParam(name="?", ctype=decl, width=None, raw=raw))
            continue
        ctype = m.group(1).strip()
        name = m.group(2)
        is_pointer = "*" in ctype or "&" in ctype
        array_dims = []
        unsized = False
        for d in dims:
            if d.isdigit():
                array_dims.append(int(d))
            else:
                unsized = True
        params.append(CParam(
            name=name, ctype=" ".join(ctype.replace("*", " * ").split()),
            width=type_width(ctype), array_dims=array_dims, is_pointer=is_pointer,
            is_const="const" in ctype.split(), unsized_array=unsized, raw=raw))
    return params


def _split_params(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for c in text:
        if c in "<([":
            depth += 1
        elif c in ">)]":
            depth -= 1
        if c == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(c)
    parts.append("".join(cur))
    return parts


def count_calls(src: str, name: str) -> int:
    """Call sites of ``name``; declarations and the definition header are not calls."""
    clean = strip_comments(src)
    n = 0
    for m in re.finditer(rf"\b{re.escape(name)}\s*\(", clean):
        before = clean[:m.start()].rstrip()
        prev = re.search(r"([A-Za-z_]\w*)$", before)
        if prev and prev.group(1) not in ("return", "else", "case", "do"):
            continue  # `type name(` is a declaration or definition
        n += 1
    return n
