"""Specification files, HDL generation and testbench adaptation per submodule."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import verilog
from .errors import (AdaptationError, ExtractionError, GateStateError, GenerationError,
                     SpecError)
from .gateway import extract_all_fences, extract_fenced_code, render_template
from .prompts import (ADAPT_TESTBENCH, DESIGN_CONSTRAINTS, FENCE_REMINDER, FENCE_RULE,
                      GENERATE_HDL, OPTIMIZATION_HINTS, SPECS)
from .workspace import NullArchive, atomic_write

log = logging.getLogger(__name__)

CONTROL_PORTS = {"clk", "rst", "rst_n", "reset", "ap_clk", "ap_rst", "ap_rst_n", "ap_start",
                 "ap_done", "ap_idle", "ap_ready", "start", "done", "valid", "ready",
                 "in_valid", "out_valid", "in_ready", "out_ready"}


@dataclass
class FunctionalSpec:
    submodule_id: str
    behavior_text: str

    def missing_ports(self, names) -> list[str]:
        return [n for n in names if not re.search(rf"\b{re.escape(n)}\b", self.behavior_text)]


@dataclass
class PortMapRow:
    c_param: str
    hdl_port: str
    direction: str
    width_bits: int


@dataclass
class InterfaceDefinition:
    submodule_id: str
    port_map: list = field(default_factory=list)

    def row(self, c_param: str) -> PortMapRow | None:
        return next((r for r in self.port_map if r.c_param == c_param), None)

    @property
    def inputs(self) -> list[PortMapRow]:
        return [r for r in self.port_map if r.direction == "in"]

    @property
    def outputs(self) -> list[PortMapRow]:
        return [r for r in self.port_map if r.direction == "out"]

    @property
    def c_to_hdl(self) -> dict:
        return {r.c_param: r.hdl_port for r in self.port_map}

    def serialize(self) -> str:
        return "".join(f"{r.c_param} {r.hdl_port} {r.direction} {r.width_bits}\n"
                       for r in self.port_map)

    @classmethod
    def parse(cls, submodule_id: str, text: str) -> "InterfaceDefinition":
        rows = []
        for n, line in enumerate(text.splitlines(), 1):
            s = line.split("#", 1)[0].strip().strip("`")
            if not s:
                continue
            toks = s.split()
            if len(toks) != 4 or toks[2] not in ("in", "out") or not toks[3].isdigit():
                raise SpecError(f"interface definition line {n}: expected "
                                f"'<c_param> <hdl_port> <in|out> <width>', got {line!r}")
            rows.append(PortMapRow(toks[0], toks[1], toks[2], int(toks[3])))
        return cls(submodule_id, rows)

    def problems(self, contract) -> list[str]:
        """Differences from a decomposition contract (bijection, widths, directions)."""
        out = []
        want = {p.name: p for p in contract.ports}
        have = [r.c_param for r in self.port_map]
        for name in want:
            if name not in have:
                out.append(f"port {name!r} missing")
        for name in have:
            if name not in want:
                out.append(f"port {name!r} is not in the contract")
        for dup in sorted({h for h in have if have.count(h) > 1}):
            out.append(f"port {dup!r} mapped twice")
        hdl = [r.hdl_port for r in self.port_map]
        for dup in sorted({h for h in hdl if hdl.count(h) > 1}):
            out.append(f"HDL port {dup!r} used twice")
        for r in self.port_map:
            p = want.get(r.c_param)
            if p is None:
                continue
            if r.width_bits != p.width_bits * (p.array_len or 1):
                out.append(f"port {r.c_param!r} width {r.width_bits} != contract "
                           f"{p.width_bits * (p.array_len or 1)}")
            if r.direction != p.direction:
                out.append(f"port {r.c_param!r} direction {r.direction} != {p.direction}")
            if not re.fullmatch(r"[A-Za-z_]\w*", r.hdl_port):
                out.append(f"HDL port name {r.hdl_port!r} is not an identifier")
        return out


def identity_interface(submodule_id: str, contract) -> InterfaceDefinition:
    """Port map that keeps the C names; arrays are flattened into one wide port."""
    return InterfaceDefinition(submodule_id, [
        PortMapRow(p.name, p.name, p.direction, p.width_bits * (p.array_len or 1))
        for p in contract.ports])


@dataclass
class DesignConstraints:
    style_rules: list = field(default_factory=lambda: list(DESIGN_CONSTRAINTS))
    optimization_hints: list = field(default_factory=lambda: list(OPTIMIZATION_HINTS))
    formatting_rules: list = field(default_factory=lambda: [FENCE_RULE])

    def __post_init__(self):
        if FENCE_RULE not in self.formatting_rules:
            self.formatting_rules = [FENCE_RULE] + list(self.formatting_rules)

    def render(self) -> str:
        parts = ["Style:"] + [f"- {s}" for s in self.style_rules]
        if self.optimization_hints:
            parts += ["Optimization:"] + [f"- {s}" for s in self.optimization_hints]
        parts += ["Formatting:"] + [f"- {s}" for s in self.formatting_rules]
        return "\n".join(parts)


@dataclass
class HdlSource:
    submodule_id: str
    attempt_index: int
    code: str
    syntax_status: str = "Unchecked"     # Unchecked | Pass | Fail
    syntax_log: str = ""

    def failed(self, log_text: str) -> "HdlSource":
        return HdlSource(self.submodule_id, self.attempt_index, self.code, "Fail", log_text)

    def passed(self) -> "HdlSource":
        return HdlSource(self.submodule_id, self.attempt_index, self.code, "Pass", "")


def render_contract(contract) -> str:
    lines = [f"- {p.name}: {p.direction}, {p.width_bits} bits"
             + (f" x {p.array_len}" if p.array_len else "") for p in contract.ports]
    return "\n".join(lines + [f"Semantics: {contract.semantics_summary}"])


def render_ports(iface: InterfaceDefinition) -> str:
    return "\n".join(f"- {r.hdl_port}: {r.direction} [{r.width_bits - 1}:0]"
                     for r in iface.port_map)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

def generate_specs(sub, gateway, archive=None):
    """Functional spec plus interface definition; widths always come from the contract."""
    archive = archive or NullArchive()
    contract = sub.interface
    reminder = ""
    missing: list[str] = []
    for attempt in (1, 2):
        prompt = render_template(SPECS, {"submodule_id": sub.submodule_id,
                                         "contract": render_contract(contract),
                                         "reminder": reminder, "c_source": sub.c_source})
        ex = gateway.complete(prompt)
        archive.put(f"specs.prompt{attempt}.txt", prompt)
        archive.put(f"specs.response{attempt}.txt", ex.response)
        try:
            spec, iface, missing = _read_specs(sub, ex.response)
        except (ExtractionError, SpecError) as exc:
            missing = [str(exc)]
            spec = iface = None
        if not missing:
            return spec, iface
        reminder = ("REMINDER: the previous answer omitted or mis-stated: "
                    + ", ".join(missing) + ". Cover every port in both files.")
    raise SpecError(f"{sub.submodule_id}: specification still missing {', '.join(missing)}")


def _read_specs(sub, response: str):
    fences = dict((tag, body) for tag, body in reversed(extract_all_fences(response)))
    spec_text = fences.get("markdown") or fences.get("md")
    iface_text = fences.get("interface")
    if spec_text is None or iface_text is None:
        raise ExtractionError("expected a ```markdown and an ```interface fence")
    parsed = InterfaceDefinition.parse(sub.submodule_id, iface_text)
    contract = sub.interface
    rows, missing = [], []
    for p in contract.ports:
        r = parsed.row(p.name)
        if r is None:
            missing.append(p.name)
            continue
        width = p.width_bits * (p.array_len or 1)
        if r.width_bits != width:
            log.info("%s.%s: model width %d overridden by contract %d", sub.submodule_id,
                     p.name, r.width_bits, width)
        rows.append(PortMapRow(p.name, r.hdl_port, p.direction, width))
    iface = InterfaceDefinition(sub.submodule_id, rows)
    spec = FunctionalSpec(sub.submodule_id, spec_text)
    if not spec_text.strip():
        missing.append("functional description")
    else:
        for r in rows:
            if spec.missing_ports([r.c_param]) and spec.missing_ports([r.hdl_port]):
                missing.append(r.c_param)
    if not missing:
        probs = iface.problems(contract)
        missing += probs
    return spec, iface, sorted(set(missing), key=missing.index)


def write_specs(directory, spec: FunctionalSpec, iface: InterfaceDefinition) -> None:
    directory = Path(directory)
    atomic_write(directory / "functional.spec.md", spec.behavior_text.encode())
    atomic_write(directory / "interface.def", iface.serialize().encode())


def load_specs(directory, submodule_id: str):
    directory = Path(directory)
    spec = FunctionalSpec(submodule_id, (directory / "functional.spec.md").read_text())
    iface = InterfaceDefinition.parse(submodule_id, (directory / "interface.def").read_text())
    return spec, iface


# ---------------------------------------------------------------------------
# HDL
# ---------------------------------------------------------------------------

def generate_hdl(sub, specs, constraints: DesignConstraints, gateway, archive=None,
                 attempt_index: int = 1, c_source: str | None = None) -> HdlSource:
    """One generation, with a single fencing re-prompt."""
    archive = archive or NullArchive()
    spec, iface = specs
    reminder = ""
    for call in (1, 2):
        prompt = render_template(GENERATE_HDL, {
            "submodule_id": sub.submodule_id,
            "c_source": c_source if c_source is not None else sub.c_source,
            "functional_spec": spec.behavior_text, "interface_definition": iface.serialize(),
            "constraints": constraints.render(), "reminder": reminder})
        ex = gateway.complete(prompt)
        archive.put(f"generate.prompt{call}.txt", prompt)
        archive.put(f"generate.response{call}.txt", ex.response)
        try:
            code = extract_fenced_code(ex.response, "verilog")
        except ExtractionError as exc:
            log.info("%s: %s", sub.submodule_id, exc)
            reminder = FENCE_REMINDER
            continue
        return HdlSource(sub.submodule_id, attempt_index, code)
    raise GenerationError(f"{sub.submodule_id}: no fenced HDL after re-prompt")


def lint_hdl(code: str, module_name: str, iface: InterfaceDefinition,
             filename: str = "design.v") -> list[str]:
    """Interface lint in compiler-log style: module name, port set, directions, widths."""
    mods = verilog.find_modules(code)
    mod = next((m for m in mods if m.name == module_name), None)
    if mod is None:
        found = ", ".join(m.name for m in mods) or "none"
        return [f"{filename}:1: error: module '{module_name}' is not defined "
                f"(modules found: {found})"]
    line = code[:mod.start].count("\n") + 1
    msgs = []
    for r in iface.port_map:
        p = mod.port(r.hdl_port)
        want_dir = "input" if r.direction == "in" else "output"
        if p is None:
            msgs.append(f"{filename}:{line}: error: port '{r.hdl_port}' is not declared in "
                        f"module '{module_name}'")
            continue
        if p.direction != want_dir:
            msgs.append(f"{filename}:{line}: error: port '{r.hdl_port}' declared as "
                        f"{p.direction}, interface requires {want_dir}")
        if p.width != r.width_bits:
            msgs.append(f"{filename}:{line}: error: port '{r.hdl_port}' width mismatch: "
                        f"declared {p.width} bits, interface requires {r.width_bits} bits")
    known = {r.hdl_port for r in iface.port_map}
    for p in mod.ports:
        if p.name not in known and not (p.name in CONTROL_PORTS and p.width == 1):
            msgs.append(f"{filename}:{line}: error: port '{p.name}' is not part of the "
                        "interface definition")
    return msgs


# ---------------------------------------------------------------------------
# testbench adaptation and approval gate
# ---------------------------------------------------------------------------

def check_testbench(tb: str, iface: InterfaceDefinition, module: str) -> list[str]:
    """Static trace-protocol check; returns one message per defect."""
    out = []
    code = verilog.strip_comments(tb)
    if not re.search(r'trace_fd\s*=\s*\$fopen\s*\(\s*"trace\.txt"', code):
        out.append('trace file not opened as trace_fd = $fopen("trace.txt", ...)')
    inst = re.search(rf"\b{re.escape(module)}\s*(?:#\s*\([^;]*?\))?\s*dut\s*\(", code)
    if not inst:
        out.append(f"module {module} is not instantiated as 'dut'")
    for r in iface.inputs:
        if not re.search(rf"\.{re.escape(r.hdl_port)}\s*\(", code):
            out.append(f"input {r.hdl_port} is not driven")
    for r in iface.outputs:
        p = re.escape(r.hdl_port)
        hdr = re.search(rf'\$fwrite\s*\(\s*trace_fd\s*,\s*"#port\s+{p}\s+(\d+)\\n"', tb)
        smp = re.search(rf'\$fwrite\s*\(\s*trace_fd\s*,\s*"%0d\s+{p}\s+%h\\n"\s*,\s*trace_idx\s*,',
                        tb)
        if not smp:
            out.append(f"output {r.hdl_port} is not recorded")
        elif not hdr:
            out.append(f"output {r.hdl_port} has no #port header")
        elif int(hdr.group(1)) != r.width_bits:
            out.append(f"output {r.hdl_port} header width {hdr.group(1)} != {r.width_bits}")
    return out


def adapt_testbench(c_testbench: str, iface: InterfaceDefinition, gateway, module: str,
                    archive=None) -> str:
    archive = archive or NullArchive()
    reminder = ""
    defects: list[str] = []
    for call in (1, 2):
        prompt = render_template(ADAPT_TESTBENCH, {
            "submodule_id": iface.submodule_id, "module": module, "ports": render_ports(iface),
            "reminder": reminder, "c_testbench": c_testbench})
        ex = gateway.complete(prompt)
        archive.put(f"testbench.prompt{call}.txt", prompt)
        archive.put(f"testbench.response{call}.txt", ex.response)
        try:
            tb = extract_fenced_code(ex.response, "verilog")
        except ExtractionError as exc:
            defects = [str(exc)]
            reminder = FENCE_REMINDER
            continue
        defects = check_testbench(tb, iface, module)
        if not defects:
            return tb
        reminder = "REMINDER: fix these trace-protocol defects: " + "; ".join(defects)
    raise AdaptationError(f"{iface.submodule_id}: " + "; ".join(defects))


APPROVAL_SUFFIX = ".approval"


def approval_path(tb_path) -> Path:
    return Path(str(tb_path) + APPROVAL_SUFFIX)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def mark_pending(tb_path) -> Path:
    tb_path = Path(tb_path)
    marker = approval_path(tb_path)
    atomic_write(marker, json.dumps({"state": "pending", "testbench": _digest(tb_path)},
                                    sort_keys=True).encode())
    return marker


def approval_state(tb_path) -> str | None:
    marker = approval_path(tb_path)
    if not marker.exists():
        return None
    doc = json.loads(marker.read_text())
    if doc.get("state") == "approved" and Path(tb_path).exists() \
            and doc.get("testbench") != _digest(Path(tb_path)):
        return "pending"   # testbench changed after approval
    return doc.get("state")


def decide(tb_path, decision: str) -> str:
    """Record approve/reject on a pending marker; repeating a decision is a no-op."""
    if decision not in ("approve", "reject"):
        raise ValueError(decision)
    target = "approved" if decision == "approve" else "rejected"
    state = approval_state(tb_path)
    if state is None:
        raise GateStateError(f"no testbench awaiting approval at {tb_path}")
    if state == target:
        return state
    if state != "pending":
        raise GateStateError(f"testbench {tb_path} already {state}")
    atomic_write(approval_path(tb_path), json.dumps(
        {"state": target, "testbench": _digest(Path(tb_path))}, sort_keys=True).encode())
    return target


__all__ = ["FunctionalSpec", "PortMapRow", "InterfaceDefinition", "DesignConstraints",
           "HdlSource", "generate_specs", "generate_hdl", "adapt_testbench", "lint_hdl",
           "check_testbench", "identity_interface", "mark_pending", "approval_state", "decide",
           "write_specs", "load_specs"]
