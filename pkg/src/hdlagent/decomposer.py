"""Rule-constrained decomposition of a C program into submodules.

A plan is checked statically against the three decomposition rules before
anything is compiled, then validated by re-integrating the submodules with
the original testbench and demanding byte-identical output.
"""
from __future__ import annotations

import difflib
import graphlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import cparse
from .errors import BuildError, DecompositionError, ExtractionError
from .gateway import extract_fenced_code, render_template
from .prompts import DECOMPOSE
from .toolchain import check_c_syntax, run_c_compile_and_exec
from .workspace import NullArchive, atomic_write

log = logging.getLogger(__name__)

PLAN_FILE = "decomposition.plan"


@dataclass
class Port:
    name: str
    direction: str          # "in" | "out"
    width_bits: int
    array_len: int | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "direction": self.direction, "width_bits": self.width_bits}
        if self.array_len is not None:
            d["array_len"] = self.array_len
        return d


@dataclass
class InterfaceContract:
    ports: list
    semantics_summary: str = ""

    def port(self, name: str) -> Port | None:
        return next((p for p in self.ports if p.name == name), None)

    @property
    def inputs(self) -> list[Port]:
        return [p for p in self.ports if p.direction == "in"]

    @property
    def outputs(self) -> list[Port]:
        return [p for p in self.ports if p.direction == "out"]

    def problems(self, owner: str = "") -> list[str]:
        who = f"{owner}: " if owner else ""
        out = []
        names = [p.name for p in self.ports]
        for dup in sorted({n for n in names if names.count(n) > 1}):
            out.append(f"rule (2): {who}port name {dup!r} is not unique")
        for p in self.ports:
            if not isinstance(p.width_bits, int) or isinstance(p.width_bits, bool) \
                    or p.width_bits < 1:
                out.append(f"rule (2): {who}port {p.name!r} has no explicit bit width "
                           f"(got {p.width_bits!r})")
            if p.direction not in ("in", "out"):
                out.append(f"rule (2): {who}port {p.name!r} has direction {p.direction!r}")
            if p.array_len is not None and (not isinstance(p.array_len, int) or p.array_len < 1):
                out.append(f"rule (2): {who}port {p.name!r} has array_len {p.array_len!r}")
        if not self.outputs:
            out.append(f"rule (2): {who}interface has no output port")
        return out

    def to_dict(self) -> dict:
        return {"ports": [p.to_dict() for p in self.ports],
                "semantics_summary": self.semantics_summary}

    @classmethod
    def from_dict(cls, d: dict) -> "InterfaceContract":
        ports = []
        for p in d.get("ports", []):
            ports.append(Port(p["name"], p.get("direction", ""), p.get("width_bits"),
                              p.get("array_len")))
        return cls(ports, d.get("semantics_summary", ""))


@dataclass
class CSubmodule:
    submodule_id: str
    c_source: str
    entry_function: str
    interface: InterfaceContract
    call_order_index: int = 0


@dataclass
class DecompositionPlan:
    submodules: list
    top_glue: str
    dataflow_edges: list = field(default_factory=list)

    def get(self, sid: str) -> CSubmodule:
        for s in self.submodules:
            if s.submodule_id == sid:
                return s
        raise KeyError(sid)

    @property
    def ids(self) -> list[str]:
        return [s.submodule_id for s in self.submodules]

    def to_dict(self, inline_sources: bool = True) -> dict:
        subs = []
        for s in self.submodules:
            d = {"id": s.submodule_id, "entry_function": s.entry_function,
                 "call_order_index": s.call_order_index, "interface": s.interface.to_dict()}
            if inline_sources:
                d["c_source"] = s.c_source
            else:
                d["source"] = f"{s.submodule_id}/src.c"
            subs.append(d)
        return {"submodules": subs, "top_glue": self.top_glue,
                "dataflow_edges": [list(e) for e in self.dataflow_edges]}

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "DecompositionPlan":
        if not isinstance(d, dict) or "submodules" not in d or "top_glue" not in d:
            raise ExtractionError("plan must be an object with 'submodules' and 'top_glue'")
        subs = []
        try:
            for i, s in enumerate(d["submodules"]):
                src = s.get("c_source")
                if src is None and base is not None and "source" in s:
                    src = (base / s["source"]).read_text(encoding="utf-8")
                subs.append(CSubmodule(
                    submodule_id=str(s["id"]), c_source=src or "",
                    entry_function=str(s["entry_function"]),
                    interface=InterfaceContract.from_dict(s.get("interface", {})),
                    call_order_index=int(s.get("call_order_index", i))))
            edges = [tuple(e) for e in d.get("dataflow_edges", [])]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ExtractionError(f"malformed plan: {exc!r}") from exc
        if any(len(e) != 4 for e in edges):
            raise ExtractionError("each dataflow edge needs [producer, port, consumer, port]")
        subs.sort(key=lambda s: s.call_order_index)
        return cls(subs, str(d["top_glue"]), edges)


def write_plan(plan: DecompositionPlan, directory) -> Path:
    """One ``<id>/src.c`` per submodule plus the machine-readable plan file."""
    directory = Path(directory)
    for s in plan.submodules:
        atomic_write(directory / s.submodule_id / "src.c", s.c_source.encode())
    atomic_write(directory / "top_glue.c", plan.top_glue.encode())
    doc = plan.to_dict(inline_sources=False)
    doc["top_glue"] = "top_glue.c"
    atomic_write(directory / PLAN_FILE, (json.dumps(doc, indent=2) + "\n").encode())
    return directory / PLAN_FILE


def load_plan(directory) -> DecompositionPlan:
    directory = Path(directory)
    doc = json.loads((directory / PLAN_FILE).read_text(encoding="utf-8"))
    doc["top_glue"] = (directory / doc["top_glue"]).read_text(encoding="utf-8")
    return DecompositionPlan.from_dict(doc, base=directory)


def contract_from_signature(func: cparse.CFunction, return_port: str = "ap_return",
                            summary: str = "") -> InterfaceContract:
    """Interface implied by a C signature: scalars are inputs, non-const arrays outputs."""
    ports = []
    for p in cparse.parse_params(func.params_text):
        direction = "out" if p.array_dims and not p.is_const else "in"
        length = 1
        for d in p.array_dims:
            length *= d
        ports.append(Port(p.name, direction, p.width, length if p.array_dims else None))
    if func.returns_value:
        ports.append(Port(return_port, "out", func.return_width))
    return InterfaceContract(ports, summary)


def top_contract(c_source: str, top_function: str, return_port: str = "ap_return"):
    for f in cparse.find_functions(c_source):
        if f.name == top_function:
            return contract_from_signature(f, return_port, f"top-level function {top_function}")
    raise DecompositionError([f"top function {top_function!r} not found in the program"])


# ---------------------------------------------------------------------------
# static rule checks
# ---------------------------------------------------------------------------

def check_submodule(sub: CSubmodule, original_functions: set | None = None) -> list[str]:
    sid = sub.submodule_id
    out = []
    funcs = cparse.find_functions(sub.c_source)
    visible = [f for f in funcs if not f.is_static]
    if len(visible) != 1:
        names = ", ".join(f.name for f in visible) or "none"
        out.append(f"rule (1): {sid} must define exactly one externally visible function "
                   f"(found {names})")
    entry = next((f for f in funcs if f.name == sub.entry_function), None)
    if entry is None:
        out.append(f"rule (1): {sid} does not define its entry function {sub.entry_function!r}")
    elif entry.is_static:
        out.append(f"rule (1): entry function {sub.entry_function!r} of {sid} is static")
    if original_functions is not None and sub.entry_function not in original_functions:
        out.append(f"rule (1): {sid} entry {sub.entry_function!r} is not a function of the "
                   f"original program (decompose along existing function boundaries)")

    out += sub.interface.problems(sid)
    if entry is not None:
        out += _check_signature(sid, entry, sub.interface)
    if not sub.interface.semantics_summary.strip():
        out.append(f"rule (3): {sid} has no semantics summary")
    return out


def _check_signature(sid: str, entry: cparse.CFunction, iface: InterfaceContract) -> list[str]:
    out = []
    params = cparse.parse_params(entry.params_text)
    by_name = {p.name: p for p in iface.ports}
    for p in params:
        where = f"parameter {p.name!r} of {entry.name}"
        if p.is_pointer:
            out.append(f"rule (2): {where} is a pointer (variable-length interface); "
                       "use a fixed-width scalar or a static array")
            continue
        if p.unsized_array:
            out.append(f"rule (2): {where} is an unsized array")
            continue
        if p.width is None:
            out.append(f"rule (2): {where} has non fixed-width type {p.ctype!r}")
        port = by_name.get(p.name)
        if port is None:
            out.append(f"rule (2): {where} has no interface port")
            continue
        if p.width is not None and isinstance(port.width_bits, int) and port.width_bits > p.width:
            out.append(f"rule (2): port {p.name!r} of {sid} is {port.width_bits} bits but its C "
                       f"type holds {p.width}")
        if p.array_dims:
            n = 1
            for d in p.array_dims:
                n *= d
            if port.array_len != n:
                out.append(f"rule (2): port {p.name!r} of {sid} has array_len {port.array_len} "
                           f"but the C array holds {n}")
            if p.is_const and port.direction == "out":
                out.append(f"rule (2): const array {p.name!r} of {sid} cannot be an output")
        elif port.direction == "out":
            out.append(f"rule (2): scalar parameter {p.name!r} of {sid} cannot be an output")
    extra = [pt for pt in iface.ports if pt.name not in {p.name for p in params}]
    if entry.returns_value:
        if entry.return_width is None:
            out.append(f"rule (2): return type {entry.return_type!r} of {entry.name} is not "
                       "fixed-width")
        if len(extra) != 1 or extra[0].direction != "out":
            out.append(f"rule (2): {sid} needs exactly one output port for the return value "
                       f"(found {[pt.name for pt in extra]})")
        elif entry.return_width is not None and isinstance(extra[0].width_bits, int) \
                and extra[0].width_bits > entry.return_width:
            out.append(f"rule (2): return port {extra[0].name!r} of {sid} is wider than "
                       f"{entry.return_type}")
    elif extra:
        out.append(f"rule (2): {sid} ports {[pt.name for pt in extra]} match no parameter")
    return out


def check_plan(plan: DecompositionPlan, original_source: str | None = None,
               top_function: str | None = None) -> list[str]:
    """Every rule violation and structural defect of ``plan`` (empty when valid)."""
    out = []
    ids = plan.ids
    if not ids:
        return ["plan: no submodules"]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(f"plan: submodule id {dup!r} is not unique")
    orig_funcs = None
    if original_source is not None:
        orig_funcs = {f.name for f in cparse.find_functions(original_source)}
    for s in plan.submodules:
        if not s.submodule_id.isidentifier():
            out.append(f"plan: submodule id {s.submodule_id!r} is not an identifier")
        out += check_submodule(s, orig_funcs)

    subs = {s.submodule_id: s for s in plan.submodules}
    sorter = graphlib.TopologicalSorter()
    for sid in ids:
        sorter.add(sid)
    for prod, pport, cons, cport in plan.dataflow_edges:
        if prod not in subs or cons not in subs:
            out.append(f"plan: edge {prod}.{pport} -> {cons}.{cport} names an unknown submodule")
            continue
        pp, cp = subs[prod].interface.port(pport), subs[cons].interface.port(cport)
        if pp is None or pp.direction != "out":
            out.append(f"plan: edge source {prod}.{pport} is not an output port")
        if cp is None or cp.direction != "in":
            out.append(f"plan: edge target {cons}.{cport} is not an input port")
        sorter.add(cons, prod)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        out.append(f"plan: dataflow edges form a cycle through {exc.args[1]}")

    glue_funcs = {f.name for f in cparse.find_functions(plan.top_glue)}
    if top_function and top_function not in glue_funcs:
        out.append(f"plan: top glue does not define {top_function!r}")
    for s in plan.submodules:
        n = cparse.count_calls(plan.top_glue, s.entry_function)
        if n == 0:
            out.append(f"plan: top glue never calls {s.entry_function} ({s.submodule_id})")
        elif original_source is not None:
            expected = cparse.count_calls(original_source, s.entry_function)
            if expected and n != expected:
                out.append(f"plan: top glue calls {s.entry_function} {n} time(s), the original "
                           f"program {expected}")
    return out


def violated_rules(violations) -> list[str]:
    return sorted({v.split(":", 1)[0] for v in violations})


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def propose_decomposition(c_source: str, gateway, template=DECOMPOSE, project: str = "design",
                          top_function: str = "top", toolchain=None,
                          archive=None) -> DecompositionPlan:
    """Ask the model for a plan; one constrained re-prompt on rule violations."""
    archive = archive or NullArchive()
    if toolchain is not None and toolchain.c is not None:
        res = check_c_syntax([c_source], toolchain.c)
        if not res.ok:
            raise BuildError("input program does not compile standalone", log=res.log)
    violations: list[str] = []
    for attempt in (1, 2):
        feedback = ""
        if violations:
            feedback = ("Your previous plan violated these rules; fix every one:\n"
                        + "\n".join(f"- {v}" for v in violations))
        prompt = render_template(template, {"project": project, "top_function": top_function,
                                            "c_source": c_source, "violations": feedback})
        ex = gateway.complete(prompt)
        archive.put(f"decompose.prompt{attempt}.txt", prompt)
        archive.put(f"decompose.response{attempt}.txt", ex.response)
        text = extract_fenced_code(ex.response, "json")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ExtractionError(f"plan is not valid JSON: {exc}") from exc
        plan = DecompositionPlan.from_dict(doc)
        violations = check_plan(plan, c_source, top_function)
        if not violations:
            return plan
        log.info("decomposition attempt %d violates %s", attempt, violated_rules(violations))
    raise DecompositionError(violations)


@dataclass
class Verdict:
    status: str                # "Pass" | "Fail"
    report: str = ""
    decomposed_stdout: bytes = b""
    original_stdout: bytes = b""

    @property
    def passed(self) -> bool:
        return self.status == "Pass"


def first_difference(a: bytes, b: bytes) -> str:
    la = a.decode("utf-8", "replace").splitlines()
    lb = b.decode("utf-8", "replace").splitlines()
    for i in range(max(len(la), len(lb))):
        x = la[i] if i < len(la) else "<missing>"
        y = lb[i] if i < len(lb) else "<missing>"
        if x != y:
            diff = "\n".join(difflib.unified_diff(lb, la, "original", "decomposed", lineterm="",
                                                  n=1))
            return (f"first difference at output line {i + 1}: decomposed {x!r}, "
                    f"original {y!r}\n{diff}")
    return "outputs differ only in trailing bytes"


def reintegrate_and_check(plan: DecompositionPlan, original_source: str,
                          original_testbench: str, c_binding) -> Verdict:
    """Pass iff decomposed and original programs print byte-identical output."""
    sources = [s.c_source for s in plan.submodules] + [plan.top_glue]
    res_d, out_d = run_c_compile_and_exec(sources, original_testbench, c_binding)
    if not res_d.ok:
        raise BuildError("decomposed program failed to build", log=res_d.log)
    res_o, out_o = run_c_compile_and_exec([original_source], original_testbench, c_binding)
    if not res_o.ok:
        raise BuildError("original program failed to build", log=res_o.log)
    if out_d == out_o:
        return Verdict("Pass", "outputs match exactly", out_d, out_o)
    return Verdict("Fail", first_difference(out_d, out_o), out_d, out_o)
