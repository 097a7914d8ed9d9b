"""Top-level integration: instance graph, boundary probes, backward slicing, top verification."""
from __future__ import annotations

import graphlib
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from . import verilog
from .diffverify import (SliceNote, compare_traces, differential_loop, load_cases, merge_logs,
                         simulate_to_trace)
from .errors import (ExtractionError, InstrumentationError, IntegrationStructureError,
                     StimulusInconsistencyError)
from .gateway import extract_fenced_code, render_template
from .prompts import FENCE_REMINDER, TOP_LEVEL
from .toolchain import parse_trace_v1
from .workspace import NullArchive, atomic_write

log = logging.getLogger(__name__)

TOP = "TOP"
PROBE_BEGIN = "// hdlagent:probes begin"
PROBE_END = "// hdlagent:probes end"
TB_PROBE_TAG = "// hdlagent:probe-write"


@dataclass(frozen=True)
class Driver:
    kind: str            # "inst" | "pi" | "const"
    instance: str = ""
    port: str = ""

    def label(self) -> str:
        if self.kind == "inst":
            return f"{self.instance}.{self.port}"
        return self.port if self.kind == "pi" else f"const({self.port})"


@dataclass
class InstanceGraph:
    instances: dict = field(default_factory=dict)        # name -> module id
    ports: dict = field(default_factory=dict)            # name -> [(port, dir, width)]
    drivers: dict = field(default_factory=dict)          # (inst, in_port) -> [Driver]
    output_drivers: dict = field(default_factory=dict)   # primary output -> [Driver]
    primary_inputs: list = field(default_factory=list)   # [(name, width)]
    primary_outputs: list = field(default_factory=list)

    @property
    def nodes(self) -> list[str]:
        return list(self.instances)

    @property
    def edges(self) -> list[tuple]:
        """((producer, port), (consumer, port)) for every instance-to-instance link."""
        out = []
        for (inst, port), ds in self.drivers.items():
            for d in ds:
                if d.kind == "inst":
                    out.append(((d.instance, d.port), (inst, port)))
        return sorted(out)

    def port_dir(self, inst: str, port: str) -> str | None:
        for name, d, _ in self.ports.get(inst, []):
            if name == port:
                return d
        return None

    def predecessors(self, inst: str) -> list[str]:
        preds = set()
        for (i, _), ds in self.drivers.items():
            if i == inst:
                preds.update(d.instance for d in ds if d.kind == "inst")
        return sorted(preds)

    def pi_fed(self, inst: str, port: str) -> bool:
        ds = self.drivers.get((inst, port), [])
        return bool(ds) and all(d.kind in ("pi", "const") for d in ds)

    def depth_from_inputs(self) -> dict:
        """BFS distance from the primary inputs (instances with no instance driver: 0)."""
        dist = {}
        q = deque()
        for n in self.nodes:
            if not self.predecessors(n):
                dist[n] = 0
                q.append(n)
        succ = {n: set() for n in self.nodes}
        for (p, _), (c, _) in self.edges:
            succ[p].add(c)
        while q:
            n = q.popleft()
            for s in sorted(succ[n]):
                if s not in dist:
                    dist[s] = dist[n] + 1
                    q.append(s)
        for n in self.nodes:
            dist.setdefault(n, len(self.nodes))
        return dist


def _iface_module(iface) -> verilog.VModule:
    ports = [verilog.VPort(r.hdl_port, "input" if r.direction == "in" else "output",
                           r.width_bits) for r in iface.port_map]
    return verilog.VModule(iface.submodule_id, ports, 0, 0, 0)


def build_instance_graph(code: str, top_name: str, ifaces: dict, top_iface,
                         plan_ids=None) -> tuple[InstanceGraph, list[str]]:
    """Graph plus every structural defect found (undriven, width, cycle, coverage)."""
    defects: list[str] = []
    mods = {m.name: m for m in verilog.find_modules(code)}
    top = mods.get(top_name)
    g = InstanceGraph()
    if top is None:
        return g, [f"top module {top_name!r} not found"]
    known = {sid: _iface_module(i) for sid, i in ifaces.items()}
    g.primary_inputs = [(r.hdl_port, r.width_bits) for r in top_iface.inputs]
    g.primary_outputs = [(r.hdl_port, r.width_bits) for r in top_iface.outputs]
    for r in top_iface.port_map:
        p = top.port(r.hdl_port)
        want = "input" if r.direction == "in" else "output"
        if p is None:
            defects.append(f"top port {r.hdl_port} is missing")
        elif p.direction != want or p.width != r.width_bits:
            defects.append(f"top port {r.hdl_port} must be {want} [{r.width_bits - 1}:0]")
    insts = verilog.find_instances(code, top, known)
    widths = verilog.find_wire_widths(code, top)
    for name, w in g.primary_inputs + g.primary_outputs:
        widths[name] = w
    pis = {n for n, _ in g.primary_inputs}
    assigns = dict(verilog.find_assigns(code, top))

    net_driver: dict = {}
    for inst in insts:
        if inst.name in g.instances:
            defects.append(f"instance name {inst.name} used twice")
            continue
        g.instances[inst.name] = inst.module
        iface = ifaces[inst.module]
        g.ports[inst.name] = [(r.hdl_port, r.direction, r.width_bits) for r in iface.port_map]
        for r in iface.outputs:
            expr = inst.connections.get(r.hdl_port, "")
            net = verilog.base_signal(expr) if expr else None
            if net is None:
                continue
            if net in net_driver or net in pis:
                prev = net_driver.get(net)
                defects.append(f"net {net} has multiple drivers ({inst.name}.{r.hdl_port}"
                               + (f", {prev.label()})" if prev else ", primary input)"))
                continue
            net_driver[net] = Driver("inst", inst.name, r.hdl_port)

    def resolve(expr: str, seen=()) -> list[Driver]:
        ids = verilog.identifiers(expr)
        if not ids:
            return [Driver("const", "", expr.strip())]
        out = []
        for ident in ids:
            if ident in net_driver:
                out.append(net_driver[ident])
            elif ident in pis:
                out.append(Driver("pi", "", ident))
            elif ident in assigns and ident not in seen:
                out.extend(resolve(assigns[ident], seen + (ident,)))
        return out

    for inst in insts:
        if g.instances.get(inst.name) != inst.module:
            continue
        iface = ifaces[inst.module]
        for extra in sorted(set(inst.connections) - {r.hdl_port for r in iface.port_map}
                            - {"clk", "rst", "rst_n", "ap_clk", "ap_rst", "ap_start"}):
            defects.append(f"{inst.name} connects unknown port {extra}")
        for r in iface.inputs:
            expr = inst.connections.get(r.hdl_port, "")
            ds = resolve(expr) if expr else []
            if not ds:
                defects.append(f"undriven input {inst.name}.{r.hdl_port}")
                continue
            g.drivers[(inst.name, r.hdl_port)] = ds
            net = verilog.base_signal(expr)
            if net is not None and len(ds) == 1 and ds[0].kind == "inst":
                src_w = dict((p, w) for p, _, w in g.ports[ds[0].instance])[ds[0].port]
                if src_w != r.width_bits:
                    defects.append(f"width mismatch {ds[0].instance}.{ds[0].port}({src_w})"
                                   f"→{inst.name}.{r.hdl_port}({r.width_bits})")
            elif net is not None and widths.get(net) not in (None, r.width_bits):
                defects.append(f"width mismatch {net}({widths[net]})"
                               f"→{inst.name}.{r.hdl_port}({r.width_bits})")
    for name, w in g.primary_outputs:
        src = None
        if name in net_driver:
            src = [net_driver[name]]
            d = net_driver[name]
            src_w = dict((p, pw) for p, _, pw in g.ports[d.instance])[d.port]
            if src_w != w:
                defects.append(f"width mismatch {d.label()}({src_w})→{name}({w})")
        elif name in assigns:
            src = resolve(assigns[name], (name,))
        if not src:
            defects.append(f"undriven primary output {name}")
        else:
            g.output_drivers[name] = src

    sorter = graphlib.TopologicalSorter({n: set(g.predecessors(n)) for n in g.nodes})
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        defects.append("combinational cycle through " + " -> ".join(exc.args[1]))
    for sid in plan_ids or ():
        if sid not in g.instances.values():
            defects.append(f"submodule {sid} is not instantiated")
    return g, defects


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryProbe:
    instance_id: str
    port_name: str
    trace_alias: str
    width: int
    direction: str = "in"

    @property
    def wire(self) -> str:
        return f"probe__{self.instance_id}__{self.port_name}"


def make_probes(graph: InstanceGraph) -> list[BoundaryProbe]:
    probes, wires = [], {}
    for inst in sorted(graph.instances):
        for port, d, w in graph.ports[inst]:
            p = BoundaryProbe(inst, port, f"{inst}.{port}", w, d)
            if p.wire in wires:
                raise InstrumentationError(
                    f"probe wire {p.wire} collides for {p.trace_alias} and {wires[p.wire]}")
            wires[p.wire] = p.trace_alias
            probes.append(p)
    return probes


def strip_instrumentation(code: str) -> str:
    return re.sub(rf"[ \t]*{re.escape(PROBE_BEGIN)}.*?{re.escape(PROBE_END)}[ \t]*\n?", "",
                  code, flags=re.S)


def instrument_boundaries(code: str, graph: InstanceGraph, top_name: str):
    """Additive observation wires before ``endmodule`` of the top; idempotent."""
    base = strip_instrumentation(code)
    probes = make_probes(graph)
    top = next((m for m in verilog.find_modules(base) if m.name == top_name), None)
    if top is None:
        raise InstrumentationError(f"top module {top_name} not found")
    taken = set(verilog.identifiers(verilog.strip_comments(base)))
    clash = [p.wire for p in probes if p.wire in taken]
    if clash:
        raise InstrumentationError(f"probe names already used in the design: {clash}")
    block = [PROBE_BEGIN]
    block += [f"  wire [{p.width - 1}:0] {p.wire} = {p.instance_id}.{p.port_name};"
              for p in probes]
    block.append(PROBE_END)
    cut = top.end
    out = base[:cut] + "\n".join(block) + "\n" + base[cut:]
    return out, probes


def instrument_testbench(tb: str, probes) -> str:
    """Add probe header and sample writes after the trace markers; idempotent."""
    lines = [ln for ln in tb.splitlines(keepends=True) if TB_PROBE_TAG not in ln]
    out = []
    for ln in lines:
        out.append(ln)
        ind = re.match(r"[ \t]*", ln).group(0)
        if "// @trace-header" in ln:
            out += [f'{ind}$fwrite(trace_fd, "#port {p.trace_alias} {p.width}\\n"); '
                    f"{TB_PROBE_TAG}\n" for p in probes]
        elif "// @trace-sample" in ln:
            out += [f'{ind}$fwrite(trace_fd, "%0d {p.trace_alias} %h\\n", trace_idx, '
                    f"dut.{p.wire}); {TB_PROBE_TAG}\n" for p in probes]
    text = "".join(out)
    if probes and TB_PROBE_TAG not in text:
        raise InstrumentationError("testbench has no // @trace-header / // @trace-sample markers")
    return text


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------

@dataclass
class SliceResult:
    seed: tuple
    suspect_instances: list
    suspect_edges: list = field(default_factory=list)
    cleared_instances: list = field(default_factory=list)

    @property
    def focus_instances(self) -> list:
        """Suspects whose probes did not all match."""
        return [i for i in self.suspect_instances if i not in self.cleared_instances]

    def note(self) -> SliceNote:
        return SliceNote(f"{self.seed[0]}.{self.seed[1]}", tuple(self.suspect_instances))

    def describe(self) -> str:
        lines = [f"Earliest corrupted boundary: {self.seed[0]}.{self.seed[1]}",
                 "Suspect instances (nearest first): " + ", ".join(self.suspect_instances)]
        if self.cleared_instances:
            lines.append("All boundary signals match for: " + ", ".join(self.cleared_instances))
        if self.focus_instances:
            lines.append("Focus the repair on: " + ", ".join(self.focus_instances)
                         + " and the wiring feeding them.")
        return "\n".join(lines)


def backward_slice(graph: InstanceGraph, start: list[str]):
    """BFS over drivers; returns (instances nearest-first, traversed edges)."""
    order, edges = [], []
    seen = set()
    frontier = sorted(set(start))
    while frontier:
        nxt = []
        for n in frontier:
            if n in seen:
                continue
            seen.add(n)
            order.append(n)
        for n in frontier:
            for (inst, port), ds in sorted(graph.drivers.items()):
                if inst != n:
                    continue
                for d in ds:
                    if d.kind == "inst":
                        edges.append((f"{d.instance}.{d.port}", f"{inst}.{port}"))
                        if d.instance not in seen:
                            nxt.append(d.instance)
        frontier = sorted(set(nxt) - seen)
    return order, sorted(set(edges))


def locate_fault(mlog, graph: InstanceGraph) -> SliceResult:
    """Seed at the earliest corrupted boundary, slice backwards from it."""
    if mlog.passed:
        raise ValueError("locate_fault needs a non-empty mismatch log")
    bad = mlog.ports()
    pos = {n for n, _ in graph.primary_outputs}
    pis = {n for n, _ in graph.primary_inputs}
    probe_bad, po_bad, pi_bad = [], [], []
    for name in bad:
        if name in pos:
            po_bad.append(name)
        elif name in pis:
            pi_bad.append(name)
        elif "." in name:
            inst, port = name.split(".", 1)
            if inst not in graph.instances:
                raise ValueError(f"mismatching port {name} names no instance")
            probe_bad.append((inst, port))
        else:
            raise ValueError(f"mismatching port {name} is neither a probe nor a primary output")
    stim = [p for p in probe_bad
            if graph.port_dir(*p) == "in" and graph.pi_fed(*p)]
    design_bad = [p for p in probe_bad if p not in stim]
    if not design_bad and not po_bad:
        raise StimulusInconsistencyError(
            "mismatches only at primary inputs: " + ", ".join(sorted(
                pi_bad + [f"{i}.{p}" for i, p in stim])) + " (testbench fault)")
    if stim:
        log.warning("ignoring stimulus-level probe mismatches %s", stim)
    depth = graph.depth_from_inputs()
    bad_insts = {i for i, _ in design_bad} | {i for i, _ in stim}
    cleared = sorted(n for n in graph.nodes if n not in bad_insts)
    if design_bad:
        seed = min(design_bad, key=lambda p: (depth[p[0]],
                                              0 if graph.port_dir(*p) == "in" else 1, p))
        start = [seed[0]]
    else:
        seed_po = min(po_bad, key=lambda n: [x for x, _ in graph.primary_outputs].index(n))
        seed = (TOP, seed_po)
        start = [d.instance for d in graph.output_drivers.get(seed_po, []) if d.kind == "inst"]
    suspects, edges = backward_slice(graph, start)
    return SliceResult(seed, suspects, edges, [c for c in cleared if c in suspects])


# ---------------------------------------------------------------------------
# top generation and verification
# ---------------------------------------------------------------------------

def split_modules(code: str) -> dict:
    """module name -> source text of that module (``module`` .. ``endmodule``)."""
    out = {}
    clean = verilog.strip_comments(code)
    for m in verilog.find_modules(code):
        end = clean.find("endmodule", m.start)
        end = len(code) if end < 0 else end + len("endmodule")
        out[m.name] = code[m.start:end].strip("\n") + "\n"
    return out


def assemble_design(top_code: str, sub_codes: dict) -> str:
    """Single-file design: top first, then submodules in name order."""
    parts = [top_code.rstrip("\n") + "\n"]
    parts += [sub_codes[k].rstrip("\n") + "\n" for k in sorted(sub_codes)]
    return "\n".join(parts)


def render_submodules(ifaces: dict, plan=None) -> str:
    out = []
    for sid in sorted(ifaces):
        rows = ", ".join(f"{r.direction} [{r.width_bits - 1}:0] {r.hdl_port}"
                         for r in ifaces[sid].port_map)
        extra = ""
        if plan is not None:
            try:
                extra = f"  // {plan.get(sid).interface.semantics_summary}"
            except KeyError:
                pass
        out.append(f"module {sid}({rows});{extra}")
    return "\n".join(out)


def generate_top_level(plan, ifaces: dict, top_iface, gateway, project: str, top_name: str,
                       c_source: str, archive=None):
    """Top HDL plus its validated InstanceGraph; one constrained re-prompt on defects."""
    from .hdlgen import render_ports

    archive = archive or NullArchive()
    reminder = ""
    defects: list[str] = []
    for call in (1, 2):
        prompt = render_template(TOP_LEVEL, {
            "project": project, "top_module": top_name, "c_source": c_source,
            "top_ports": render_ports(top_iface), "submodules": render_submodules(ifaces, plan),
            "reminder": reminder})
        ex = gateway.complete(prompt)
        archive.put(f"top.prompt{call}.txt", prompt)
        archive.put(f"top.response{call}.txt", ex.response)
        try:
            code = extract_fenced_code(ex.response, "verilog")
        except ExtractionError as exc:
            defects = [str(exc)]
            reminder = FENCE_REMINDER
            continue
        graph, defects = build_instance_graph(code, top_name, ifaces, top_iface,
                                              plan.ids if plan is not None else ())
        if not defects:
            return code, graph
        reminder = "REMINDER: fix these integration defects: " + "; ".join(defects)
    raise IntegrationStructureError(defects)


def load_probe_golden(path, graph: InstanceGraph, ifaces: dict):
    """Probe golden uses ``<submodule>.<c_param>`` names; map them onto probe aliases.

    Only submodules instantiated exactly once have a defined correspondence.
    """
    trace = parse_trace_v1(Path(path).read_text())
    by_module: dict = {}
    for inst, mod in graph.instances.items():
        by_module.setdefault(mod, []).append(inst)
    mapping = {}
    for name in trace.ports:
        mod, _, cparam = name.partition(".")
        insts = by_module.get(mod, [])
        if len(insts) != 1 or mod not in ifaces:
            continue
        hdl = ifaces[mod].c_to_hdl.get(cparam)
        if hdl is not None:
            mapping[name] = f"{insts[0]}.{hdl}"
    return trace.subset(mapping).rename(mapping)


@dataclass
class TopContext:
    """Everything verify_top needs besides the gateway."""
    top_name: str
    ifaces: dict
    top_iface: object
    fixed_modules: dict          # submodule code not open for repair
    golden: object               # diffverify.GoldenRef
    dut_testbench: str           # approved top testbench text (uninstrumented)
    sim_binding: object
    workdir: Path
    instrumented_out: Path | None = None
    plan_ids: tuple = ()


def _split_editable(code: str, ctx: TopContext):
    mods = split_modules(code)
    if ctx.top_name not in mods:
        raise ExtractionError(f"repair lacks module {ctx.top_name}")
    subs = dict(ctx.fixed_modules)
    for name, text in mods.items():
        if name != ctx.top_name and name in ctx.ifaces:
            subs[name] = text
    return mods[ctx.top_name], subs


def verify_top(top_code: str, ctx: TopContext, gateway, limit: int, c_reference: str,
               archive=None, check_syntax=None, editable_subs: dict | None = None,
               max_entries: int = 10):
    """Top-level differential loop with probe comparison and slice-annotated bundles.

    ``editable_subs`` (id -> code) are shown to and replaceable by the model.
    """
    archive = archive or NullArchive()
    workdir = Path(ctx.workdir)
    case_map, stimuli = load_cases(ctx.golden.cases) if ctx.golden.cases else (None, {})
    po_names = [r.hdl_port for r in ctx.top_iface.outputs]
    state = {}

    def sim_dut(code, it):
        top, subs = _split_editable(code, ctx)
        graph, defects = build_instance_graph(top, ctx.top_name, ctx.ifaces, ctx.top_iface,
                                              ctx.plan_ids)
        if defects:
            raise IntegrationStructureError(defects)
        inst_top, probes = instrument_boundaries(top, graph, ctx.top_name)
        tb = instrument_testbench(ctx.dut_testbench, probes)
        d = workdir / f"iter{it}"
        if ctx.instrumented_out is not None:
            atomic_write(Path(ctx.instrumented_out), inst_top.encode())
        atomic_write(d / "design.v", assemble_design(inst_top, subs).encode())
        atomic_write(d / "tb.v", tb.encode())
        state["graph"] = graph
        return simulate_to_trace(d / "design.v", d / "tb.v", ctx.sim_binding, d / "dut.dump")

    def sim_golden():
        return simulate_to_trace(ctx.golden.design, ctx.golden.testbench, ctx.sim_binding,
                                 workdir / "golden.dump")

    def compare(dt, gt):
        rename = {c: h for c, h in ctx.top_iface.c_to_hdl.items()}
        primary = compare_traces(dt.subset(po_names), gt.rename(rename).subset(po_names),
                                 case_map, stimuli, TOP)
        logs = [primary]
        if ctx.golden.probes:
            pg = load_probe_golden(ctx.golden.probes, state["graph"], ctx.ifaces)
            if pg.ports:
                logs.append(compare_traces(dt.subset(pg.ports), pg, case_map, stimuli, TOP))
        return merge_logs(TOP, *logs) if len(logs) > 1 else primary

    def localize(mlog, dt):
        res = locate_fault(mlog, state["graph"])
        archive.put("slice.txt", res.describe())
        return res.describe(), [res.note()]

    code = top_code
    if editable_subs:
        code = assemble_design(top_code, editable_subs)
    return differential_loop(TOP, code, simulate_dut=sim_dut, golden_trace=sim_golden,
                             compare=compare, gateway=gateway, limit=limit,
                             c_reference=c_reference, archive=archive,
                             check_syntax=check_syntax, localize=localize,
                             max_entries=max_entries)
