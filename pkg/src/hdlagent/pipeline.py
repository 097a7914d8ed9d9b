"""Stage orchestration: decomposition, per-submodule generation/repair/verification,
integration, top verification and evaluation, for every repetition round.

Each stage checks the persisted StageStatus first, so re-running after an
interruption picks up at the first stage that has not passed yet.
"""
from __future__ import annotations

import enum
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import hdlgen
from .decomposer import (CSubmodule, load_plan, propose_decomposition,
                         reintegrate_and_check, top_contract, write_plan)
from .diffverify import GoldenRef, functional_repair_loop
from .errors import (AdaptationError, BuildError, DecompositionError, ExecutionError,
                     ExtractionError, GenerationError, HdlAgentError, IntegrationStructureError,
                     ProviderError, SetupError, SimError, SpecError, SynthesisError,
                     ToolEnvironmentError)
from .gateway import Gateway, ProviderConfig, ScriptedMock, extract_fenced_code, render_template
from .hdlgen import DesignConstraints, HdlSource
from .integrator import (TopContext, assemble_design, build_instance_graph, generate_top_level,
                         render_submodules, split_modules, verify_top)
from .metrics import compute_reduction, count_hdl_lines, emit_report
from .prompts import TOP_LEVEL
from .rag import DEFAULT_LIBRARY, RuleLibrary, repair_syntax_loop
from .toolchain import (AdapterBinding, CompileResult, HlsResult, Toolchain, ToolKind,
                        run_hdl_compile, run_hls_synthesize, run_logic_synth)
from .workspace import TOP, Round, Stage, Status, Stopwatch, Workspace, atomic_write

log = logging.getLogger(__name__)

GENERATION_ERRORS = (SpecError, GenerationError, AdaptationError, ProviderError, ExtractionError)


class BaselineMode(str, enum.Enum):
    Full = "full"
    DirectC = "direct_c"
    DirectNL = "direct_nl"
    NoDecompose = "no_decompose"
    TopFeedbackOnly = "top_feedback_only"

    @classmethod
    def parse(cls, text: str) -> "BaselineMode":
        key = text.replace("-", "_").lower()
        for m in cls:
            if key in (m.value, m.name.lower()):
                return m
        raise ValueError(f"unknown mode {text!r}; choose from "
                         + ", ".join(m.value for m in cls))

    @property
    def decomposes(self) -> bool:
        return self in (BaselineMode.Full, BaselineMode.TopFeedbackOnly)

    @property
    def required_tools(self) -> tuple:
        if self == BaselineMode.Full:
            return tuple(ToolKind)
        if self == BaselineMode.TopFeedbackOnly:
            return (ToolKind.CCompiler, ToolKind.Hls, ToolKind.RtlSim)
        return (ToolKind.Hls, ToolKind.RtlSim)


_BINDING_KEYS = {"c": ToolKind.CCompiler, "hls": ToolKind.Hls, "sim": ToolKind.RtlSim,
                 "synth": ToolKind.LogicSynth}


@dataclass
class PipelineConfig:
    workspace: Path
    toolchain: Toolchain
    provider: ProviderConfig
    mode: BaselineMode = BaselineMode.Full
    rounds: int | None = None
    parallel: int = 4
    auto_approve: bool = False
    rules_path: Path = DEFAULT_LIBRARY
    max_entries: int = 10
    min_similarity: float | None = None

    def problems(self) -> list[str]:
        out = []
        for kind in self.mode.required_tools:
            try:
                self.toolchain.require(kind)
            except ToolEnvironmentError as exc:
                out.append(f"{self.mode.value} mode: {exc}")
        if self.auto_approve and not self.toolchain.all_mock:
            out.append("--auto-approve is only allowed when every tool binding is a mock")
        if self.parallel < 1:
            out.append("parallel must be >= 1")
        return out


def binding_from_dict(kind: ToolKind, d: dict, base: Path) -> AdapterBinding:
    d = dict(d or {})
    mode = d.pop("mode", "mock")
    if mode == "mock":
        fx = d.pop("fixture_dir", None)
        if fx is None:
            raise SetupError(f"mock {kind.value} binding needs fixture_dir")
        return AdapterBinding.mock(kind, base / fx, **d)
    return AdapterBinding.real(kind, d.pop("commands", None), **d)


def load_config(path, workspace=None, **overrides) -> PipelineConfig:
    """YAML config: provider, tools (c/hls/sim/synth), rules, mode, rounds, parallel."""
    path = Path(path)
    base = path.parent
    doc = yaml.safe_load(path.read_text()) or {}
    prov = dict(doc.get("provider") or {})
    endpoint = prov.get("endpoint", "")
    if endpoint.startswith("mock:"):
        script = Path(endpoint[5:])
        prov["endpoint"] = "mock:" + str(script if script.is_absolute() else base / script)
    try:
        provider = ProviderConfig(**prov)
    except TypeError as exc:
        raise SetupError(f"provider config: {exc}") from exc
    tools = doc.get("tools") or {}
    unknown = set(tools) - set(_BINDING_KEYS)
    if unknown:
        raise SetupError(f"unknown tool keys {sorted(unknown)}")
    kw = {name: binding_from_dict(kind, tools[name], base)
          for name, kind in _BINDING_KEYS.items() if name in tools}
    rules = doc.get("rules")
    cfg = PipelineConfig(
        workspace=Path(workspace or doc.get("workspace") or "."),
        toolchain=Toolchain(**kw), provider=provider,
        mode=BaselineMode.parse(doc.get("mode", "full")), rounds=doc.get("rounds"),
        parallel=int(doc.get("parallel", 4)), auto_approve=bool(doc.get("auto_approve", False)),
        rules_path=(base / rules) if rules else DEFAULT_LIBRARY,
        max_entries=int(doc.get("max_entries", 10)),
        min_similarity=doc.get("min_similarity"))
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, BaselineMode.parse(v) if k == "mode" and isinstance(v, str) else v)
    return cfg


@dataclass
class RoundResult:
    round: Round
    top_pass: bool = False
    pending: list = field(default_factory=list)
    failed: str | None = None


@dataclass
class RunResult:
    exit_code: int
    rounds: list
    report: tuple | None = None
    message: str = ""


class Halt(Exception):
    """A unit cannot continue in this round (failure already recorded)."""


class Pending(Exception):
    """A testbench awaits human approval."""


@dataclass
class UnitState:
    sub: CSubmodule
    iface: object = None
    code: str = ""
    golden: HlsResult | None = None


class Pipeline:
    def __init__(self, config: PipelineConfig, ws: Workspace | None = None, gateway=None):
        self.cfg = config
        self.ws = ws or Workspace.open(config.workspace)
        self.m = self.ws.manifest
        self.tc = config.toolchain
        if gateway is None:
            provider = None
            if config.provider.is_mock:
                state = self.ws.root / "logs" / "gateway" / f"{config.mode.value}.consumed.json"
                provider = ScriptedMock.from_file(config.provider.endpoint[5:], state)
            gateway = Gateway(config.provider, provider)
        self.gw = gateway
        self.library = RuleLibrary.load(config.rules_path)
        self.constraints = DesignConstraints()
        self.c_source = self.ws.read_text(self.m.c_source_path)
        self.c_testbench = self.ws.read_text(self.m.c_testbench_path)
        self._counters: dict = {}
        self._lock = threading.Lock()

    # -- environment ---------------------------------------------------------
    def check_environment(self) -> None:
        probs = self.cfg.problems()
        if probs:
            raise ToolEnvironmentError("; ".join(probs))
        for b in self.tc.bindings:
            if b.is_mock:
                if not b.fixture_dir.is_dir():
                    raise ToolEnvironmentError(f"fixture directory {b.fixture_dir} is missing")
                continue
            for name in b.commands:
                if b.commands[name]:
                    b.check_available(name)
        if self.cfg.mode == BaselineMode.DirectNL and not self.m.nl_description_path:
            raise SetupError("direct_nl mode needs nl_description_path in the manifest")

    # -- helpers -------------------------------------------------------------
    def _next(self, key) -> int:
        """Per-unit sequence numbers, so parallel units never interleave."""
        with self._lock:
            self._counters[key] = self._counters.get(key, 0) + 1
            return self._counters[key]

    def _advance(self, rnd, scope, stage, status, attempts=0, sw=None):
        self.ws.advance_stage(rnd, scope, stage, status, attempts, sw.elapsed if sw else 0.0)

    def _top_iface(self):
        contract = top_contract(self.c_source, self.m.top_function, self.m.top_return_port)
        return hdlgen.identity_interface(self.m.top_function, contract), contract

    def _compile_fn(self, rnd: Round, unit: str, module: str, iface, assemble=None):
        """code -> CompileResult: interface lint first, then the simulator front end."""
        def fn(code: str) -> CompileResult:
            if assemble is None:
                msgs = hdlgen.lint_hdl(code, module, iface, f"{unit}.v")
                design = code
            else:
                msgs, design = assemble(code)
            if msgs:
                return CompileResult("Fail", "\n".join(msgs) + "\n")
            path = self.ws.unit_dir("dumps", rnd, unit, "compile", str(self._next((rnd.tag, unit))),
                                     "design.v")
            atomic_write(path, design.encode())
            return run_hdl_compile(path, self.tc.require(ToolKind.RtlSim))
        return fn

    def _syntax_stage(self, rnd, unit, scope, hdl: HdlSource, compile_fn, repair=True) -> str:
        sw = Stopwatch()
        ascope = None if scope == TOP else unit
        res = compile_fn(hdl.code)
        self.ws.record_artifact(Stage.SyntaxRepair, rnd, json.dumps(
            {"status": res.status, "log": res.log}, indent=2), "initial.json", scope=ascope)
        if res.ok:
            self._advance(rnd, scope, Stage.SyntaxRepair, Status.Pass, 0, sw)
            return hdl.code
        if not repair:
            self._advance(rnd, scope, Stage.SyntaxRepair, Status.Fail, 0, sw)
            raise Halt(f"{unit}: syntax check failed")
        out = repair_syntax_loop(hdl.failed(res.log), self.library, self.gw, compile_fn,
                                 self.ws.limit("syntax_repair"),
                                 self.ws.archive(Stage.SyntaxRepair, rnd, ascope),
                                 self.cfg.min_similarity)
        status = Status.Pass if out.status == "Pass" else Status.Exhausted
        self._advance(rnd, scope, Stage.SyntaxRepair, status, out.attempts, sw)
        if status != Status.Pass:
            raise Halt(f"{unit}: syntax repair exhausted")
        return out.hdl.code

    def _regression_fixer(self, rnd, unit, compile_fn):
        """Syntax check inside functional loops; RAG repair on regression."""
        def fix(code, it):
            res = compile_fn(code)
            if res.ok:
                return code
            out = repair_syntax_loop(HdlSource(unit, it, code, "Fail", res.log), self.library,
                                     self.gw, compile_fn, self.ws.limit("syntax_repair"),
                                     self.ws.archive(Stage.SyntaxRepair, rnd,
                                                     None if unit == TOP else unit),
                                     self.cfg.min_similarity)
            return out.hdl.code if out.status == "Pass" else None
        return fix

    def _gate(self, rnd, unit, tb_path: Path, scope, fail_stage) -> None:
        state = hdlgen.approval_state(tb_path)
        if state == "pending" and self.cfg.auto_approve:
            state = hdlgen.decide(tb_path, "approve")
        if state == "approved":
            return
        if state == "rejected":
            st = self.ws.stage_status(rnd).get(scope, fail_stage)
            if st is None:
                self._advance(rnd, scope, fail_stage, Status.Fail)
            raise Halt(f"{unit}: testbench rejected")
        raise Pending(str(self.ws.rel(tb_path)))

    def _hls(self, rnd, unit: str, c_source: str, entry: str) -> HlsResult:
        out = self.ws.unit_dir("golden", rnd, unit)
        if (out / "golden.v").exists() and (out / "tb" / "tb.v").exists():
            return HlsResult(out / "golden.v", out / "tb" / "tb.v", "",
                             out / "cases" if (out / "cases").exists() else None,
                             out / "probes.trace" if (out / "probes.trace").exists() else None)
        res = run_hls_synthesize(unit, c_source, entry, self.tc.require(ToolKind.Hls), out,
                                 self.c_testbench)
        if res.log:
            self.ws.record_artifact(Stage.GenerateHdl, rnd, res.log, "hls.log",
                                    scope=None if unit == "top" else unit)
        return res

    def _testbench(self, rnd, unit, iface, module, scope, archive) -> Path:
        tb_path = self.ws.unit_dir("dut", rnd, unit, "tb.v")
        if not tb_path.exists():
            tb = hdlgen.adapt_testbench(self.c_testbench, iface, self.gw, module, archive)
            atomic_write(tb_path, tb.encode())
            hdlgen.mark_pending(tb_path)
        return tb_path

    # -- decomposition --------------------------------------------------------
    def decompose(self, rnd: Round):
        d = self.ws.unit_dir("submodules", rnd)
        st = self.ws.stage_status(rnd).get(TOP, Stage.Decompose)
        if st == Status.Pass:
            return load_plan(d)
        if st is not None:
            raise Halt("decomposition failed earlier")
        sw = Stopwatch()
        arch = self.ws.archive(Stage.Decompose, rnd)
        try:
            plan = propose_decomposition(self.c_source, self.gw, project=self.m.project_name,
                                         top_function=self.m.top_function,
                                         toolchain=self.tc if self.tc.c else None, archive=arch)
            extra = []
            if self.m.submodule_ids and sorted(plan.ids) != sorted(self.m.submodule_ids):
                extra.append(f"plan: submodules {plan.ids} differ from the manifest's "
                             f"{self.m.submodule_ids}")
            if "top" in plan.ids:
                extra.append("plan: submodule id 'top' is reserved")
            if extra:
                raise DecompositionError(extra)
            write_plan(plan, d)
            verdict = reintegrate_and_check(plan, self.c_source, self.c_testbench,
                                            self.tc.require(ToolKind.CCompiler))
            arch.put("reintegration.txt", f"{verdict.status}\n{verdict.report}\n")
        except (DecompositionError, ExtractionError, ProviderError, BuildError,
                ExecutionError) as exc:
            arch.put("error.txt", str(exc) + "\n" + getattr(exc, "log", ""))
            self._advance(rnd, TOP, Stage.Decompose, Status.Fail, 0, sw)
            raise Halt(f"decomposition failed: {exc}") from exc
        status = Status.Pass if verdict.passed else Status.Fail
        self._advance(rnd, TOP, Stage.Decompose, status, 0, sw)
        if not verdict.passed:
            raise Halt(f"re-integration mismatch: {verdict.report}")
        return plan

    # -- one submodule ----------------------------------------------------------
    def submodule(self, rnd: Round, sub: CSubmodule, upto: Stage) -> UnitState:
        sid = sub.submodule_id
        status = self.ws.stage_status(rnd)
        u = UnitState(sub)
        sdir = self.ws.unit_dir("submodules", rnd, sid)
        code_path = self.ws.unit_dir("dut", rnd, sid, f"{sid}.v")
        top_fb = self.cfg.mode == BaselineMode.TopFeedbackOnly

        def latest():
            return self.ws.stage_status(rnd).latest(sid)

        st, stt = latest()
        if stt in (Status.Fail, Status.Exhausted):
            raise Halt(f"{sid} failed {st.value} earlier")

        # GenerateHdl
        if status.get(sid, Stage.GenerateHdl) != Status.Pass:
            sw = Stopwatch()
            arch = self.ws.archive(Stage.GenerateHdl, rnd, sid)
            try:
                if not top_fb:
                    u.golden = self._hls(rnd, sid, sub.c_source, sub.entry_function)
                specs = hdlgen.generate_specs(sub, self.gw, arch)
                hdlgen.write_specs(sdir, *specs)
                hdl = hdlgen.generate_hdl(sub, specs, self.constraints, self.gw, arch)
                atomic_write(code_path, hdl.code.encode())
                if not top_fb:
                    self._testbench(rnd, sid, specs[1], sid, sid, arch)
            except GENERATION_ERRORS + (SynthesisError,) as exc:
                arch.put("error.txt", f"{exc}\n{getattr(exc, 'log', '')}")
                self._advance(rnd, sid, Stage.GenerateHdl, Status.Fail, 0, sw)
                raise Halt(f"{sid}: generation failed: {exc}") from exc
            self._advance(rnd, sid, Stage.GenerateHdl, Status.Pass, 0, sw)
        _, u.iface = hdlgen.load_specs(sdir, sid)
        u.code = code_path.read_text()
        if upto == Stage.GenerateHdl:
            return u

        # SyntaxRepair
        compile_fn = self._compile_fn(rnd, sid, sid, u.iface)
        if self.ws.stage_status(rnd).get(sid, Stage.SyntaxRepair) is None:
            u.code = self._syntax_stage(rnd, sid, sid, HdlSource(sid, 0, u.code), compile_fn)
            atomic_write(code_path, u.code.encode())
        if upto == Stage.SyntaxRepair or top_fb:
            return u

        # SubmoduleVerify
        if self.ws.stage_status(rnd).get(sid, Stage.SubmoduleVerify) is None:
            tb_path = self.ws.unit_dir("dut", rnd, sid, "tb.v")
            self._gate(rnd, sid, tb_path, sid, Stage.SubmoduleVerify)
            u.golden = u.golden or self._hls(rnd, sid, sub.c_source, sub.entry_function)
            sw = Stopwatch()
            try:
                v = functional_repair_loop(
                    sid, u.code, GoldenRef.from_hls(u.golden), tb_path, self.gw,
                    self.tc.require(ToolKind.RtlSim), self.ws.limit("functional_repair"),
                    sub.c_source, self.ws.unit_dir("dumps", rnd, sid),
                    port_map=u.iface.c_to_hdl,
                    archive=self.ws.archive(Stage.SubmoduleVerify, rnd, sid),
                    check_syntax=self._regression_fixer(rnd, sid, compile_fn),
                    max_entries=self.cfg.max_entries)
            except (SimError, HdlAgentError) as exc:
                if isinstance(exc, ToolEnvironmentError):
                    raise
                self.ws.record_artifact(Stage.SubmoduleVerify, rnd, str(exc), "error.txt",
                                        scope=sid)
                self._advance(rnd, sid, Stage.SubmoduleVerify, Status.Fail, 0, sw)
                raise Halt(f"{sid}: verification aborted: {exc}") from exc
            u.code = v.code
            atomic_write(code_path, u.code.encode())
            status = Status.Pass if v.passed else Status.Exhausted
            self._advance(rnd, sid, Stage.SubmoduleVerify, status, v.repairs, sw)
            if not v.passed:
                raise Halt(f"{sid}: functional repair exhausted")
        return u

    # -- top level --------------------------------------------------------------
    def _top_assembler(self, ctx_subs: dict, top_iface, plan_ids, editable: bool):
        def assemble(code):
            mods = split_modules(code)
            top = mods.get(self.m.top_function)
            if top is None:
                return [f"top.v:1: error: module '{self.m.top_function}' is not defined"], ""
            subs = dict(ctx_subs)
            if editable:
                subs.update({k: v for k, v in mods.items() if k in subs})
            ifaces = self._ifaces
            _, defects = build_instance_graph(top, self.m.top_function, ifaces, top_iface,
                                              plan_ids)
            msgs = [f"top.v:1: error: {d}" for d in defects]
            return msgs, assemble_design(top, subs)
        return assemble

    def _structure_fixer(self, rnd, compile_fn, top_iface, plan, archive):
        """Repair candidates with wiring defects get one constrained top-level re-prompt."""
        def fix(code, it):
            top = split_modules(code).get(self.m.top_function, code)
            _, defects = build_instance_graph(top, self.m.top_function, self._ifaces,
                                              top_iface, plan.ids if plan else ())
            if defects:
                from .hdlgen import render_ports
                prompt = render_template(TOP_LEVEL, {
                    "project": self.m.project_name, "top_module": self.m.top_function,
                    "c_source": self.c_source, "top_ports": render_ports(top_iface),
                    "submodules": render_submodules(self._ifaces, plan),
                    "reminder": "REMINDER: fix these integration defects: "
                                + "; ".join(defects)})
                try:
                    ex = self.gw.complete(prompt)
                    archive.put(f"iter{it}.structure.txt", ex.response)
                    fixed = extract_fenced_code(ex.response, "verilog")
                except (ProviderError, ExtractionError):
                    return None
                _, defects = build_instance_graph(fixed, self.m.top_function, self._ifaces,
                                                  top_iface, plan.ids if plan else ())
                if defects:
                    return None
                mods = split_modules(code)
                rest = {k: v for k, v in mods.items() if k != self.m.top_function}
                code = assemble_design(fixed, rest) if rest else fixed
            return self._regression_fixer(rnd, TOP, compile_fn)(code, it)
        return fix

    def integrate_and_verify(self, rnd: Round, plan, units: dict, upto: Stage) -> bool:
        mode = self.cfg.mode
        top_iface, contract = self._top_iface()
        self._ifaces = {sid: u.iface for sid, u in units.items()}
        sub_codes = {sid: u.code for sid, u in units.items()}
        top_name = self.m.top_function
        top_path = self.ws.unit_dir("dut", rnd, "top", "top.v")
        tb_path = self.ws.unit_dir("dut", rnd, "top", "tb.v")
        snap = self.ws.stage_status(rnd)
        direct = mode in (BaselineMode.DirectC, BaselineMode.DirectNL)
        editable = mode == BaselineMode.TopFeedbackOnly
        plan_ids = plan.ids if plan else ()
        assemble = self._top_assembler(sub_codes, top_iface, plan_ids, editable)
        compile_fn = self._compile_fn(rnd, TOP, top_name, top_iface,
                                      assemble=assemble if plan else None)
        golden = None

        for st in (Stage.Integrate, Stage.TopVerify, Stage.Evaluate, Stage.SyntaxRepair):
            if snap.get(TOP, st) in (Status.Fail, Status.Exhausted):
                raise Halt(f"top {st.value} failed earlier")

        if plan is not None:
            # Integrate
            if snap.get(TOP, Stage.Integrate) != Status.Pass:
                sw = Stopwatch()
                arch = self.ws.archive(Stage.Integrate, rnd)
                if not top_path.exists():
                    try:
                        golden = self._hls(rnd, "top", self.c_source, top_name)
                        code, _ = generate_top_level(plan, self._ifaces, top_iface, self.gw,
                                                     self.m.project_name, top_name,
                                                     self.c_source, arch)
                        atomic_write(top_path, code.encode())
                        self._testbench(rnd, "top", top_iface, top_name, TOP, arch)
                    except GENERATION_ERRORS + (IntegrationStructureError, SynthesisError) as exc:
                        arch.put("error.txt", str(exc))
                        self._advance(rnd, TOP, Stage.Integrate, Status.Fail, 0, sw)
                        raise Halt(f"integration failed: {exc}") from exc
                self._gate(rnd, "top", tb_path, TOP, Stage.Integrate)
                res = compile_fn(top_path.read_text())
                arch.put("compile.json", json.dumps({"status": res.status, "log": res.log}))
                if not res.ok:
                    out = repair_syntax_loop(
                        HdlSource(TOP, 0, top_path.read_text(), "Fail", res.log), self.library,
                        self.gw, compile_fn, self.ws.limit("syntax_repair"),
                        self.ws.archive(Stage.SyntaxRepair, rnd), self.cfg.min_similarity)
                    if out.status != "Pass":
                        self._advance(rnd, TOP, Stage.Integrate, Status.Fail, 0, sw)
                        raise Halt("top-level syntax repair exhausted")
                    atomic_write(top_path, out.hdl.code.encode())
                self._advance(rnd, TOP, Stage.Integrate, Status.Pass, 0, sw)
        else:
            # whole-program modes: the top is generated like a submodule
            if snap.get(TOP, Stage.GenerateHdl) != Status.Pass:
                sw = Stopwatch()
                arch = self.ws.archive(Stage.GenerateHdl, rnd)
                try:
                    golden = self._hls(rnd, "top", self.c_source, top_name)
                    whole = CSubmodule(top_name, self.c_source, top_name, contract)
                    if direct:
                        if mode == BaselineMode.DirectNL:
                            text = self.ws.read_text(self.m.nl_description_path)
                            specs = (hdlgen.FunctionalSpec(top_name, text), top_iface)
                            c_text = "(not provided; implement the description below)"
                        else:
                            specs = (hdlgen.FunctionalSpec(
                                top_name, "Implement the C program exactly, port for port."),
                                top_iface)
                            c_text = self.c_source
                    else:
                        specs = hdlgen.generate_specs(whole, self.gw, arch)
                        c_text = self.c_source
                    hdlgen.write_specs(self.ws.unit_dir("submodules", rnd, "top"), *specs)
                    hdl = hdlgen.generate_hdl(whole, specs, self.constraints, self.gw, arch,
                                              c_source=c_text)
                    atomic_write(top_path, hdl.code.encode())
                    self._testbench(rnd, "top", top_iface, top_name, TOP, arch)
                except GENERATION_ERRORS + (SynthesisError,) as exc:
                    arch.put("error.txt", str(exc))
                    self._advance(rnd, TOP, Stage.GenerateHdl, Status.Fail, 0, sw)
                    raise Halt(f"generation failed: {exc}") from exc
                self._advance(rnd, TOP, Stage.GenerateHdl, Status.Pass, 0, sw)
            if upto == Stage.GenerateHdl:
                return False
            if self.ws.stage_status(rnd).get(TOP, Stage.SyntaxRepair) is None:
                code = self._syntax_stage(rnd, "top", TOP, HdlSource(TOP, 0, top_path.read_text()),
                                          compile_fn, repair=not direct)
                atomic_write(top_path, code.encode())
            if upto in (Stage.SyntaxRepair, Stage.SubmoduleVerify):
                return False

        if upto == Stage.Integrate:
            return False
        # TopVerify
        if self.ws.stage_status(rnd).get(TOP, Stage.TopVerify) is None:
            self._gate(rnd, "top", tb_path, TOP, Stage.TopVerify)
            golden = golden or self._hls(rnd, "top", self.c_source, top_name)
            g = GoldenRef.from_hls(golden)
            if editable:
                g.probes = None   # submodule-level golden feedback is disabled
            ctx = TopContext(top_name, self._ifaces, top_iface,
                             {} if editable else sub_codes, g, tb_path.read_text(),
                             self.tc.require(ToolKind.RtlSim), self.ws.unit_dir("dumps", rnd, "top"),
                             self.ws.unit_dir("dut", rnd, "top", "top_instrumented.v"),
                             tuple(plan_ids))
            limit = 0 if direct else self.ws.limit("integration_repair")
            arch = self.ws.archive(Stage.TopVerify, rnd)
            sw = Stopwatch()
            try:
                v = verify_top(top_path.read_text(), ctx, self.gw, limit, self.c_source, arch,
                               check_syntax=self._structure_fixer(rnd, compile_fn, top_iface,
                                                                  plan, arch),
                               editable_subs=sub_codes if editable else None,
                               max_entries=self.cfg.max_entries)
            except (SimError, HdlAgentError) as exc:
                if isinstance(exc, ToolEnvironmentError):
                    raise
                arch.put("error.txt", str(exc))
                self._advance(rnd, TOP, Stage.TopVerify, Status.Fail, 0, sw)
                raise Halt(f"top verification aborted: {exc}") from exc
            mods = split_modules(v.code)
            atomic_write(top_path, mods.get(top_name, v.code).encode())
            if editable:
                for sid in units:
                    if sid in mods:
                        atomic_write(self.ws.unit_dir("dut", rnd, sid, f"{sid}.v"),
                                     mods[sid].encode())
                        units[sid].code = mods[sid]
            if v.passed:
                status = Status.Pass
            else:
                status = Status.Fail if direct else Status.Exhausted
            self._advance(rnd, TOP, Stage.TopVerify, status, v.repairs, sw)
            if not v.passed:
                raise Halt("top-level verification did not pass")
        return self.ws.stage_status(rnd).get(TOP, Stage.TopVerify) == Status.Pass

    # -- evaluation -------------------------------------------------------------
    def evaluate(self, rnd: Round, units: dict) -> None:
        if self.tc.synth is None:
            return
        if self.ws.stage_status(rnd).get(TOP, Stage.Evaluate) is not None:
            return
        sw = Stopwatch()
        top_name = self.m.top_function
        top = self.ws.unit_dir("dut", rnd, "top", "top.v").read_text()
        design = assemble_design(top, {sid: u.code for sid, u in units.items()})
        edir = self.ws.unit_dir("reports", rnd)
        atomic_write(edir / "agent.v", design.encode())
        period = float(self.m.clock_period)
        doc = {"clock_period": period, "agent": None, "hls": None, "manual": None,
               "reduction_vs_hls": None, "reduction_vs_manual": None, "loc": {}}
        try:
            agent = run_logic_synth(edir / "agent.v", period, self.tc.synth, top_name)
            doc["agent"] = agent.to_dict()
            doc["loc"]["agent"] = count_hdl_lines(design).code_lines
            gpath = self.ws.unit_dir("golden", rnd, "top", "golden.v")
            if gpath.exists():
                hls = run_logic_synth(gpath, period, self.tc.synth, top_name)
                doc["hls"] = hls.to_dict()
                doc["loc"]["hls"] = count_hdl_lines(gpath.read_text()).code_lines
                doc["reduction_vs_hls"] = compute_reduction(agent, hls).to_dict()
            if self.m.manual_design_path:
                mpath = self.ws.resolve(self.m.manual_design_path)
                man = run_logic_synth(mpath, period, self.tc.synth, top_name)
                doc["manual"] = man.to_dict()
                doc["loc"]["manual"] = count_hdl_lines(mpath.read_text()).code_lines
                doc["reduction_vs_manual"] = compute_reduction(agent, man).to_dict()
        except (SynthesisError, HdlAgentError) as exc:
            if isinstance(exc, ToolEnvironmentError):
                raise
            self.ws.record_artifact(Stage.Evaluate, rnd, str(exc), "error.txt")
            self._advance(rnd, TOP, Stage.Evaluate, Status.Fail, 0, sw)
            return
        self.ws.record_artifact(Stage.Evaluate, rnd, json.dumps(doc, indent=2, sort_keys=True),
                                "evaluate.json")
        self._advance(rnd, TOP, Stage.Evaluate, Status.Pass, 0, sw)

    # -- rounds -----------------------------------------------------------------
    def run_round(self, rnd: Round, upto: Stage = Stage.Evaluate) -> RoundResult:
        res = RoundResult(rnd)
        try:
            plan = None
            units: dict = {}
            if self.cfg.mode.decomposes:
                plan = self.decompose(rnd)
                if upto == Stage.Decompose:
                    return res
                sub_upto = min(upto, Stage.SubmoduleVerify, key=lambda s: s.order)
                with ThreadPoolExecutor(max_workers=self.cfg.parallel) as pool:
                    futs = {s.submodule_id: pool.submit(self.submodule, rnd, s, sub_upto)
                            for s in plan.submodules}
                    errors = []
                    for sid, f in futs.items():
                        try:
                            units[sid] = f.result()
                        except Pending as exc:
                            res.pending.append(str(exc))
                        except Halt as exc:
                            errors.append(str(exc))
                if errors:
                    raise Halt("; ".join(errors))
                if res.pending or upto.order <= Stage.SubmoduleVerify.order:
                    return res
            elif upto == Stage.Decompose:
                return res
            res.top_pass = self.integrate_and_verify(rnd, plan, units, upto)
            if res.top_pass and upto == Stage.Evaluate:
                self.evaluate(rnd, units)
        except Pending as exc:
            res.pending.append(str(exc))
        except Halt as exc:
            res.failed = str(exc)
            log.info("round %s: %s", rnd.tag, exc)
        return res

    def run(self, upto: Stage = Stage.Evaluate, emit: bool = True) -> RunResult:
        n = self.cfg.rounds or self.m.repetitions_n
        results = [self.run_round(Round(i, self.cfg.mode.value), upto) for i in range(n)]
        report = None
        if emit and self.ws.rounds():
            report = emit_report(self.ws)
        pending = [p for r in results for p in r.pending]
        msg = ""
        if pending:
            msg = ("testbench awaiting approval: " + ", ".join(sorted(set(pending)))
                   + " (use approve-tb)")
        code = 0 if any(r.top_pass for r in results) else 1
        if upto != Stage.Evaluate and upto != Stage.TopVerify and not pending \
                and not any(r.failed for r in results):
            code = 0
        return RunResult(code, results, report, msg)


def run_pipeline(config: PipelineConfig, upto: Stage = Stage.Evaluate, gateway=None) -> RunResult:
    """Exit 0 iff some round reaches top-level Pass; 1 otherwise; 2 on environment errors."""
    try:
        pipe = Pipeline(config, gateway=gateway)
        pipe.check_environment()
        return pipe.run(upto)
    except (ToolEnvironmentError, SetupError) as exc:
        return RunResult(2, [], None, f"environment error: {exc}")


def approve_testbench(ws: Workspace, rnd, unit: str, decision: str) -> str:
    """Record the human decision on ``dut/<round>/<unit>/tb.v``."""
    rnd = rnd if isinstance(rnd, Round) else Round.parse(rnd)
    tb = ws.unit_dir("dut", rnd, unit, "tb.v")
    state = hdlgen.decide(tb, decision)
    if state == "rejected":
        scope = TOP if unit == "top" else unit
        snap = ws.stage_status(rnd)
        if scope == TOP:
            stage = Stage.Integrate if snap.get(TOP, Stage.Decompose) else Stage.TopVerify
        else:
            stage = Stage.SubmoduleVerify
        if snap.get(scope, stage) is None:
            ws.advance_stage(rnd, scope, stage, Status.Fail)
    return state


__all__ = ["BaselineMode", "PipelineConfig", "Pipeline", "RunResult", "RoundResult",
           "load_config", "run_pipeline", "approve_testbench"]
