"""Adapters over the external tools: C compiler, HLS, RTL simulator, logic synthesis.

Each adapter has a real binding (a command template run as an isolated
subprocess) and a mock binding (fixtures looked up by content hash). Command
templates are shlex-split before substitution; a token that is exactly a
placeholder expands to one argument per path, so paths with spaces survive.

Mock fixture layout, relative to the binding's fixture directory::

    c/<key>.stdout | c/<key>.fail | c/<key>.syntax.log
    hls/<submodule_id>/golden.v, tb/, [cases], [probes.trace] | hls/<id>/FAIL + hls.log
    hdl/<design_key>.ok | hdl/<design_key>.log
    sim/<design_key>-<testbench_key>.dump
    synth/<design_key>.rpt | synth/default.rpt
"""
from __future__ import annotations

import enum
import hashlib
import logging
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import (ExecutionError, MockMissError, PreconditionError, SimError,
                      SimTimeoutError, SynthesisError, ToolEnvironmentError)
from .traces import Dialect

log = logging.getLogger(__name__)

TOOLS_ENV = "CORRECTHDL_TOOLS"
_TOOL_SLOTS = threading.BoundedSemaphore(os.cpu_count() or 1)


class ToolKind(str, enum.Enum):
    CCompiler = "CCompiler"
    Hls = "Hls"
    RtlSim = "RtlSim"
    LogicSynth = "LogicSynth"


DEFAULT_TIMEOUTS = {ToolKind.CCompiler: 60.0, ToolKind.Hls: 600.0, ToolKind.RtlSim: 60.0,
                    ToolKind.LogicSynth: 600.0}

# open-tool defaults; every entry can be replaced from config
DEFAULT_COMMANDS = {
    ToolKind.CCompiler: {
        "build": "cc -std=c11 -O1 -o {out} {design} {testbench} -lm",
        "syntax": "cc -std=c11 -fsyntax-only {design}",
    },
    ToolKind.RtlSim: {
        "compile": "iverilog -g2001 -o {out} {design}",
        "simulate": ["iverilog -g2001 -o sim.vvp {design} {testbench}", "vvp -n sim.vvp"],
    },
    ToolKind.Hls: {},
    ToolKind.LogicSynth: {},
}


def content_key(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, str):
            p = p.encode("utf-8")
        h.update(str(len(p)).encode() + b"\0" + p)
    return h.hexdigest()[:16]


def c_key(sources, testbench) -> str:
    return content_key(*[s.encode() if isinstance(s, str) else s for s in sources],
                       b"--testbench--", testbench)


def file_key(path) -> str:
    return content_key(Path(path).read_bytes())


@dataclass
class AdapterBinding:
    kind: ToolKind
    mode: str = "mock"                      # "real" or "mock"
    commands: dict = field(default_factory=dict)
    fixture_dir: Path | None = None
    timeout: float | None = None
    dialect: Dialect = Dialect.TraceV1
    strobe: str | None = None
    dump_file: str = "trace.txt"

    def __post_init__(self):
        self.kind = ToolKind(self.kind)
        self.dialect = Dialect(self.dialect)
        if self.mode not in ("real", "mock"):
            raise ValueError(f"binding mode must be 'real' or 'mock', not {self.mode!r}")
        if self.mode == "mock":
            if self.fixture_dir is None:
                raise ValueError(f"mock {self.kind.value} binding needs a fixture directory")
            self.fixture_dir = Path(self.fixture_dir)
        else:
            merged = dict(DEFAULT_COMMANDS[self.kind])
            merged.update(self.commands or {})
            self.commands = merged
        if self.timeout is None:
            self.timeout = DEFAULT_TIMEOUTS[self.kind]

    @classmethod
    def mock(cls, kind, fixture_dir, **kw) -> "AdapterBinding":
        return cls(ToolKind(kind), "mock", fixture_dir=Path(fixture_dir), **kw)

    @classmethod
    def real(cls, kind, commands=None, **kw) -> "AdapterBinding":
        return cls(ToolKind(kind), "real", commands=dict(commands or {}), **kw)

    @property
    def is_mock(self) -> bool:
        return self.mode == "mock"

    def command(self, name: str) -> list[str]:
        tmpl = self.commands.get(name)
        if not tmpl:
            raise ToolEnvironmentError(
                f"{self.kind.value} binding has no '{name}' command template configured")
        return [tmpl] if isinstance(tmpl, str) else list(tmpl)

    def check_available(self, name: str) -> None:
        """Environment error unless every program named by the template resolves."""
        for tmpl in self.command(name):
            prog = shlex.split(tmpl)[0]
            if "{" in prog:
                continue
            if resolve_tool(prog) is None:
                raise ToolEnvironmentError(
                    f"{self.kind.value}: tool {prog!r} not found on PATH or ${TOOLS_ENV}")


@dataclass
class CompileResult:
    status: str                      # "Pass" | "Fail"
    log: str = ""
    artifact_path: Path | None = None

    def __post_init__(self):
        if self.status not in ("Pass", "Fail"):
            raise ValueError(self.status)
        if self.status == "Fail" and not self.log:
            self.log = "compilation failed (no diagnostic captured)"

    @property
    def ok(self) -> bool:
        return self.status == "Pass"


@dataclass
class HlsResult:
    golden_hdl: Path
    golden_testbench: Path
    log: str = ""
    cases: Path | None = None
    probes: Path | None = None


@dataclass
class SimStatus:
    completed: bool
    log: str = ""
    wall_time: float = 0.0


@dataclass
class SynthReport:
    area: float
    total_power: float
    achieved_period: float
    cell_count: int = 0
    requested_period: float | None = None
    log: str = ""

    def __post_init__(self):
        for name in ("area", "total_power", "achieved_period", "cell_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def timing_met(self) -> bool:
        if self.requested_period is None:
            return True
        return self.achieved_period <= self.requested_period + 1e-12

    def to_dict(self) -> dict:
        return {"area": self.area, "total_power": self.total_power,
                "achieved_period": self.achieved_period, "cell_count": self.cell_count,
                "requested_period": self.requested_period, "timing_met": self.timing_met}


@dataclass
class Toolchain:
    c: AdapterBinding | None = None
    hls: AdapterBinding | None = None
    sim: AdapterBinding | None = None
    synth: AdapterBinding | None = None

    def require(self, kind) -> AdapterBinding:
        kind = ToolKind(kind)
        b = {ToolKind.CCompiler: self.c, ToolKind.Hls: self.hls, ToolKind.RtlSim: self.sim,
             ToolKind.LogicSynth: self.synth}[kind]
        if b is None:
            raise ToolEnvironmentError(f"no {kind.value} binding configured")
        return b

    @property
    def bindings(self) -> list[AdapterBinding]:
        return [b for b in (self.c, self.hls, self.sim, self.synth) if b is not None]

    @property
    def all_mock(self) -> bool:
        return all(b.is_mock for b in self.bindings)

    @property
    def complete(self) -> bool:
        return len(self.bindings) == 4


# ---------------------------------------------------------------------------
# subprocess plumbing
# ---------------------------------------------------------------------------

def tool_path() -> str:
    extra = os.environ.get(TOOLS_ENV)
    base = os.environ.get("PATH", "")
    return f"{extra}{os.pathsep}{base}" if extra else base


def resolve_tool(prog: str) -> str | None:
    if os.sep in prog:
        return prog if os.access(prog, os.X_OK) else None
    return shutil.which(prog, path=tool_path())


def expand(template: str, values: dict) -> list[str]:
    out = []
    for tok in shlex.split(template):
        m = re.fullmatch(r"\{(\w+)\}", tok)
        if m and m.group(1) in values:
            v = values[m.group(1)]
            out.extend(str(x) for x in v) if isinstance(v, (list, tuple)) else out.append(str(v))
            continue
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = " ".join(str(x) for x in v)
            tok = tok.replace("{" + k + "}", str(v))
        out.append(tok)
    return out


def run_tool(argv: list[str], cwd, timeout: float, stdin: bytes | None = None):
    env = dict(os.environ)
    env["PATH"] = tool_path()
    with _TOOL_SLOTS:
        return subprocess.run(argv, cwd=cwd, env=env, capture_output=True, timeout=timeout,
                              input=stdin)


def _decode(b: bytes) -> str:
    return b.decode("utf-8", errors="replace")


def _require_kind(binding: AdapterBinding, kind: ToolKind):
    if binding.kind != kind:
        raise PreconditionError(f"expected a {kind.value} binding, got {binding.kind.value}")


# ---------------------------------------------------------------------------
# C compiler / executor
# ---------------------------------------------------------------------------

def run_c_compile_and_exec(sources, testbench: str, binding: AdapterBinding):
    """Build ``sources`` with ``testbench`` and run the binary; returns (CompileResult, stdout)."""
    _require_kind(binding, ToolKind.CCompiler)
    sources = list(sources)
    key = c_key(sources, testbench)
    if binding.is_mock:
        base = binding.fixture_dir / "c"
        if (base / f"{key}.stdout").exists():
            return CompileResult("Pass"), (base / f"{key}.stdout").read_bytes()
        if (base / f"{key}.fail").exists():
            return CompileResult("Fail", (base / f"{key}.fail").read_text()), b""
        raise MockMissError(key, str(base))

    binding.check_available("build")
    with tempfile.TemporaryDirectory(prefix="hdlagent-c-") as tmp:
        tmp = Path(tmp)
        paths = []
        for i, src in enumerate(sources):
            p = tmp / f"unit{i}.c"
            p.write_text(src, encoding="utf-8")
            paths.append(p.name)
        (tmp / "testbench.c").write_text(testbench, encoding="utf-8")
        out = tmp / "prog"
        logs = []
        for tmpl in binding.command("build"):
            argv = expand(tmpl, {"design": paths, "testbench": "testbench.c", "out": out.name})
            try:
                proc = run_tool(argv, tmp, binding.timeout)
            except subprocess.TimeoutExpired:
                return CompileResult("Fail", f"compiler timed out after {binding.timeout}s"), b""
            logs.append(_decode(proc.stdout) + _decode(proc.stderr))
            if proc.returncode != 0:
                return CompileResult("Fail", "".join(logs)), b""
        try:
            proc = run_tool([str(out)], tmp, binding.timeout)
        except subprocess.TimeoutExpired:
            raise ExecutionError(f"program exceeded {binding.timeout}s") from None
        if proc.returncode != 0:
            raise ExecutionError(f"program exited with code {proc.returncode}",
                                 exit_code=proc.returncode, log=_decode(proc.stderr))
        return CompileResult("Pass", "".join(logs)), proc.stdout


def check_c_syntax(sources, binding: AdapterBinding) -> CompileResult:
    """Compile-only check. Mock bindings pass unless ``c/<key>.syntax.log`` exists."""
    _require_kind(binding, ToolKind.CCompiler)
    sources = list(sources)
    if binding.is_mock:
        p = binding.fixture_dir / "c" / f"{c_key(sources, '')}.syntax.log"
        return CompileResult("Fail", p.read_text()) if p.exists() else CompileResult("Pass")
    binding.check_available("syntax")
    with tempfile.TemporaryDirectory(prefix="hdlagent-c-") as tmp:
        paths = []
        for i, src in enumerate(sources):
            p = Path(tmp) / f"unit{i}.c"
            p.write_text(src, encoding="utf-8")
            paths.append(p.name)
        for tmpl in binding.command("syntax"):
            proc = run_tool(expand(tmpl, {"design": paths, "out": "a.out"}), tmp, binding.timeout)
            if proc.returncode != 0:
                return CompileResult("Fail", _decode(proc.stdout) + _decode(proc.stderr))
    return CompileResult("Pass")


# ---------------------------------------------------------------------------
# HLS
# ---------------------------------------------------------------------------

def run_hls_synthesize(submodule_id: str, c_source: str, entry_function: str,
                       binding: AdapterBinding, out_dir, c_testbench: str = "") -> HlsResult:
    """Golden HDL plus the tool-translated testbench, written into ``out_dir``."""
    _require_kind(binding, ToolKind.Hls)
    out_dir = Path(out_dir)
    if binding.is_mock:
        src = binding.fixture_dir / "hls" / submodule_id
        if (src / "FAIL").exists():
            log_text = (src / "hls.log").read_text() if (src / "hls.log").exists() else "HLS failed"
            raise SynthesisError(f"HLS failed for {submodule_id}", log=log_text)
        if not (src / "golden.v").exists():
            raise MockMissError(submodule_id, str(src.parent))
        out_dir.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src / "golden.v", out_dir / "golden.v")
        if (out_dir / "tb").exists():
            shutil.rmtree(out_dir / "tb")
        shutil.copytree(src / "tb", out_dir / "tb")
        for extra in ("cases", "probes.trace", "hls.log"):
            if (src / extra).exists():
                shutil.copyfile(src / extra, out_dir / extra)
        return _hls_result(out_dir, (src / "hls.log").read_text()
                           if (src / "hls.log").exists() else "")

    binding.check_available("synthesize")
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="hdlagent-hls-") as tmp:
        tmp = Path(tmp)
        (tmp / f"{submodule_id}.c").write_text(c_source, encoding="utf-8")
        (tmp / "testbench.c").write_text(c_testbench, encoding="utf-8")
        logs = []
        for tmpl in binding.command("synthesize"):
            argv = expand(tmpl, {"design": f"{submodule_id}.c", "testbench": "testbench.c",
                                 "out": str(out_dir.resolve()), "top": entry_function})
            try:
                proc = run_tool(argv, tmp, binding.timeout)
            except subprocess.TimeoutExpired:
                raise SynthesisError(f"HLS exceeded {binding.timeout}s", log="".join(logs)) from None
            logs.append(_decode(proc.stdout) + _decode(proc.stderr))
            if proc.returncode != 0:
                raise SynthesisError(f"HLS failed for {submodule_id} (exit {proc.returncode})",
                                     log="".join(logs))
    if not (out_dir / "golden.v").exists() or not (out_dir / "tb" / "tb.v").exists():
        raise SynthesisError(f"HLS for {submodule_id} did not produce golden.v and tb/tb.v",
                             log="".join(logs))
    return _hls_result(out_dir, "".join(logs))


def _hls_result(out_dir: Path, log_text: str) -> HlsResult:
    return HlsResult(out_dir / "golden.v", out_dir / "tb" / "tb.v", log_text,
                     out_dir / "cases" if (out_dir / "cases").exists() else None,
                     out_dir / "probes.trace" if (out_dir / "probes.trace").exists() else None)


# ---------------------------------------------------------------------------
# RTL compile / simulation
# ---------------------------------------------------------------------------

def run_hdl_compile(design, binding: AdapterBinding) -> CompileResult:
    """Syntax/elaboration check of an HDL file through the simulator's front end."""
    _require_kind(binding, ToolKind.RtlSim)
    design = Path(design)
    if not design.exists():
        raise PreconditionError(f"design {design} does not exist")
    if binding.is_mock:
        key = file_key(design)
        base = binding.fixture_dir / "hdl"
        if (base / f"{key}.ok").exists():
            return CompileResult("Pass")
        if (base / f"{key}.log").exists():
            return CompileResult("Fail", (base / f"{key}.log").read_text())
        raise MockMissError(key, str(base))
    binding.check_available("compile")
    with tempfile.TemporaryDirectory(prefix="hdlagent-hdl-") as tmp:
        logs = []
        for tmpl in binding.command("compile"):
            argv = expand(tmpl, {"design": str(design.resolve()), "out": "compiled.out"})
            try:
                proc = run_tool(argv, tmp, binding.timeout)
            except subprocess.TimeoutExpired:
                return CompileResult("Fail", f"compile timed out after {binding.timeout}s")
            logs.append(_decode(proc.stdout) + _decode(proc.stderr))
            if proc.returncode != 0:
                return CompileResult("Fail", "".join(logs))
    return CompileResult("Pass", "".join(logs))


def run_rtl_sim(design, testbench, binding: AdapterBinding, dump_out=None):
    """Simulate ``design`` under ``testbench``; returns (SimStatus, raw dump path)."""
    _require_kind(binding, ToolKind.RtlSim)
    design, testbench = Path(design), Path(testbench)
    for p in (design, testbench):
        if not p.exists():
            raise PreconditionError(f"{p} does not exist")
    t0 = time.perf_counter()
    if binding.is_mock:
        key = f"{file_key(design)}-{file_key(testbench)}"
        src = binding.fixture_dir / "sim" / f"{key}.dump"
        if not src.exists():
            raise MockMissError(key, str(src.parent))
        dump_out = Path(dump_out) if dump_out else Path(tempfile.mkdtemp()) / "dump.txt"
        dump_out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dump_out)
        return SimStatus(True, f"mock replay {key}", time.perf_counter() - t0), dump_out

    binding.check_available("simulate")
    with tempfile.TemporaryDirectory(prefix="hdlagent-sim-") as tmp:
        tmp = Path(tmp)
        dump_out = Path(dump_out) if dump_out else Path(tempfile.mkdtemp()) / "dump.txt"
        dump_out.parent.mkdir(parents=True, exist_ok=True)
        logs = []
        deadline = t0 + binding.timeout
        for tmpl in binding.command("simulate"):
            argv = expand(tmpl, {"design": str(design.resolve()),
                                 "testbench": str(testbench.resolve()),
                                 "out": binding.dump_file})
            remaining = deadline - time.perf_counter()
            try:
                proc = run_tool(argv, tmp, max(remaining, 0.001))
            except subprocess.TimeoutExpired:
                partial = None
                if (tmp / binding.dump_file).exists():
                    partial = dump_out.with_name(dump_out.name + ".partial")
                    shutil.copyfile(tmp / binding.dump_file, partial)
                raise SimTimeoutError(f"simulation exceeded {binding.timeout}s",
                                      partial_dump=partial, log="".join(logs)) from None
            logs.append(_decode(proc.stdout) + _decode(proc.stderr))
            if proc.returncode != 0:
                raise SimError(f"simulation failed (exit {proc.returncode})", log="".join(logs))
        if not (tmp / binding.dump_file).exists():
            raise SimError(f"simulator produced no {binding.dump_file}", log="".join(logs))
        shutil.copyfile(tmp / binding.dump_file, dump_out)
    return SimStatus(True, "".join(logs), time.perf_counter() - t0), dump_out


# ---------------------------------------------------------------------------
# logic synthesis
# ---------------------------------------------------------------------------

_REPORT_KEYS = {
    "area": ("area", float), "chip_area": ("area", float),
    "total_power": ("total_power", float), "power": ("total_power", float),
    "achieved_period": ("achieved_period", float), "period": ("achieved_period", float),
    "cell_count": ("cell_count", int), "cells": ("cell_count", int),
}
_REPORT_LINE = re.compile(r"([A-Za-z_ ]+?)\s*[:=]\s*([-+0-9.eE]+)\s*([A-Za-zµ/²^0-9]*)\s*$")


def parse_synth_report(text: str, requested_period: float | None = None) -> SynthReport:
    """Parse a ``key: value [unit]`` synthesis summary (area um^2, power mW, period ns)."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        m = _REPORT_LINE.fullmatch(s)
        key = m.group(1).strip().lower().replace(" ", "_") if m else None
        if not m or key not in _REPORT_KEYS:
            raise SynthesisError(f"unparsable synthesis report at line {n}: {s!r}", log=text)
        field_name, conv = _REPORT_KEYS[key]
        try:
            values[field_name] = conv(float(m.group(2)))
        except ValueError:
            raise SynthesisError(f"bad number at line {n}: {s!r}", log=text) from None
    missing = [k for k in ("area", "total_power", "achieved_period") if k not in values]
    if missing:
        raise SynthesisError(f"synthesis report lacks {', '.join(missing)}", log=text)
    rep = SynthReport(values["area"], values["total_power"], values["achieved_period"],
                      values.get("cell_count", 0), requested_period)
    if not rep.timing_met:
        rep.log = (f"timing-miss: requested {requested_period} ns, "
                   f"achieved {rep.achieved_period} ns")
        log.warning(rep.log)
    return rep


def run_logic_synth(design, clock_period: float, binding: AdapterBinding,
                    top: str | None = None) -> SynthReport:
    _require_kind(binding, ToolKind.LogicSynth)
    design = Path(design)
    if not design.exists():
        raise PreconditionError(f"design {design} does not exist")
    if binding.is_mock:
        key = file_key(design)
        base = binding.fixture_dir / "synth"
        for cand in (base / f"{key}.rpt", base / "default.rpt"):
            if cand.exists():
                return parse_synth_report(cand.read_text(), clock_period)
        raise MockMissError(key, str(base))
    binding.check_available("synth")
    with tempfile.TemporaryDirectory(prefix="hdlagent-syn-") as tmp:
        out = Path(tmp) / "report.txt"
        logs = []
        for tmpl in binding.command("synth"):
            argv = expand(tmpl, {"design": str(design.resolve()), "out": str(out),
                                 "period": clock_period, "top": top or ""})
            try:
                proc = run_tool(argv, tmp, binding.timeout)
            except subprocess.TimeoutExpired:
                raise SynthesisError(f"synthesis exceeded {binding.timeout}s") from None
            logs.append(_decode(proc.stdout))
            if proc.returncode != 0:
                raise SynthesisError(f"synthesis failed (exit {proc.returncode})",
                                     log="".join(logs) + _decode(proc.stderr))
        text = out.read_text() if out.exists() else "".join(logs)
    return parse_synth_report(text, clock_period)
