"""Differential verification: DUT trace vs golden trace, mismatch logs, repair loop.

Mismatch log wire format, one record per line::

    SUMMARY <failing>/<total>
    STIM <sample_index> <rendered input vector>      (optional, before its first CASE)
    CASE <id> PORT <name> IDX <k> ACTUAL <hex> EXPECTED <hex>
    SLICE <instance.port> SUSPECTS <id,id,...>       (top level only)
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import (CoverageError, ExtractionError, InterfaceError, PreconditionError,
                     ProviderError, TraceParseError)
from .gateway import extract_fenced_code, render_template
from .prompts import FUNCTIONAL_REPAIR, REASONING_STAGES
from .toolchain import PortTrace, normalize_dump, run_rtl_sim, serialize_trace
from .workspace import NullArchive, atomic_write

log = logging.getLogger(__name__)

TAGS = ("scaling", "reset_or_lag", "state_retention", "constant_offset", "unknown")


@dataclass(frozen=True)
class MismatchEntry:
    test_case_id: int
    stimulus: str
    port_name: str
    actual_hex: str
    expected_hex: str
    sample_index: int

    def __post_init__(self):
        if self.actual_hex == self.expected_hex:
            raise ValueError("a mismatch entry needs differing values")

    def line(self) -> str:
        return (f"CASE {self.test_case_id} PORT {self.port_name} IDX {self.sample_index} "
                f"ACTUAL {self.actual_hex} EXPECTED {self.expected_hex}")


@dataclass(frozen=True)
class SliceNote:
    seed: str
    suspects: tuple

    def line(self) -> str:
        return f"SLICE {self.seed} SUSPECTS {','.join(self.suspects)}"


@dataclass
class MismatchLog:
    unit: str
    entries: list = field(default_factory=list)
    total_cases: int = 0
    slices: list = field(default_factory=list)
    total_samples: int | None = None

    def __post_init__(self):
        if self.failing_cases > self.total_cases:
            raise ValueError(f"{self.failing_cases} failing cases exceed total {self.total_cases}")

    @property
    def failing_cases(self) -> int:
        return len({e.test_case_id for e in self.entries})

    @property
    def failing_case_ids(self) -> list[int]:
        return sorted({e.test_case_id for e in self.entries})

    @property
    def passed(self) -> bool:
        return not self.entries

    def ports(self) -> set:
        return {e.port_name for e in self.entries}

    def serialize(self) -> str:
        lines = [f"SUMMARY {self.failing_cases}/{self.total_cases}"]
        stim_done = set()
        for e in self.entries:
            if e.stimulus and e.sample_index not in stim_done:
                lines.append(f"STIM {e.sample_index} {_one_line(e.stimulus)}")
                stim_done.add(e.sample_index)
            lines.append(e.line())
        lines += [s.line() for s in self.slices]
        return "".join(x + "\n" for x in lines)

    @classmethod
    def parse(cls, text: str, unit: str = "") -> "MismatchLog":
        entries, slices, stim = [], [], {}
        total = failing = None
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            head = line.split(" ", 1)[0]
            if head == "SUMMARY":
                m = re.fullmatch(r"SUMMARY (\d+)/(\d+)", line)
                if not m or total is not None:
                    raise TraceParseError(f"bad SUMMARY line {line!r}", n)
                failing, total = int(m.group(1)), int(m.group(2))
            elif head == "STIM":
                m = re.fullmatch(r"STIM (\d+) (.*)", line)
                if not m:
                    raise TraceParseError(f"bad STIM line {line!r}", n)
                stim[int(m.group(1))] = m.group(2)
            elif head == "CASE":
                m = re.fullmatch(r"CASE (\d+) PORT (\S+) IDX (\d+) ACTUAL ([0-9a-f]+) "
                                 r"EXPECTED ([0-9a-f]+)", line)
                if not m:
                    raise TraceParseError(f"bad CASE line {line!r}", n)
                k = int(m.group(3))
                entries.append(MismatchEntry(int(m.group(1)), stim.get(k, ""), m.group(2),
                                             m.group(4), m.group(5), k))
            elif head == "SLICE":
                m = re.fullmatch(r"SLICE (\S+) SUSPECTS (\S*)", line)
                if not m:
                    raise TraceParseError(f"bad SLICE line {line!r}", n)
                slices.append(SliceNote(m.group(1), tuple(x for x in m.group(2).split(",") if x)))
            else:
                raise TraceParseError(f"unknown record {head!r}", n)
        if total is None:
            raise TraceParseError("missing SUMMARY line")
        out = cls(unit, entries, total, slices)
        if out.failing_cases != failing:
            raise TraceParseError(f"SUMMARY says {failing} failing cases, entries show "
                                  f"{out.failing_cases}")
        return out


def _one_line(text: str) -> str:
    return " ".join(text.split())


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------

def default_case_map(index: int) -> int:
    return index + 1


def load_cases(path) -> tuple[dict, dict]:
    """``<sample_index> <case_id> <stimulus...>`` lines -> (case map, stimuli)."""
    case_map, stimuli = {}, {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        toks = line.split(None, 2)
        if len(toks) < 2 or not toks[0].isdigit() or not toks[1].isdigit():
            raise TraceParseError(f"bad cases line {line!r}", n)
        case_map[int(toks[0])] = int(toks[1])
        stimuli[int(toks[0])] = toks[2].strip() if len(toks) > 2 else ""
    return case_map, stimuli


def _lookup(case_map, idx):
    if case_map is None:
        return default_case_map(idx)
    if callable(case_map):
        return case_map(idx)
    return case_map.get(idx)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def header_differences(dut: PortTrace, golden: PortTrace) -> list[str]:
    out = []
    dw, gw = dut.widths, golden.widths
    for p in sorted(set(gw) - set(dw)):
        out.append(f"port {p} missing from DUT trace")
    for p in sorted(set(dw) - set(gw)):
        out.append(f"port {p} missing from golden trace")
    for p in sorted(set(dw) & set(gw)):
        if dw[p] != gw[p]:
            out.append(f"port {p} width {dw[p]} (DUT) vs {gw[p]} (golden)")
    return out


def compare_traces(dut: PortTrace, golden: PortTrace, case_map=None, stimuli=None,
                   unit: str = "") -> MismatchLog:
    """Transaction-aligned, bit-exact comparison of two canonical traces."""
    diffs = header_differences(dut, golden)
    if diffs:
        raise InterfaceError(diffs)
    dt, gt = dut.table(), golden.table()
    only_d = sorted({k for k in dt if k not in gt})
    only_g = sorted({k for k in gt if k not in dt})
    if only_d or only_g:
        miss_d = sorted({i for i, _ in only_g})
        miss_g = sorted({i for i, _ in only_d})
        parts = []
        if miss_d:
            parts.append(f"DUT lacks {len(miss_d)} sample index(es) {_fmt(miss_d)}")
        if miss_g:
            parts.append(f"golden lacks {len(miss_g)} sample index(es) {_fmt(miss_g)}")
        raise CoverageError("; ".join(parts), miss_d + miss_g)
    indices = sorted({i for i, _ in gt})
    cases = {}
    unmapped = []
    for i in indices:
        c = _lookup(case_map, i)
        if c is None:
            unmapped.append(i)
        cases[i] = c
    if unmapped:
        raise CoverageError(f"case map does not cover sample index(es) {_fmt(unmapped)}",
                            unmapped)
    stimuli = stimuli or {}
    order = {p: n for n, p in enumerate(golden.ports)}
    entries = []
    for (i, p) in sorted(gt, key=lambda k: (k[0], order[k[1]])):
        if dt[(i, p)] != gt[(i, p)]:
            entries.append(MismatchEntry(cases[i], stimuli.get(i, ""), p, dt[(i, p)],
                                         gt[(i, p)], i))
    return MismatchLog(unit, entries, len(set(cases.values())), total_samples=len(gt))


def _fmt(xs) -> str:
    xs = list(xs)
    return ", ".join(map(str, xs[:8])) + (" ..." if len(xs) > 8 else "")


def merge_logs(unit: str, *logs: MismatchLog) -> MismatchLog:
    entries = sorted((e for lg in logs for e in lg.entries),
                     key=lambda e: (e.sample_index, e.port_name))
    total = max((lg.total_cases for lg in logs), default=0)
    samples = sum(lg.total_samples or 0 for lg in logs)
    return MismatchLog(unit, entries, total, [s for lg in logs for s in lg.slices], samples)


# ---------------------------------------------------------------------------
# repair bundle and discrepancy hints
# ---------------------------------------------------------------------------

@dataclass
class RepairPromptBundle:
    dut_code: str
    c_reference: str
    mismatch_log: MismatchLog
    shown: list
    summary: str
    reasoning_stages: tuple = tuple(name for name, _ in REASONING_STAGES)
    hints: tuple = ()
    localization: str = ""

    def bindings(self, unit: str, iteration: int) -> dict:
        entries = "\n".join(
            (f"- case {e.test_case_id}, output #{e.sample_index}, port {e.port_name}: "
             f"DUT {e.actual_hex}, expected {e.expected_hex}"
             + (f" (stimulus: {e.stimulus})" if e.stimulus else "")) for e in self.shown)
        hints = ""
        if self.hints:
            hints = "## Discrepancy hints (advisory)\n" + ", ".join(self.hints) + "\n"
        loc = f"## Fault localization\n{self.localization}\n" if self.localization else ""
        stages = "\n".join(f"{n}. {text}" for n, (_, text) in enumerate(REASONING_STAGES, 1))
        return {"unit": unit, "iteration": iteration, "c_reference": self.c_reference.rstrip(),
                "dut_code": self.dut_code.rstrip("\n"), "summary": self.summary,
                "entries": entries, "hints": hints, "localization": loc, "stages": stages}


def build_repair_bundle(dut_code: str, c_reference: str, mlog: MismatchLog,
                        max_entries: int = 10, hints=(), localization: str = ""):
    if mlog.passed:
        raise PreconditionError("cannot build a repair bundle from an empty mismatch log")
    ordered = sorted(mlog.entries, key=lambda e: (e.test_case_id, e.sample_index))
    shown = ordered[:max_entries]
    n = len(mlog.entries)
    of = f" of {mlog.total_samples}" if mlog.total_samples else ""
    summary = (f"{mlog.failing_cases} of {mlog.total_cases} test cases failing; "
               f"{n}{of} compared outputs mismatch, first {len(shown)} shown.")
    return RepairPromptBundle(dut_code, c_reference, mlog, shown, summary, hints=tuple(hints),
                              localization=localization)


def _values(e: MismatchEntry):
    return int(e.actual_hex, 16), int(e.expected_hex, 16), len(e.expected_hex) * 4


def _is_scaling(entries) -> bool:
    if len(entries) < 2:
        return False
    vals = [_values(e) for e in entries]
    width = max(w for _, _, w in vals)
    for s in range(1, width):
        if all(a == x >> s for a, x, _ in vals) or \
                all(a == (x << s) & ((1 << w) - 1) for a, x, w in vals):
            return True
    if any(x == 0 for _, x, _ in vals):
        return False
    ratios = {Fraction(a, x) for a, x, _ in vals}
    return len(ratios) == 1 and ratios != {Fraction(1)}


def _is_offset(entries) -> bool:
    if len(entries) < 2:
        return False
    diffs = {a - x for a, x, _ in map(_values, entries)}
    if len(diffs) == 1:
        return True
    mods = {(a - x) % (1 << w) for a, x, w in map(_values, entries)}
    return len(mods) == 1


def _is_lag(mlog: MismatchLog, golden: PortTrace | None) -> bool:
    expected = {(e.sample_index, e.port_name): e.expected_hex for e in mlog.entries}
    if golden is not None:
        expected.update(golden.table())
    checked = 0
    for e in mlog.entries:
        if e.sample_index == 0:
            continue
        prev = expected.get((e.sample_index - 1, e.port_name))
        if prev is None:
            # previous transaction matched, so DUT == golden there: not a lag unless equal
            return False
        if int(prev, 16) != int(e.actual_hex, 16):
            return False
        checked += 1
    return checked > 0


def classify_discrepancy(mlog: MismatchLog, golden: PortTrace | None = None) -> set:
    """Advisory tags after the typical LLM discrepancy classes; never affects the verdict."""
    if mlog.passed:
        raise PreconditionError("nothing to classify in an empty mismatch log")
    tags = set()
    by_port: dict = {}
    for e in mlog.entries:
        by_port.setdefault(e.port_name, []).append(e)
    if all(_is_scaling(v) for v in by_port.values()):
        tags.add("scaling")
    if all(_is_offset(v) for v in by_port.values()):
        tags.add("constant_offset")
    if _is_lag(mlog, golden):
        tags.add("reset_or_lag")
    ids = mlog.failing_case_ids
    if mlog.total_cases > 1 and 1 not in ids and ids:
        tags.add("state_retention")
    return tags or {"unknown"}


# ---------------------------------------------------------------------------
# repair loop
# ---------------------------------------------------------------------------

@dataclass
class LoopVerdict:
    status: str                   # Pass | Exhausted
    code: str
    repairs: int                  # gateway repair prompts issued
    simulations: int
    last_log: MismatchLog | None = None
    logs: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "Pass"


def differential_loop(unit: str, code: str, *, simulate_dut, golden_trace, compare, gateway,
                      limit: int, c_reference: str, archive=None, check_syntax=None,
                      localize=None, max_entries: int = 10) -> LoopVerdict:
    """Simulate, compare, prompt, repeat. At most ``limit`` repair prompts.

    ``simulate_dut(code, iteration) -> PortTrace``; ``golden_trace`` is a
    PortTrace or a zero-argument callable run concurrently with the first DUT
    simulation; ``compare(dut, golden) -> MismatchLog``;
    ``check_syntax(code, iteration) -> code | None`` (None consumes the
    iteration); ``localize(log, dut_trace) -> (text, [SliceNote])``.
    """
    archive = archive or NullArchive()
    logs = []
    repairs = 0
    sims = 0
    last_trace = None
    last_code = None
    golden = golden_trace
    for it in range(limit + 1):
        if code != last_code:
            if callable(golden):
                with ThreadPoolExecutor(max_workers=2) as pool:
                    fg = pool.submit(golden)
                    fd = pool.submit(simulate_dut, code, it)
                    golden, last_trace = fg.result(), fd.result()
                archive.put("golden.trace", serialize_trace(golden))
            else:
                last_trace = simulate_dut(code, it)
            sims += 1
            last_code = code
            archive.put(f"iter{it}.dut.trace", serialize_trace(last_trace))
        mlog = compare(last_trace, golden)
        mlog.unit = unit
        hints, loc = (), ""
        if not mlog.passed:
            if localize is not None:
                loc, notes = localize(mlog, last_trace)
                mlog.slices = list(notes)
            hints = tuple(sorted(classify_discrepancy(mlog, golden)))
        archive.put(f"iter{it}.mismatch.log", mlog.serialize())
        logs.append(mlog)
        if mlog.passed:
            return LoopVerdict("Pass", code, repairs, sims, mlog, logs)
        if repairs == limit:
            break
        bundle = build_repair_bundle(code, c_reference, mlog, max_entries, hints, loc)
        prompt = render_template(FUNCTIONAL_REPAIR, bundle.bindings(unit, repairs + 1))
        repairs += 1
        archive.put(f"iter{it}.bundle.txt", prompt)
        try:
            ex = gateway.complete(prompt)
            archive.put(f"iter{it}.response.txt", ex.response)
            new_code = extract_fenced_code(ex.response, "verilog")
        except (ProviderError, ExtractionError) as exc:
            archive.put(f"iter{it}.error.txt", str(exc))
            log.info("%s repair %d consumed: %s", unit, repairs, exc)
            continue
        if check_syntax is not None:
            fixed = check_syntax(new_code, it)
            if fixed is None:
                archive.put(f"iter{it}.error.txt", "syntax regression not repaired")
                continue
            new_code = fixed
        archive.put(f"iter{it}.v", new_code)
        code = new_code
    return LoopVerdict("Exhausted", code, repairs, sims, logs[-1], logs)


@dataclass
class GoldenRef:
    design: Path
    testbench: Path
    cases: Path | None = None
    probes: Path | None = None

    @classmethod
    def from_hls(cls, res) -> "GoldenRef":
        return cls(res.golden_hdl, res.golden_testbench, res.cases, res.probes)


def simulate_to_trace(design, testbench, binding, dump_out) -> PortTrace:
    _, dump = run_rtl_sim(design, testbench, binding, dump_out)
    kw = {"strobe": binding.strobe} if binding.dialect.value == "ValueChange" else {}
    return normalize_dump(Path(dump).read_bytes(), binding.dialect, **kw)


def functional_repair_loop(unit: str, dut_code: str, golden: GoldenRef, dut_testbench,
                           gateway, sim_binding, limit: int, c_reference: str, workdir,
                           port_map: dict | None = None, archive=None, check_syntax=None,
                           max_entries: int = 10) -> LoopVerdict:
    """Submodule-level loop; golden port names are mapped through ``port_map`` (C -> HDL)."""
    for p in (golden.design, golden.testbench, dut_testbench):
        if not Path(p).exists():
            raise PreconditionError(f"{p} does not exist")
    workdir = Path(workdir)
    case_map, stimuli = load_cases(golden.cases) if golden.cases else (None, {})

    def sim_dut(code, it):
        d = workdir / f"iter{it}"
        atomic_write(d / f"{unit}.v", code.encode())
        return simulate_to_trace(d / f"{unit}.v", dut_testbench, sim_binding, d / "dut.dump")

    def sim_golden():
        tr = simulate_to_trace(golden.design, golden.testbench, sim_binding,
                               workdir / "golden.dump")
        return tr.rename(port_map) if port_map else tr

    def compare(dt, gt):
        return compare_traces(dt, gt, case_map, stimuli, unit)

    return differential_loop(unit, dut_code, simulate_dut=sim_dut, golden_trace=sim_golden,
                             compare=compare, gateway=gateway, limit=limit,
                             c_reference=c_reference, archive=archive,
                             check_syntax=check_syntax, max_entries=max_entries)


def loop_summary(v: LoopVerdict) -> str:
    return json.dumps({"status": v.status, "repairs": v.repairs, "simulations": v.simulations},
                      sort_keys=True)
