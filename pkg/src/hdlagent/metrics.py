"""Pass rates, PPA reductions, HDL line counts and the summary report."""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from . import verilog
from .errors import ComparabilityError, DegenerateInputError, StatsError
from .workspace import TOP, Stage, Status, Workspace, atomic_write

STAGE_COLUMNS = ("decomposition", "syntax", "submodule_functional", "top_functional")
MODE_ORDER = ("direct_nl", "direct_c", "no_decompose", "top_feedback_only", "full")


@dataclass
class PassRateStats:
    label: str
    m: int
    n: int
    rate_percent: float

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "rate_percent": round(self.rate_percent, 9)}

    def cell(self) -> str:
        return f"{self.rate_percent:.1f}% ({self.m}/{self.n})"


def compute_pass_rate(outcomes, label: str = "") -> PassRateStats:
    """m counts Pass only; Fail and Exhausted are failures."""
    outcomes = [Status(o) if not isinstance(o, Status) else o for o in outcomes]
    if not outcomes:
        raise StatsError("pass rate of an empty outcome list is undefined")
    m = sum(1 for o in outcomes if o == Status.Pass)
    n = len(outcomes)
    return PassRateStats(label, m, n, 100.0 * m / n)


@dataclass
class Reduction:
    area_percent: float
    power_percent: float

    def to_dict(self) -> dict:
        return {"area_percent": round(self.area_percent, 9),
                "power_percent": round(self.power_percent, 9)}


def compute_reduction(ours, baseline, ours_period: float | None = None,
                      baseline_period: float | None = None) -> Reduction:
    """100 * (baseline - ours) / baseline for area and power; negative means ours is worse."""
    p1 = ours_period if ours_period is not None else getattr(ours, "requested_period", None)
    p2 = baseline_period if baseline_period is not None else getattr(baseline,
                                                                      "requested_period", None)
    if p1 is not None and p2 is not None and abs(p1 - p2) > 1e-12:
        raise ComparabilityError(f"clock periods differ: {p1} ns vs {p2} ns")
    if baseline.area <= 0 or baseline.total_power <= 0:
        raise DegenerateInputError("baseline area and power must be > 0")
    return Reduction(100.0 * (baseline.area - ours.area) / baseline.area,
                     100.0 * (baseline.total_power - ours.total_power) / baseline.total_power)


@dataclass
class LocStats:
    source: str
    total_lines: int
    code_lines: int


def count_hdl_lines(text: str, source: str = "") -> LocStats:
    """Blank lines and comment-only lines (line or block comments) are not code."""
    lines = text.splitlines()
    stripped = verilog.strip_comments(text).splitlines()
    return LocStats(source, len(lines), sum(1 for ln in stripped if ln.strip()))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _round_outcomes(ws: Workspace, rnd):
    """Stage-level outcome of one round: column -> Status or None (stage not run)."""
    snap = ws.stage_status(rnd)
    out = {c: None for c in STAGE_COLUMNS}
    out["decomposition"] = snap.get(TOP, Stage.Decompose)
    syn = [t.get(Stage.SyntaxRepair) for t in snap.submodules.values()]
    if snap.get(TOP, Stage.SyntaxRepair) is not None:
        syn.append(snap.get(TOP, Stage.SyntaxRepair))
    if snap.submodules and any(s is None for s in syn):
        syn = [s or Status.Fail for s in syn]
    if syn:
        out["syntax"] = Status.Pass if all(s == Status.Pass for s in syn) else Status.Fail
    sub = [t.get(Stage.SubmoduleVerify) for t in snap.submodules.values()]
    if any(s is not None for s in sub):
        out["submodule_functional"] = (Status.Pass if all(s == Status.Pass for s in sub)
                                       else Status.Fail)
    top = snap.get(TOP, Stage.TopVerify)
    if top is not None or snap.top:
        out["top_functional"] = top if top is not None else Status.Fail
    per_sub = [s or Status.Fail for s in sub] if any(s is not None for s in sub) else []
    return out, per_sub


def _evaluation(ws: Workspace, rnd):
    for rec in reversed(ws.run_records(rnd)):
        if rec.stage == Stage.Evaluate and rec.status == Status.Pass:
            refs = [r for r in rec.artifact_refs if Path(r).name.startswith("evaluate.json")]
            if refs:
                return json.loads(ws.read_artifact(refs[-1]))
    return None


def _mean(xs):
    return round(statistics.fmean(xs), 6) if xs else None


def summarize_workspace(ws: Workspace) -> dict:
    modes: dict = {}
    for rnd in ws.rounds():
        modes.setdefault(rnd.mode, []).append(rnd)
    out = {}
    for mode, rounds in modes.items():
        cols = {c: [] for c in STAGE_COLUMNS}
        subs, evals, diags = [], [], []
        for rnd in rounds:
            o, per_sub = _round_outcomes(ws, rnd)
            for c in STAGE_COLUMNS:
                if o[c] is not None:
                    cols[c].append(o[c])
            subs += per_sub
            if o["top_functional"] == Status.Pass and o["submodule_functional"] == Status.Fail:
                diags.append(f"{rnd.tag}: top passes while a submodule failed verification")
            ev = _evaluation(ws, rnd)
            if ev is not None:
                evals.append(ev)
        rates = {c: (compute_pass_rate(v, c).to_dict() if v else None) for c, v in cols.items()}
        rates["submodule_average"] = compute_pass_rate(subs).to_dict() if subs else None
        out[mode] = {"rounds": len(rounds), "pass_rates": rates, "ppa": _ppa(evals),
                     "loc": _loc(evals), "diagnostics": diags}
    return out


def _ppa(evals) -> dict | None:
    agent = [e["agent"] for e in evals if e.get("agent")]
    hls = [e["hls"] for e in evals if e.get("hls")]
    manual = [e["manual"] for e in evals if e.get("manual")]
    if not (agent or hls or manual):
        return None
    red = [e["reduction_vs_hls"] for e in evals if e.get("reduction_vs_hls")]
    res = {}
    for name, reps in (("agent", agent), ("hls", hls), ("manual", manual)):
        res[name] = None if not reps else {
            "area": _mean([r["area"] for r in reps]),
            "total_power": _mean([r["total_power"] for r in reps]),
            "achieved_period": _mean([r["achieved_period"] for r in reps])}
    res["reduction_vs_hls"] = None if not red else {
        "area_percent": _mean([r["area_percent"] for r in red]),
        "power_percent": _mean([r["power_percent"] for r in red])}
    return res


def _loc(evals) -> dict | None:
    locs = [e["loc"] for e in evals if e.get("loc")]
    if not locs:
        return None
    keys = sorted({k for d in locs for k in d})
    return {k: _mean([d[k] for d in locs if d.get(k) is not None]) for k in keys}


def _fmt_rate(d) -> str:
    return "n/a" if not d else f"{d['rate_percent']:.1f}%"


def _fmt_num(x, unit="") -> str:
    return "n/a" if x is None else f"{x:.2f}{unit}"


def render_table(doc: dict) -> str:
    head = ["Benchmark", "NL-prompt", "C-prompt", "NoDecomp top", "TopFB top", "Sub func",
            "Top func", "LOC agent", "LOC HLS", "Area agent", "Area HLS", "Area red.",
            "Power agent", "Power HLS", "Power red."]
    rows = [head]
    for b in doc["benchmarks"]:
        m = b["modes"]

        def rate(mode, col):
            return _fmt_rate(m.get(mode, {}).get("pass_rates", {}).get(col))

        full = m.get("full", {})
        ppa = full.get("ppa") or {}
        loc = full.get("loc") or {}
        ag, hl = ppa.get("agent") or {}, ppa.get("hls") or {}
        red = ppa.get("reduction_vs_hls") or {}
        rows.append([b["name"], rate("direct_nl", "top_functional"),
                     rate("direct_c", "top_functional"),
                     rate("no_decompose", "top_functional"),
                     rate("top_feedback_only", "top_functional"),
                     rate("full", "submodule_average"), rate("full", "top_functional"),
                     _fmt_num(loc.get("agent")), _fmt_num(loc.get("hls")),
                     _fmt_num(ag.get("area")), _fmt_num(hl.get("area")),
                     _fmt_num(red.get("area_percent"), "%"),
                     _fmt_num(ag.get("total_power")), _fmt_num(hl.get("total_power")),
                     _fmt_num(red.get("power_percent"), "%")])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    stage_lines = ["", "Stage pass rates per mode (decomposition / syntax / submodule / top):"]
    for b in doc["benchmarks"]:
        for mode in sorted(b["modes"], key=lambda x: (MODE_ORDER.index(x)
                                                      if x in MODE_ORDER else 99, x)):
            pr = b["modes"][mode]["pass_rates"]
            cells = " / ".join(_fmt_rate(pr.get(c)) for c in STAGE_COLUMNS)
            stage_lines.append(f"  {b['name']} [{mode}, n={b['modes'][mode]['rounds']}]: {cells}")
            for d in b["modes"][mode]["diagnostics"]:
                stage_lines.append(f"    note: {d}")
    return "\n".join(lines + stage_lines) + "\n"


def build_report(workspaces) -> dict:
    benches = []
    for ws in sorted(workspaces, key=lambda w: w.manifest.project_name):
        benches.append({"name": ws.manifest.project_name, "modes": summarize_workspace(ws)})
    return {"benchmarks": benches}


def emit_report(workspaces, out_dir=None) -> tuple[Path, Path]:
    """Write ``summary`` (JSON) and ``summary.txt``; byte-identical for identical inputs."""
    if isinstance(workspaces, Workspace):
        workspaces = [workspaces]
    workspaces = list(workspaces)
    if not workspaces:
        raise StatsError("no workspace to report on")
    if not any(ws.rounds() for ws in workspaces):
        raise StatsError("no completed round to report on")
    doc = build_report(workspaces)
    out_dir = Path(out_dir) if out_dir else workspaces[0].root / "reports"
    js, txt = out_dir / "summary", out_dir / "summary.txt"
    atomic_write(js, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    atomic_write(txt, render_table(doc).encode())
    return txt, js
