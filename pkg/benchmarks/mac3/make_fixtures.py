"""Rebuild the mac3 benchmark: C sources, scripted model responses and mock tool fixtures.

Reference values come from running the C program under gcc. Traces of the
deliberately faulty designs come from small Python behaviour models of those
designs. Run ``python3 make_fixtures.py [OUT_DIR]``; the default rewrites this
directory in place.
"""
from __future__ import annotations

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

from hdlagent.hdlgen import InterfaceDefinition
from hdlagent.integrator import (assemble_design, build_instance_graph, instrument_boundaries,
                                 instrument_testbench)
from hdlagent.toolchain import c_key, content_key

HERE = Path(__file__).resolve().parent
TOP = "mac3"
SUBS = ("quant_in", "mac_q4", "clip_out")
PER_CASE = 8

XS = [100, -40, 250, 17, -300, 5, 60, -9,
      3000, 8000, -12000, 20000, 21000, -5000, 7000, 15000]
WS = [23, 51, -7, 90, 13, -66, 31, 77,
      900, 1200, 1500, -800, 2000, 100, 3000, 2500]

# ---------------------------------------------------------------------------
# C program and its decomposition
# ---------------------------------------------------------------------------

QUANT_C = """\
#include <stdint.h>

int16_t quant_in(int16_t x) {
    return (int16_t)((x * 3) >> 1);
}
"""

MAC_C = """\
#include <stdint.h>

int32_t mac_q4(int16_t a, int16_t b, int32_t acc) {
    int32_t p = (int32_t)a * (int32_t)b;
    return acc + ((p + 8) >> 4);
}
"""

CLIP_C = """\
#include <stdint.h>

int16_t clip_out(int32_t v) {
    if (v > 32767) return 32767;
    if (v < -32768) return -32768;
    return (int16_t)v;
}
"""

TOP_BODY = """\
int16_t mac3(int16_t x, int16_t w, int32_t acc_in) {
    int16_t q = quant_in(x);
    int32_t m = mac_q4(q, w, acc_in);
    return clip_out(m);
}
"""

PROGRAM = "\n".join([QUANT_C, MAC_C.replace("#include <stdint.h>\n\n", ""),
                     CLIP_C.replace("#include <stdint.h>\n\n", ""), TOP_BODY])

GLUE = """\
#include <stdint.h>

int16_t quant_in(int16_t x);
int32_t mac_q4(int16_t a, int16_t b, int32_t acc);
int16_t clip_out(int32_t v);

""" + TOP_BODY


def _c_array(name, vals):
    return f"static const int16_t {name}[{len(vals)}] = {{{', '.join(map(str, vals))}}};\n"


TESTBENCH = ("#include <stdio.h>\n#include <stdint.h>\n\n"
             "int16_t mac3(int16_t x, int16_t w, int32_t acc_in);\n\n"
             + _c_array("XS", XS) + _c_array("WS", WS) + f"""
int main(void) {{
    for (int c = 0; c < {len(XS) // PER_CASE}; c++) {{
        int32_t acc = 0;
        for (int k = 0; k < {PER_CASE}; k++) {{
            int i = c * {PER_CASE} + k;
            int16_t y = mac3(XS[i], WS[i], acc);
            printf("case %d vec %d y=%d\\n", c + 1, i, y);
            acc = y;
        }}
    }}
    return 0;
}}
""")

PROBE_HARNESS = ("#include <stdio.h>\n#include <stdint.h>\n\n"
                 "int16_t quant_in(int16_t x);\n"
                 "int32_t mac_q4(int16_t a, int16_t b, int32_t acc);\n"
                 "int16_t clip_out(int32_t v);\n"
                 "int16_t mac3(int16_t x, int16_t w, int32_t acc_in);\n\n"
                 + _c_array("XS", XS) + _c_array("WS", WS) + f"""
int main(void) {{
    for (int c = 0; c < {len(XS) // PER_CASE}; c++) {{
        int32_t acc = 0;
        for (int k = 0; k < {PER_CASE}; k++) {{
            int i = c * {PER_CASE} + k;
            int16_t q = quant_in(XS[i]);
            int32_t m = mac_q4(q, WS[i], acc);
            int16_t y = clip_out(m);
            if (y != mac3(XS[i], WS[i], acc)) return 3;
            printf("%d %d %d %d %d %d\\n", XS[i], WS[i], acc, q, m, y);
            acc = y;
        }}
    }}
    return 0;
}}
""")

NL_DESCRIPTION = """\
mac3 scales a 16-bit signed sample x by 1.5 (arithmetic shift, truncating), multiplies it
by the 16-bit signed weight w, rounds the product from Q4 to integer (add 8, shift right
by 4), adds the 32-bit accumulator acc_in and saturates the sum to the signed 16-bit range.
The result is returned on ap_return.
"""

CONTRACTS = {
    "quant_in": ([("x", "in", 16), ("ap_return", "out", 16)], "scale x by 1.5"),
    "mac_q4": ([("a", "in", 16), ("b", "in", 16), ("acc", "in", 32),
                ("ap_return", "out", 32)], "accumulate the Q4-rounded product a*b"),
    "clip_out": ([("v", "in", 32), ("ap_return", "out", 16)],
                 "saturate v to the signed 16-bit range"),
}
HDL_NAMES = {"quant_in": {"x": "x", "ap_return": "y"},
             "mac_q4": {"a": "a", "b": "b", "acc": "acc", "ap_return": "p_out"},
             "clip_out": {"v": "v", "ap_return": "y"}}
SOURCES = {"quant_in": QUANT_C, "mac_q4": MAC_C, "clip_out": CLIP_C}
INSTANCES = {"quant_in": "u_quant", "mac_q4": "u_mac", "clip_out": "u_clip"}


def plan_doc() -> dict:
    subs = []
    for i, sid in enumerate(SUBS):
        ports, summary = CONTRACTS[sid]
        subs.append({"id": sid, "entry_function": sid, "call_order_index": i,
                     "c_source": SOURCES[sid],
                     "interface": {"ports": [{"name": n, "direction": d, "width_bits": w}
                                             for n, d, w in ports],
                                   "semantics_summary": summary}})
    return {"submodules": subs, "top_glue": GLUE,
            "dataflow_edges": [["quant_in", "ap_return", "mac_q4", "a"],
                               ["mac_q4", "ap_return", "clip_out", "v"]]}


def iface_of(sid) -> InterfaceDefinition:
    ports, _ = CONTRACTS[sid]
    text = "".join(f"{n} {HDL_NAMES[sid][n]} {d} {w}\n" for n, d, w in ports)
    return InterfaceDefinition.parse(sid, text)


TOP_IFACE = InterfaceDefinition.parse(TOP, "x x in 16\nw w in 16\nacc_in acc_in in 32\n"
                                           "ap_return ap_return out 16\n")

# ---------------------------------------------------------------------------
# Verilog: scripted model answers, HLS goldens, manual reference
# ---------------------------------------------------------------------------

QUANT_V = """\
module quant_in (
    input  [15:0] x,
    output [15:0] y
);
  wire signed [17:0] x3 = $signed(x) * 3;
  assign y = x3[16:1];
endmodule
"""

MAC_V0 = """\
module mac_q4 (
    input         clk,
    input         rst,
    input  [15:0] a,
    input  [15:0] b,
    input  [31:0] acc,
    output [31:0] p_out
);
  reg  [31:0] acc_r;
  wire signed [31:0] prod = $signed(a) * $signed(b);
  assign p_out = acc_r + (prod >>> 4);
  always @(posedge clk) begin
    if (rst) acc_r <= 32'd0;
    else     acc_r <= p_out;
  end
endmodule
"""

MAC_V1 = MAC_V0.replace("(prod >>> 4)", "((prod + 32'sd8) >>> 4)")

MAC_V2 = """\
module mac_q4 (
    input         clk,
    input         rst,
    input  [15:0] a,
    input  [15:0] b,
    input  [31:0] acc,
    output [31:0] p_out
);
  wire signed [31:0] prod = $signed(a) * $signed(b);
  assign p_out = acc + ((prod + 32'sd8) >>> 4);
endmodule
"""

CLIP_V0 = """\
module clip_out (
    input  [31:0] v,
    output [15:0] y
);
  wire signed [31:0] sv = v;
  assign y = (sv > 32'sd32767)  ? 16'h7fff :
             (sv < -32'sd32768) ? 16'h8000 : v[15:0]
endmodule
"""
CLIP_V1 = CLIP_V0.replace("v[15:0]\n", "v[15:0];\n")

CLIP_LOG = ("design.v:7: syntax error\n"
            "design.v:7: error: missing ';' at end of continuous assignment, "
            "unexpected token 'endmodule'\n")

TOP_TEMPLATE = """\
module mac3 (
    input         clk,
    input         rst,
    input  [15:0] x,
    input  [15:0] w,
    input  [31:0] acc_in,
    output [15:0] ap_return
);
  wire [15:0] q;
  wire [31:0] m;
  quant_in u_quant (.x(x), .y(q));
  mac_q4 u_mac (.clk(clk), .rst(rst), .a(q), .b({b}), .acc(acc_in), .p_out(m));
  clip_out u_clip (.v(m), .y(ap_return));
endmodule
"""
TOP_V0 = TOP_TEMPLATE.format(b="q")      # quant output also lands on the weight input
TOP_V1 = TOP_TEMPLATE.format(b="w")

FLAT_BAD = """\
module mac3 (
    input  [15:0] x,
    input  [15:0] w,
    input  [31:0] acc_in,
    output [15:0] ap_return
);
  wire signed [31:0] p = $signed(x) * $signed(w);
  assign ap_return = p[19:4];
endmodule
"""

MANUAL_V = """\
module mac3 (
    input  [15:0] x,
    input  [15:0] w,
    input  [31:0] acc_in,
    output [15:0] ap_return
);
  wire signed [17:0] q3 = $signed(x) * 3;
  wire signed [15:0] q = q3[16:1];
  wire signed [31:0] p = q * $signed(w);
  wire signed [31:0] s = $signed(acc_in) + ((p + 32'sd8) >>> 4);
  assign ap_return = (s > 32'sd32767) ? 16'h7fff : (s < -32'sd32768) ? 16'h8000 : s[15:0];
endmodule
"""


def hls_golden(name: str, ports) -> str:
    """Stand-in for HLS output: a handshake wrapper around the C-named ports."""
    decl = ",\n".join(f"    {'input ' if d == 'in' else 'output'} [{w - 1}:0] {n}"
                      for n, d, w in ports)
    return (f"// HLS-generated RTL for {name}\nmodule {name} (\n    input ap_clk,\n"
            f"    input ap_rst,\n    input ap_start,\n    output reg ap_done,\n{decl}\n);\n"
            "  always @(posedge ap_clk) ap_done <= ap_start & ~ap_rst;\nendmodule\n")


def trace_tb(module: str, inputs, outputs, rows, extra_ports=()) -> str:
    """Testbench that applies ``rows`` of input values and records every output."""
    lines = ["`timescale 1ns/1ps", "module tb;", "  reg clk = 0;", "  reg rst = 1;",
             "  integer trace_fd;", "  integer trace_idx;"]
    lines += [f"  reg  [{w - 1}:0] {n};" for n, w in inputs]
    lines += [f"  wire [{w - 1}:0] {n};" for n, w in outputs]
    conns = [f".{p}({p})" for p in extra_ports] + [f".{n}({n})" for n, _ in inputs + outputs]
    lines.append(f"  {module} dut ({', '.join(conns)});")
    lines += ["  always #5 clk = ~clk;", "  initial begin",
              '    trace_fd = $fopen("trace.txt", "w");', "    trace_idx = 0;"]
    lines += [f'    $fwrite(trace_fd, "#port {n} {w}\\n"); // @trace-header'
              for n, w in outputs]
    lines += ["    @(negedge clk) rst = 0;"]
    for row in rows:
        sets = " ".join(f"{n} = {w}'h{v & ((1 << w) - 1):0{(w + 3) // 4}x};"
                        for (n, w), v in zip(inputs, row))
        lines.append(f"    {sets} #1;")
        lines += [f'    $fwrite(trace_fd, "%0d {n} %h\\n", trace_idx, {n}); // @trace-sample'
                  for n, _ in outputs]
        lines.append("    trace_idx = trace_idx + 1; @(negedge clk);")
    lines += ["    $fclose(trace_fd);", "    $finish;", "  end", "endmodule"]
    return "\n".join(lines) + "\n"


def top_tb_feedback() -> str:
    """Adapted top testbench: the accumulator input follows the previous output, as in C."""
    lines = ["`timescale 1ns/1ps", "module tb;", "  reg clk = 0;", "  reg rst = 1;",
             "  integer trace_fd;", "  integer trace_idx;", "  integer c, k;",
             "  reg  [15:0] x;", "  reg  [15:0] w;", "  reg  [31:0] acc_in;",
             "  wire [15:0] ap_return;", f"  reg [15:0] xs [0:{len(XS) - 1}];",
             f"  reg [15:0] ws [0:{len(WS) - 1}];",
             "  mac3 dut (.clk(clk), .rst(rst), .x(x), .w(w), .acc_in(acc_in), "
             ".ap_return(ap_return));", "  always #5 clk = ~clk;", "  initial begin"]
    lines += [f"    xs[{i}] = 16'h{v & 0xffff:04x}; ws[{i}] = 16'h{u & 0xffff:04x};"
              for i, (v, u) in enumerate(zip(XS, WS))]
    lines += ['    trace_fd = $fopen("trace.txt", "w");', "    trace_idx = 0;",
              '    $fwrite(trace_fd, "#port ap_return 16\\n"); // @trace-header',
              "    @(negedge clk) rst = 0;",
              f"    for (c = 0; c < {len(XS) // PER_CASE}; c = c + 1) begin",
              "      acc_in = 32'd0;",
              f"      for (k = 0; k < {PER_CASE}; k = k + 1) begin",
              f"        x = xs[c * {PER_CASE} + k]; w = ws[c * {PER_CASE} + k]; #1;",
              '        $fwrite(trace_fd, "%0d ap_return %h\\n", trace_idx, ap_return);'
              " // @trace-sample",
              "        trace_idx = trace_idx + 1;",
              "        acc_in = {{16{ap_return[15]}}, ap_return};",
              "        @(negedge clk);", "      end", "    end",
              "    $fclose(trace_fd);", "    $finish;", "  end", "endmodule"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reference execution (gcc) and behaviour models of the faulty designs
# ---------------------------------------------------------------------------

def run_gcc(sources: list[str], testbench: str) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        names = []
        for i, s in enumerate(sources):
            (tmp / f"unit{i}.c").write_text(s)
            names.append(f"unit{i}.c")
        (tmp / "testbench.c").write_text(testbench)
        subprocess.run(["gcc", "-std=c11", "-O0", "-o", "prog", *names, "testbench.c"],
                       cwd=tmp, check=True, capture_output=True)
        return subprocess.run([str(tmp / "prog")], cwd=tmp, check=True,
                              capture_output=True).stdout


def reference_rows():
    """One dict per testbench call, straight from the compiled C program."""
    out = run_gcc([PROGRAM], PROBE_HARNESS).decode().split("\n")
    keys = ("x", "w", "acc", "q", "m", "y")
    return [dict(zip(keys, map(int, ln.split()))) for ln in out if ln.strip()]


def s16(v):
    v &= 0xffff
    return v - 0x10000 if v & 0x8000 else v


def s32(v):
    v &= 0xffffffff
    return v - 0x100000000 if v & 0x80000000 else v


def quant_model(x):
    return s16((x * 3) >> 1)


def clip_model(v):
    return max(-32768, min(32767, v))


class MacModel:
    """v0: floor rounding and an accumulator register that is never cleared between
    test cases; v1: rounding fixed; v2: stateless, matches the C function."""

    def __init__(self, version):
        self.version, self.acc_r = version, 0

    def __call__(self, a, b, acc):
        p = a * b
        inc = (p >> 4) if self.version == 0 else ((p + 8) >> 4)
        out = s32((acc if self.version == 2 else self.acc_r) + inc)
        self.acc_r = out
        return out


def run_top_model(mac_version, wiring_ok):
    """Per-sample values of every boundary signal under the feedback testbench."""
    mac = MacModel(mac_version)
    rows = []
    for c in range(len(XS) // PER_CASE):
        acc = 0
        for k in range(PER_CASE):
            i = c * PER_CASE + k
            x, w = XS[i], WS[i]
            q = quant_model(x)
            b = w if wiring_ok else q
            m = mac(q, b, acc)
            y = clip_model(m)
            rows.append({"x": x, "w": w, "acc": acc, "q": q, "a": q, "b": b, "m": m, "y": y})
            acc = y
    return rows


def hexv(v, width):
    return f"{v & ((1 << width) - 1):0{(width + 3) // 4}x}"


def dump(ports, rows) -> str:
    """TraceV1 text; ``ports`` is [(trace name, row key, width)]."""
    lines = [f"#port {n} {w}" for n, _, w in ports]
    for i, r in enumerate(rows):
        lines += [f"{i} {n} {hexv(r[k], w)}" for n, k, w in ports]
    return "\n".join(lines) + "\n"


def cases_text(rows, keys) -> str:
    return "".join(f"{i} {i // PER_CASE + 1} " + " ".join(f"{k}={r[k]}" for k in keys) + "\n"
                   for i, r in enumerate(rows))


# ---------------------------------------------------------------------------
# scripted responses
# ---------------------------------------------------------------------------

def fence(tag, body):
    return f"```{tag}\n{body}```\n"


def specs_response(sid, ports):
    names = HDL_NAMES.get(sid, {p: p for p, _, _ in ports})
    text = f"# {sid}\n\n{CONTRACTS[sid][1] if sid in CONTRACTS else 'whole program'}.\n\n"
    text += "".join(f"- `{names[n]}` ({n}): {d}put, {w} bits\n" for n, d, w in ports)
    iface = "".join(f"{n} {names[n]} {d} {w}\n" for n, d, w in ports)
    return fence("markdown", text) + "\n" + fence("interface", iface)


def rec(expect, response, note="", repeat=None):
    r = {"expect_substring": expect, "response_text": response}
    if note:
        r["note"] = note
    if repeat:
        r["repeat"] = repeat
    return r


def verilog_answer(code, reasoning=""):
    return (reasoning + "\n\n" if reasoning else "") + fence("verilog", code)


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

class Fixtures:
    def __init__(self, root: Path):
        self.root = root
        self.fx = root / "fixtures"

    def write(self, rel, text):
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(text.encode() if isinstance(text, str) else text)

    def compiled(self, design: str, log: str | None = None):
        key = content_key(design.encode())
        if log is None:
            self.write(f"fixtures/hdl/{key}.ok", "")
        else:
            self.write(f"fixtures/hdl/{key}.log", log)

    def sim(self, design: str, tb: str, text: str):
        key = f"{content_key(design.encode())}-{content_key(tb.encode())}"
        self.write(f"fixtures/sim/{key}.dump", text)


def build(out: Path) -> None:
    out = Path(out)
    if (out / "fixtures").exists():
        shutil.rmtree(out / "fixtures")
    if (out / "scripts").exists():
        shutil.rmtree(out / "scripts")
    f = Fixtures(out)
    ref = reference_rows()

    # inputs and manifest
    f.write("mac3.c", PROGRAM)
    f.write("tb.c", TESTBENCH)
    f.write("mac3.txt", NL_DESCRIPTION)
    f.write("manual.v", MANUAL_V)
    f.write("project.manifest", (
        "project_name: mac3\nc_source_path: mac3.c\nc_testbench_path: tb.c\n"
        "clock_period: 5.0\niteration_limits:\n  syntax_repair: 3\n  functional_repair: 3\n"
        "  integration_repair: 3\nrepetitions_n: 1\n"
        "submodule_ids: [quant_in, mac_q4, clip_out]\ntop_function: mac3\n"
        "top_return_port: ap_return\nnl_description_path: mac3.txt\n"
        "manual_design_path: manual.v\n"))
    tools = ("tools:\n" + "".join(f"  {k}: {{mode: mock, fixture_dir: fixtures}}\n"
                                  for k in ("c", "hls", "sim", "synth")))
    for name, mode in (("full", "full"), ("top_feedback_only", "top_feedback_only"),
                       ("exhaust", "no_decompose")):
        f.write(f"config.{name}.yaml",
                f"provider:\n  endpoint: mock:scripts/{name}.jsonl\n  model_name: scripted\n"
                f"  max_retries: 0\nmode: {mode}\nauto_approve: true\nparallel: 3\n" + tools)

    # C compiler: original and decomposed program outputs, both from gcc
    srcs = [SOURCES[s] for s in SUBS] + [GLUE]
    f.write(f"fixtures/c/{c_key([PROGRAM], TESTBENCH)}.stdout", run_gcc([PROGRAM], TESTBENCH))
    f.write(f"fixtures/c/{c_key(srcs, TESTBENCH)}.stdout", run_gcc(srcs, TESTBENCH))

    # HLS goldens (C port names) and their simulation dumps
    golden_cols = {"quant_in": (["x"], [("ap_return", "q", 16)]),
                   "mac_q4": (["q", "w", "acc"], [("ap_return", "m", 32)]),
                   "clip_out": (["m"], [("ap_return", "y", 16)])}
    stim_keys = {"quant_in": ("x",), "mac_q4": ("q", "w", "acc"), "clip_out": ("m",)}
    sub_tbs = {}
    for sid in SUBS:
        ports = CONTRACTS[sid][0]
        ins = [(n, w) for n, d, w in ports if d == "in"]
        outs = [(n, w) for n, d, w in ports if d == "out"]
        rows = [[r[k] for k in golden_cols[sid][0]] for r in ref]
        gv = hls_golden(sid, ports)
        gtb = trace_tb(sid, ins, outs, rows, ("ap_clk", "ap_rst"))
        f.write(f"fixtures/hls/{sid}/golden.v", gv)
        f.write(f"fixtures/hls/{sid}/tb/tb.v", gtb)
        f.write(f"fixtures/hls/{sid}/cases", cases_text(ref, stim_keys[sid]))
        f.sim(gv, gtb, dump(golden_cols[sid][1], ref))
        names = HDL_NAMES[sid]
        sub_tbs[sid] = trace_tb(sid, [(names[n], w) for n, w in ins],
                                [(names[n], w) for n, w in outs], rows,
                                ("clk", "rst") if sid == "mac_q4" else ())

    top_ports = [("x", "in", 16), ("w", "in", 16), ("acc_in", "in", 32), ("ap_return", "out", 16)]
    gtop = hls_golden(TOP, top_ports)
    gtop_tb = trace_tb(TOP, [("x", 16), ("w", 16), ("acc_in", 32)], [("ap_return", 16)],
                       [[r["x"], r["w"], r["acc"]] for r in ref], ("ap_clk", "ap_rst"))
    f.write("fixtures/hls/top/golden.v", gtop)
    f.write("fixtures/hls/top/tb/tb.v", gtop_tb)
    f.write("fixtures/hls/top/cases", cases_text(ref, ("x", "w", "acc")))
    f.sim(gtop, gtop_tb, dump([("ap_return", "y", 16)], ref))
    probe_cols = [("quant_in.x", "x", 16), ("quant_in.ap_return", "q", 16),
                  ("mac_q4.a", "q", 16), ("mac_q4.b", "w", 16), ("mac_q4.acc", "acc", 32),
                  ("mac_q4.ap_return", "m", 32), ("clip_out.v", "m", 32),
                  ("clip_out.ap_return", "y", 16)]
    f.write("fixtures/hls/top/probes.trace", dump(probe_cols, ref))

    # synthesis: agent design falls back to default.rpt
    f.write("fixtures/synth/default.rpt",
            "area: 751.7 um^2\ntotal_power: 1.4604 mW\nachieved_period: 4.62 ns\ncells: 212\n")
    f.write(f"fixtures/synth/{content_key(gtop.encode())}.rpt",
            "area: 1000.0 um^2\ntotal_power: 2.0 mW\nachieved_period: 4.95 ns\ncells: 301\n")
    f.write(f"fixtures/synth/{content_key(MANUAL_V.encode())}.rpt",
            "area: 702.4 um^2\ntotal_power: 1.3911 mW\nachieved_period: 4.41 ns\ncells: 188\n")

    # submodule-level HDL compile and simulation fixtures
    f.compiled(QUANT_V)
    f.compiled(CLIP_V0, CLIP_LOG)
    f.compiled(CLIP_V1)
    for v in (MAC_V0, MAC_V1, MAC_V2):
        f.compiled(v)
    f.sim(QUANT_V, sub_tbs["quant_in"], dump([("y", "q", 16)], ref))
    f.sim(CLIP_V1, sub_tbs["clip_out"], dump([("y", "y", 16)], ref))
    for version, code in enumerate((MAC_V0, MAC_V1, MAC_V2)):
        mac = MacModel(version)
        rows = [{"p": mac(r["q"], r["w"], r["acc"])} for r in ref]
        f.sim(code, sub_tbs["mac_q4"], dump([("p_out", "p", 32)], rows))

    # top level
    ifaces = {s: iface_of(s) for s in SUBS}
    top_tb = top_tb_feedback()
    po = [("ap_return", "y", 16)]
    probe_map = {"u_quant.x": "x", "u_quant.y": "q", "u_mac.a": "a", "u_mac.b": "b",
                 "u_mac.acc": "acc", "u_mac.p_out": "m", "u_clip.v": "m", "u_clip.y": "y"}
    final_subs = {"quant_in": QUANT_V, "mac_q4": MAC_V2, "clip_out": CLIP_V1}

    def top_fixture(top_code, subs, mac_version, wiring_ok, editable=False):
        graph, defects = build_instance_graph(top_code, TOP, ifaces, TOP_IFACE, SUBS)
        assert not defects, defects
        inst, probes = instrument_boundaries(top_code, graph, TOP)
        tb = instrument_testbench(top_tb, probes)
        design = assemble_design(inst, subs)
        cols = po + [(p.trace_alias, probe_map[p.trace_alias], p.width) for p in probes]
        f.sim(design, tb, dump(cols, run_top_model(mac_version, wiring_ok)))
        f.compiled(assemble_design(top_code, subs))

    top_fixture(TOP_V0, final_subs, 2, False)
    top_fixture(TOP_V1, final_subs, 2, True)
    # only-top-feedback ablation: submodules enter integration unverified
    raw_subs = {"quant_in": QUANT_V, "mac_q4": MAC_V0, "clip_out": CLIP_V1}
    top_fixture(TOP_V0, raw_subs, 0, False)
    for version, code in enumerate((MAC_V0, MAC_V1, MAC_V2)):
        top_fixture(TOP_V1, dict(raw_subs, mac_q4=code), version, True)

    # flat whole-program design that never matches (loop-bound fixture)
    f.compiled(FLAT_BAD)
    flat_inst, _ = instrument_boundaries(FLAT_BAD, build_instance_graph(
        FLAT_BAD, TOP, {}, TOP_IFACE, ())[0], TOP)
    flat_tb = instrument_testbench(top_tb, [])
    f.sim(assemble_design(flat_inst, {}), flat_tb, dump(po, _flat_feedback()))

    write_scripts(f, sub_tbs, top_tb)


def _flat_feedback():
    """FLAT_BAD ignores acc_in, so its output depends on x and w only."""
    return [{"y": s16((x * w) >> 4)} for x, w in zip(XS, WS)]


def write_scripts(f: Fixtures, sub_tbs, top_tb):
    plan = json.dumps(plan_doc(), indent=2)
    common_head = [rec("[task:decompose] Project: mac3\n",
                       "Three call sites, three submodules.\n\n" + fence("json", plan + "\n"),
                       "decomposition plan")]
    for sid in SUBS:
        common_head.append(rec(f"[task:specs] Submodule: {sid}\n",
                               specs_response(sid, CONTRACTS[sid][0])))
    first_code = {"quant_in": QUANT_V, "mac_q4": MAC_V0, "clip_out": CLIP_V0}
    for sid in SUBS:
        common_head.append(rec(f"[task:hdl] Submodule: {sid}\n", verilog_answer(first_code[sid]),
                               "mac_q4 carries two faults; clip_out lacks a semicolon"
                               if sid != "quant_in" else ""))
    syntax = [rec("[task:syntax-repair] Submodule: clip_out Attempt: 1\n",
                  verilog_answer(CLIP_V1, "Added the missing semicolon."))]

    full = list(common_head)
    for sid in SUBS:
        full.append(rec(f"[task:testbench] Submodule: {sid}\n", fence("verilog", sub_tbs[sid])))
    full += syntax
    full += [
        rec("[task:functional-repair] Unit: mac_q4 Iteration: 1\n",
            verilog_answer(MAC_V1, "Root cause: the Q4 product is truncated; add the rounding "
                                   "constant 8 before the arithmetic shift."),
            "rounding fault"),
        rec("[task:functional-repair] Unit: mac_q4 Iteration: 2\n",
            verilog_answer(MAC_V2, "Root cause: acc_r keeps the previous case's sum; use the "
                                   "acc input instead of internal state."),
            "state-retention fault"),
        rec("[task:top] Project: mac3\n", verilog_answer(TOP_V0), "misconnected weight input"),
        rec("[task:testbench] Submodule: mac3\n", fence("verilog", top_tb)),
        rec("[task:functional-repair] Unit: TOP Iteration: 1\n",
            verilog_answer(TOP_V1, "u_mac.b is driven by q; it must take the weight w."),
            "rewire"),
    ]
    tfo = list(common_head) + syntax + [
        rec("[task:top] Project: mac3\n", verilog_answer(TOP_V0)),
        rec("[task:testbench] Submodule: mac3\n", fence("verilog", top_tb)),
    ]
    for it, mac in ((1, MAC_V0), (2, MAC_V1), (3, MAC_V2)):
        design = assemble_design(TOP_V1, {"quant_in": QUANT_V, "mac_q4": mac,
                                          "clip_out": CLIP_V1})
        tfo.append(rec(f"[task:functional-repair] Unit: TOP Iteration: {it}\n",
                       verilog_answer(design)))
    flat_specs = specs_response(TOP, [("x", "in", 16), ("w", "in", 16), ("acc_in", "in", 32),
                                      ("ap_return", "out", 16)])
    exhaust = [rec("[task:specs] Submodule: mac3\n", flat_specs, repeat=16),
               rec("[task:hdl] Submodule: mac3\n", verilog_answer(FLAT_BAD), repeat=16),
               rec("[task:testbench] Submodule: mac3\n", fence("verilog", top_tb), repeat=16),
               rec("[task:functional-repair] Unit: TOP", verilog_answer(FLAT_BAD),
                   "never fixes anything", repeat=48)]
    for name, records in (("full", full), ("top_feedback_only", tfo), ("exhaust", exhaust)):
        f.write(f"scripts/{name}.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n"
                                                 for r in records))


if __name__ == "__main__":
    build(Path(sys.argv[1]) if len(sys.argv) > 1 else HERE)
