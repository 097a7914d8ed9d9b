import os
import stat

import pytest
from hypothesis import given, strategies as st

from hdlagent.errors import (MockMissError, PreconditionError, SimTimeoutError,
                             SynthesisError, ToolEnvironmentError, TraceParseError,
                             TraceSchemaError)
from hdlagent.toolchain import (AdapterBinding, Dialect, PortDecl, PortTrace, Sample, ToolKind,
                                c_key, check_c_syntax, content_key, file_key, format_hex,
                                normalize_dump, parse_synth_report, parse_trace_v1,
                                run_c_compile_and_exec, run_hdl_compile, run_hls_synthesize,
                                run_logic_synth, run_rtl_sim, serialize_trace)
from hdlagent.toolchain.adapters import expand

HELLO = "int answer(void) { return 42; }\n"
HELLO_TB = "#include <stdio.h>\nint answer(void);\nint main(void) { printf(\"%d\\n\", answer()); }\n"


def fake_tool(d, name, body):
    p = d / name
    p.write_text("#!/bin/sh\n" + body)
    p.chmod(p.stat().st_mode | stat.S_IEXEC)
    return p


# -- keys ---------------------------------------------------------------------

def test_content_key_is_length_prefixed():
    assert content_key(b"ab", b"c") != content_key(b"a", b"bc")
    assert len(content_key(b"x")) == 16


def test_c_key_depends_on_testbench():
    assert c_key(["a"], "t1") != c_key(["a"], "t2")


# -- C compiler -----------------------------------------------------------------

def test_hello_program_real_compiler():
    res, out = run_c_compile_and_exec([HELLO], HELLO_TB, AdapterBinding.real(ToolKind.CCompiler))
    assert res.ok and out == b"42\n"


def test_missing_brace_reports_diagnostic():
    res, out = run_c_compile_and_exec(["int answer(void) { return 42;\n"], HELLO_TB,
                                      AdapterBinding.real(ToolKind.CCompiler))
    assert not res.ok and out == b""
    assert "error" in res.log


def test_c_syntax_check_real():
    b = AdapterBinding.real(ToolKind.CCompiler)
    assert check_c_syntax([HELLO], b).ok
    assert not check_c_syntax(["int f( {"], b).ok


def test_mock_compiler_replays_and_misses(tmp_path):
    (tmp_path / "c").mkdir()
    key = c_key([HELLO], HELLO_TB)
    (tmp_path / "c" / f"{key}.stdout").write_bytes(b"42\n")
    b = AdapterBinding.mock(ToolKind.CCompiler, tmp_path)
    assert run_c_compile_and_exec([HELLO], HELLO_TB, b)[1] == b"42\n"
    with pytest.raises(MockMissError) as ei:
        run_c_compile_and_exec(["int x;"], HELLO_TB, b)
    assert ei.value.key == c_key(["int x;"], HELLO_TB)
    assert ei.value.key in str(ei.value)


def test_absent_tool_is_environment_error(tmp_path):
    b = AdapterBinding.real(ToolKind.CCompiler, {"build": "no-such-cc -o {out} {design}"})
    with pytest.raises(ToolEnvironmentError, match="no-such-cc"):
        run_c_compile_and_exec([HELLO], HELLO_TB, b)


def test_wrong_binding_kind():
    with pytest.raises(PreconditionError):
        run_c_compile_and_exec([HELLO], HELLO_TB, AdapterBinding.real(ToolKind.Hls))


def test_mock_binding_needs_fixture_dir():
    with pytest.raises(ValueError):
        AdapterBinding(ToolKind.RtlSim, "mock")


def test_expand_keeps_paths_with_spaces():
    argv = expand("cc -o {out} {design}", {"out": "a b", "design": ["x y.c", "z.c"]})
    assert argv == ["cc", "-o", "a b", "x y.c", "z.c"]


# -- HLS ----------------------------------------------------------------------------

def test_mock_hls_copies_golden(tmp_path):
    src = tmp_path / "fx" / "hls" / "mac8"
    (src / "tb").mkdir(parents=True)
    (src / "golden.v").write_text("module mac8; endmodule\n")
    (src / "tb" / "tb.v").write_text("module tb; endmodule\n")
    res = run_hls_synthesize("mac8", "int mac8(int a);", "mac8",
                             AdapterBinding.mock(ToolKind.Hls, tmp_path / "fx"),
                             tmp_path / "golden" / "mac8")
    assert (tmp_path / "golden/mac8/golden.v").exists()
    assert (tmp_path / "golden/mac8/tb").is_dir()
    assert res.golden_hdl.read_text().startswith("module mac8")


def test_mock_hls_failure_marker(tmp_path):
    src = tmp_path / "hls" / "loop"
    src.mkdir(parents=True)
    (src / "FAIL").write_text("")
    (src / "hls.log").write_text("ERROR: loop bound is not static\n")
    with pytest.raises(SynthesisError) as ei:
        run_hls_synthesize("loop", "", "loop", AdapterBinding.mock(ToolKind.Hls, tmp_path),
                           tmp_path / "out")
    assert "loop bound" in ei.value.log


def test_real_hls_rejects_unbounded_loop(tmp_path, monkeypatch):
    bindir = tmp_path / "bin"
    bindir.mkdir()
    fake_tool(bindir, "fakehls", """
if grep -q 'while (1)' "$1"; then echo "ERROR: unbounded loop in $1" >&2; exit 3; fi
mkdir -p "$2/tb"; echo "module g; endmodule" > "$2/golden.v"; echo "module tb; endmodule" > "$2/tb/tb.v"
""")
    monkeypatch.setenv("CORRECTHDL_TOOLS", str(bindir))
    b = AdapterBinding.real(ToolKind.Hls, {"synthesize": "fakehls {design} {out}"})
    ok = run_hls_synthesize("g", "int g(int a) { return a; }", "g", b, tmp_path / "ok")
    assert ok.golden_hdl.exists() and ok.golden_testbench.exists()
    with pytest.raises(SynthesisError) as ei:
        run_hls_synthesize("spin", "void spin(void) { while (1) {} }", "spin", b,
                           tmp_path / "bad")
    assert "unbounded loop" in ei.value.log


def test_real_hls_without_template(tmp_path):
    with pytest.raises(ToolEnvironmentError, match="synthesize"):
        run_hls_synthesize("g", "", "g", AdapterBinding.real(ToolKind.Hls), tmp_path)


# -- HDL compile and simulation -----------------------------------------------------

def test_mock_hdl_compile(tmp_path):
    d = tmp_path / "d.v"
    d.write_text("module m; endmodule\n")
    (tmp_path / "fx" / "hdl").mkdir(parents=True)
    b = AdapterBinding.mock(ToolKind.RtlSim, tmp_path / "fx")
    with pytest.raises(MockMissError):
        run_hdl_compile(d, b)
    (tmp_path / "fx" / "hdl" / f"{file_key(d)}.log").write_text("d.v:1: syntax error\n")
    res = run_hdl_compile(d, b)
    assert not res.ok and "syntax error" in res.log


def test_mock_sim_replays_dump(tmp_path):
    dut, tb = tmp_path / "dutA.v", tmp_path / "tb1.v"
    dut.write_text("module dutA; endmodule\n")
    tb.write_text("module tb1; endmodule\n")
    sim = tmp_path / "fx" / "sim"
    sim.mkdir(parents=True)
    (sim / f"{file_key(dut)}-{file_key(tb)}.dump").write_text("#port y 8\n0 y 01\n")
    status, dump = run_rtl_sim(dut, tb, AdapterBinding.mock(ToolKind.RtlSim, tmp_path / "fx"),
                               tmp_path / "out" / "dump.txt")
    assert status.completed and dump.read_text() == "#port y 8\n0 y 01\n"


def test_sim_missing_testbench(tmp_path):
    dut = tmp_path / "d.v"
    dut.write_text("x")
    with pytest.raises(PreconditionError):
        run_rtl_sim(dut, tmp_path / "missing.v", AdapterBinding.mock(ToolKind.RtlSim, tmp_path))


def test_sim_timeout_keeps_partial_dump(tmp_path, monkeypatch):
    bindir = tmp_path / "bin"
    bindir.mkdir()
    fake_tool(bindir, "slowsim", 'echo "#port y 8" > trace.txt; echo "0 y 01" >> trace.txt; '
                                 'exec sleep 30\n')
    monkeypatch.setenv("CORRECTHDL_TOOLS", str(bindir))
    dut, tb = tmp_path / "d.v", tmp_path / "t.v"
    dut.write_text("d")
    tb.write_text("t")
    b = AdapterBinding.real(ToolKind.RtlSim, {"simulate": "slowsim {design} {testbench}"},
                            timeout=0.5)
    with pytest.raises(SimTimeoutError) as ei:
        run_rtl_sim(dut, tb, b, tmp_path / "out" / "dump.txt")
    assert ei.value.partial_dump is not None
    assert "0 y 01" in ei.value.partial_dump.read_text()


def test_default_sim_timeout_is_60s():
    assert AdapterBinding.real(ToolKind.RtlSim).timeout == 60.0


def test_tools_env_precedes_path(tmp_path, monkeypatch):
    bindir = tmp_path / "bin"
    bindir.mkdir()
    fake_tool(bindir, "fakesim", 'echo "#port y 4" > trace.txt; echo "0 y a" >> trace.txt\n')
    monkeypatch.setenv("CORRECTHDL_TOOLS", str(bindir))
    dut, tb = tmp_path / "d.v", tmp_path / "t.v"
    dut.write_text("d")
    tb.write_text("t")
    b = AdapterBinding.real(ToolKind.RtlSim, {"simulate": "fakesim {design} {testbench}"})
    _, dump = run_rtl_sim(dut, tb, b, tmp_path / "dump.txt")
    assert parse_trace_v1(dump.read_text()).samples == (Sample(0, "y", "a"),)


def test_real_sim_tool_absent(tmp_path, monkeypatch):
    monkeypatch.setenv("PATH", str(tmp_path))
    monkeypatch.delenv("CORRECTHDL_TOOLS", raising=False)
    dut = tmp_path / "d.v"
    dut.write_text("d")
    with pytest.raises(ToolEnvironmentError, match="iverilog"):
        run_rtl_sim(dut, dut, AdapterBinding.real(ToolKind.RtlSim))


# -- synthesis ---------------------------------------------------------------------

def test_mock_synth_report(tmp_path):
    d = tmp_path / "d.v"
    d.write_text("module m; endmodule\n")
    (tmp_path / "synth").mkdir()
    (tmp_path / "synth" / f"{file_key(d)}.rpt").write_text(
        "area: 1200.5 um^2\ntotal_power: 0.85 mW\nachieved_period: 2.0 ns\n")
    rep = run_logic_synth(d, 2.0, AdapterBinding.mock(ToolKind.LogicSynth, tmp_path))
    assert (rep.area, rep.total_power, rep.achieved_period) == (1200.5, 0.85, 2.0)
    assert rep.timing_met


def test_timing_miss_flagged():
    rep = parse_synth_report("area: 10\npower: 1\nperiod: 1.3 ns\n", requested_period=1.0)
    assert not rep.timing_met and "timing-miss" in rep.log


def test_unparsable_report_names_line():
    with pytest.raises(SynthesisError, match="line 2"):
        parse_synth_report("area: 10\nslack is fine\n")


def test_report_missing_field():
    with pytest.raises(SynthesisError, match="total_power"):
        parse_synth_report("area: 10\nperiod: 1\n")


# -- traces -------------------------------------------------------------------------

def test_trace_line_identity():
    tr = parse_trace_v1("#port y 8\n3 y 1f\n")
    assert tr.samples == (Sample(3, "y", "1f"),)


def test_trace_uppercase_canonicalized():
    assert parse_trace_v1("#port y 8\n0 y FF\n").samples[0].value_hex == "ff"


def test_trace_zero_padding():
    assert parse_trace_v1("#port y 12\n0 y 1\n").samples[0].value_hex == "001"


def test_trace_undeclared_port():
    with pytest.raises(TraceSchemaError) as ei:
        parse_trace_v1("3 z 00\n")
    assert ei.value.line_no == 1 and "z" in str(ei.value)


@pytest.mark.parametrize("text,msg", [
    ("#port y 8\n0 y 1ff\n", "exceeds"),
    ("#port y 8\n0 y zz\n", "hexadecimal"),
    ("#port y 8\n1 y 00\n0 y 00\n", "decreases"),
    ("#port y 8\n0 y 00\n0 y 01\n", "duplicate"),
    ("#port y 8\n#port y 4\n", "twice"),
])
def test_trace_rejects(text, msg):
    with pytest.raises(TraceParseError, match=msg):
        parse_trace_v1(text)


VCD = """$timescale 1ns $end
$scope module tb $end
$var wire 1 ! valid $end
$var wire 8 " y $end
$upscope $end
$enddefinitions $end
#0
0!
b00000000 "
#5
1!
b00011111 "
#10
0!
#15
1!
b11111111 "
#20
0!
"""


def test_value_change_with_strobe():
    tr = normalize_dump(VCD.encode(), Dialect.ValueChange, strobe="valid")
    assert tr.ports == ["y"]
    assert [s.value_hex for s in tr.samples] == ["1f", "ff"]
    assert [s.index for s in tr.samples] == [0, 1]


def test_value_change_rejects_unknown_bits():
    bad = VCD.replace("b11111111", "b1111xxxx")
    with pytest.raises(TraceParseError, match="x/z"):
        normalize_dump(bad.encode(), Dialect.ValueChange, strobe="valid")


@st.composite
def traces(draw):
    widths = draw(st.lists(st.integers(1, 64), min_size=1, max_size=4))
    header = [PortDecl(f"p{i}", w) for i, w in enumerate(widths)]
    n = draw(st.integers(0, 20))
    samples = [Sample(i, p.name, format_hex(draw(st.integers(0, 2 ** p.width - 1)), p.width))
               for i in range(n) for p in header]
    return PortTrace(header, samples)


@given(traces())
def test_trace_round_trip_property(tr):
    text = serialize_trace(tr)
    assert parse_trace_v1(text) == tr
    assert serialize_trace(parse_trace_v1(text)) == text


@given(st.integers(1, 64), st.data())
def test_format_hex_property(width, data):
    v = data.draw(st.integers(0, 2 ** width - 1))
    h = format_hex(v, width)
    assert int(h, 16) == v and len(h) == (width + 3) // 4 and h == h.lower()


def test_tool_env_name_is_stable():
    from hdlagent.toolchain.adapters import TOOLS_ENV
    assert TOOLS_ENV == "CORRECTHDL_TOOLS"
    assert os.pathsep not in TOOLS_ENV
