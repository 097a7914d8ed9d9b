import pytest
from hypothesis import given, strategies as st

from hdlagent import hdlgen
from hdlagent.decomposer import CSubmodule, InterfaceContract, Port
from hdlagent.errors import (AdaptationError, GateStateError, GenerationError, SpecError)
from hdlagent.gateway import Gateway, ProviderConfig, ScriptedMock
from hdlagent.hdlgen import (DesignConstraints, FunctionalSpec, InterfaceDefinition, PortMapRow,
                             adapt_testbench, approval_state, check_testbench, decide,
                             generate_hdl, generate_specs, identity_interface, lint_hdl,
                             mark_pending)
from hdlagent.workspace import Stage

SUB = CSubmodule("neg8", "#include <stdint.h>\nint8_t neg8(int8_t a) { return -a; }\n", "neg8",
                 InterfaceContract([Port("a", "in", 8), Port("ap_return", "out", 8)],
                                   "negate a"))
IFACE = InterfaceDefinition("neg8", [PortMapRow("a", "a", "in", 8),
                                     PortMapRow("ap_return", "y", "out", 8)])
GOOD_V = "module neg8(input [7:0] a, output [7:0] y);\n  assign y = -a;\nendmodule\n"


def gw(*texts):
    return Gateway(ProviderConfig("mock:inline", backoff_base=0),
                   ScriptedMock([{"response_text": t} for t in texts]))


def specs_answer(iface_text, spec="The module negates input a and drives y (ap_return)."):
    return f"```markdown\n{spec}\n```\n```interface\n{iface_text}```\n"


def test_specs_two_rows_with_contract_widths():
    spec, iface = generate_specs(SUB, gw(specs_answer("a a in 8\nap_return y out 8\n")))
    assert [(r.c_param, r.hdl_port, r.width_bits) for r in iface.port_map] == [
        ("a", "a", 8), ("ap_return", "y", 8)]
    assert "negates" in spec.behavior_text


def test_contract_width_wins():
    sub = CSubmodule("w", "", "w", InterfaceContract([Port("a", "in", 12),
                                                      Port("ap_return", "out", 12)], "w"))
    _, iface = generate_specs(sub, gw(specs_answer("a a in 16\nap_return y out 16\n",
                                                   "Reads a, writes y.")))
    assert [r.width_bits for r in iface.port_map] == [12, 12]


def test_missing_port_reprompts_then_fails():
    sub = CSubmodule("acc", "", "acc", InterfaceContract(
        [Port("x", "in", 8), Port("state", "in", 8), Port("ap_return", "out", 8)], "acc"))
    answer = specs_answer("x x in 8\nap_return y out 8\n", "Adds x into y.")
    g = gw(answer, answer)
    with pytest.raises(SpecError, match="state"):
        generate_specs(sub, g)
    assert "REMINDER" in g.provider.calls[1] and "state" in g.provider.calls[1]


def test_missing_port_fixed_on_second_try():
    sub = CSubmodule("acc", "", "acc", InterfaceContract(
        [Port("x", "in", 8), Port("state", "in", 8), Port("ap_return", "out", 8)], "acc"))
    bad = specs_answer("x x in 8\nap_return y out 8\n", "Adds x into y.")
    good = specs_answer("x x in 8\nstate s in 8\nap_return y out 8\n", "Adds x and state to y.")
    _, iface = generate_specs(sub, gw(bad, good))
    assert iface.c_to_hdl == {"x": "x", "state": "s", "ap_return": "y"}


def test_interface_parse_errors():
    with pytest.raises(SpecError, match="line 1"):
        InterfaceDefinition.parse("m", "a a sideways 8\n")


@given(st.lists(st.tuples(st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True),
                          st.sampled_from(["in", "out"]), st.integers(1, 128)),
                min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_interface_round_trip(rows):
    iface = InterfaceDefinition("m", [PortMapRow(n, n + "_h", d, w) for n, d, w in rows])
    assert InterfaceDefinition.parse("m", iface.serialize()) == iface


def test_identity_interface_flattens_arrays():
    c = InterfaceContract([Port("v", "in", 8, 4), Port("o", "out", 8)])
    assert [(r.hdl_port, r.width_bits) for r in identity_interface("m", c).port_map] == [
        ("v", 32), ("o", 8)]


def test_generate_hdl_returns_fence_interior(mac3_ws):
    h = generate_hdl(SUB, (FunctionalSpec("neg8", "negate"), IFACE), DesignConstraints(),
                     gw(f"Sure.\n```verilog\n{GOOD_V}```\n"))
    assert h.code == GOOD_V and h.syntax_status == "Unchecked"


def test_generate_hdl_reprompts_for_fence(mac3_ws):
    g = gw("module neg8; endmodule", f"```verilog\n{GOOD_V}```\n")
    arch = mac3_ws.archive(Stage.GenerateHdl, 0, "neg8")
    h = generate_hdl(SUB, (FunctionalSpec("neg8", "negate"), IFACE), DesignConstraints(), g,
                     arch)
    assert h.code == GOOD_V
    labels = [p.rsplit("/", 1)[1] for p in arch.paths]
    assert labels == ["generate.prompt1.txt", "generate.response1.txt",
                      "generate.prompt2.txt", "generate.response2.txt"]


def test_generate_hdl_gives_up():
    with pytest.raises(GenerationError):
        generate_hdl(SUB, (FunctionalSpec("neg8", "x"), IFACE), DesignConstraints(),
                     gw("no fence", "still none"))


def test_prompt_carries_constraints():
    g = gw(f"```verilog\n{GOOD_V}```\n")
    generate_hdl(SUB, (FunctionalSpec("neg8", "x"), IFACE), DesignConstraints(), g)
    assert "```verilog" in g.provider.calls[0]
    assert "y out 8" in g.provider.calls[0]


def test_lint_clean():
    assert lint_hdl(GOOD_V, "neg8", IFACE) == []


@pytest.mark.parametrize("code,needle", [
    ("module other(input [7:0] a, output [7:0] y); endmodule", "is not defined"),
    ("module neg8(input [7:0] a, output [15:0] y); endmodule", "width mismatch"),
    ("module neg8(input [7:0] a, input [7:0] y); endmodule", "declared as input"),
    ("module neg8(input [7:0] a); endmodule", "'y' is not declared"),
    ("module neg8(input [7:0] a, output [7:0] y, output [3:0] dbg); endmodule",
     "'dbg' is not part"),
])
def test_lint_defects(code, needle):
    msgs = lint_hdl(code, "neg8", IFACE)
    assert any(needle in m for m in msgs), msgs


def test_lint_allows_control_ports():
    code = "module neg8(input clk, input rst, input [7:0] a, output [7:0] y); endmodule"
    assert lint_hdl(code, "neg8", IFACE) == []


TB = """module tb;
  reg [7:0] a; wire [7:0] y; integer trace_fd; integer trace_idx;
  neg8 dut(.a(a), .y(y));
  initial begin
    trace_fd = $fopen("trace.txt", "w");
    $fwrite(trace_fd, "#port y 8\\n");
    trace_idx = 0;
    a = 8'd3; #1 $fwrite(trace_fd, "%0d y %h\\n", trace_idx, y);
    $fclose(trace_fd);
  end
endmodule
"""


def test_testbench_check_accepts_protocol():
    assert check_testbench(TB, IFACE, "neg8") == []


def test_testbench_without_recorder_names_port():
    tb = TB.replace('$fwrite(trace_fd, "%0d y %h\\n", trace_idx, y);', "")
    msgs = check_testbench(tb, IFACE, "neg8")
    assert msgs == ["output y is not recorded"]


def test_adapt_testbench_fails_naming_port():
    tb = TB.replace('$fwrite(trace_fd, "%0d y %h\\n", trace_idx, y);', "")
    with pytest.raises(AdaptationError, match="y"):
        adapt_testbench("int main() {}", IFACE, gw(f"```verilog\n{tb}```",
                                                  f"```verilog\n{tb}```"), "neg8")


def test_adapt_testbench_ok():
    assert adapt_testbench("int main() {}", IFACE, gw(f"```verilog\n{TB}```"), "neg8") == TB


def test_gate_lifecycle(tmp_path):
    tb = tmp_path / "tb.v"
    tb.write_text(TB)
    assert approval_state(tb) is None
    with pytest.raises(GateStateError):
        decide(tb, "approve")
    mark_pending(tb)
    assert approval_state(tb) == "pending"
    assert decide(tb, "approve") == "approved"
    marker = hdlgen.approval_path(tb).read_bytes()
    assert decide(tb, "approve") == "approved"
    assert hdlgen.approval_path(tb).read_bytes() == marker
    with pytest.raises(GateStateError):
        decide(tb, "reject")


def test_gate_resets_when_testbench_changes(tmp_path):
    tb = tmp_path / "tb.v"
    tb.write_text(TB)
    mark_pending(tb)
    decide(tb, "approve")
    tb.write_text(TB + "// edited\n")
    assert approval_state(tb) == "pending"


def test_gate_reject(tmp_path):
    tb = tmp_path / "tb.v"
    tb.write_text(TB)
    mark_pending(tb)
    assert decide(tb, "reject") == "rejected"
    assert approval_state(tb) == "rejected"
