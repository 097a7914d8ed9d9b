import json

import pytest
from hypothesis import given, strategies as st

from hdlagent.decomposer import (CSubmodule, DecompositionPlan, InterfaceContract, Port,
                                 check_plan, contract_from_signature, first_difference, load_plan,
                                 propose_decomposition, reintegrate_and_check, top_contract,
                                 violated_rules, write_plan)
from hdlagent.errors import BuildError, DecompositionError
from hdlagent.gateway import Gateway, ProviderConfig, ScriptedMock
from hdlagent import cparse
from hdlagent.toolchain import AdapterBinding, ToolKind

INC = "#include <stdint.h>\n\nint32_t inc(int32_t x) {\n    return x + 1;\n}\n"
INC_TB = ('#include <stdio.h>\n#include <stdint.h>\nint32_t inc(int32_t x);\n'
          'int main(void) { for (int i = 0; i < 4; i++) printf("%d\\n", inc(i * 10)); }\n')


def gateway(records):
    return Gateway(ProviderConfig("mock:inline", backoff_base=0), ScriptedMock(records))


def fenced(doc):
    return "Plan:\n```json\n" + json.dumps(doc) + "\n```\n"


def sub_doc(sid, src, ports, summary="does one thing", order=0):
    return {"id": sid, "entry_function": sid, "call_order_index": order, "c_source": src,
            "interface": {"ports": [{"name": n, "direction": d, "width_bits": w}
                                    for n, d, w in ports], "semantics_summary": summary}}


def test_contract_from_signature():
    f = cparse.find_functions("void f(const uint8_t in[4], uint8_t out[4], int16_t k) {}")[0]
    c = contract_from_signature(f)
    assert [(p.name, p.direction, p.width_bits, p.array_len) for p in c.ports] == [
        ("in", "in", 8, 4), ("out", "out", 8, 4), ("k", "in", 16, None)]


def test_top_contract_missing_function():
    with pytest.raises(DecompositionError, match="nope"):
        top_contract(INC, "nope")


def test_single_function_plan_mirrors_signature():
    doc = {"submodules": [sub_doc("inc", INC, [("x", "in", 32), ("ap_return", "out", 32)])],
           "top_glue": "#include <stdint.h>\nint32_t inc(int32_t x);\n"
                       "int32_t top(int32_t x) { return inc(x); }\n",
           "dataflow_edges": []}
    plan = propose_decomposition(INC, gateway([{"response_text": fenced(doc)}]),
                                 top_function="top")
    assert plan.ids == ["inc"]
    sig = contract_from_signature(cparse.find_functions(INC)[0])
    assert [(p.name, p.direction, p.width_bits) for p in plan.submodules[0].interface.ports] \
        == [(p.name, p.direction, p.width_bits) for p in sig.ports]


AES = """#include <stdint.h>
void sub_bytes(const uint8_t s[16], uint8_t o[16]) { for (int i = 0; i < 16; i++) o[i] = s[i] ^ 0x63; }
void shift_rows(const uint8_t s[16], uint8_t o[16]) { for (int i = 0; i < 16; i++) o[i] = s[(i * 5) % 16]; }
void mix_columns(const uint8_t s[16], uint8_t o[16]) { for (int i = 0; i < 16; i++) o[i] = s[i] ^ s[i ^ 1]; }
void add_round_key(const uint8_t s[16], const uint8_t k[16], uint8_t o[16]) { for (int i = 0; i < 16; i++) o[i] = s[i] ^ k[i]; }
void aes_round(const uint8_t s[16], const uint8_t k[16], uint8_t o[16]) {
    uint8_t a[16], b[16], c[16];
    sub_bytes(s, a);
    shift_rows(a, b);
    mix_columns(b, c);
    add_round_key(c, k, o);
}
"""


def aes_plan_doc():
    funcs = {f.name: f for f in cparse.find_functions(AES)}
    subs = []
    for i, name in enumerate(["sub_bytes", "shift_rows", "mix_columns", "add_round_key"]):
        f = funcs[name]
        src = "#include <stdint.h>\n" + AES[f.start:f.end] + "\n"
        c = contract_from_signature(f, summary=f"{name} only")
        subs.append({"id": name, "entry_function": name, "call_order_index": i, "c_source": src,
                     "interface": c.to_dict()})
    glue = ("#include <stdint.h>\n"
            + "".join(f"void {n}();\n" for n in ("sub_bytes", "shift_rows", "mix_columns"))
            + "void add_round_key();\n" + AES[funcs["aes_round"].start:funcs["aes_round"].end])
    return {"submodules": subs, "top_glue": glue,
            "dataflow_edges": [["sub_bytes", "o", "shift_rows", "s"],
                               ["shift_rows", "o", "mix_columns", "s"],
                               ["mix_columns", "o", "add_round_key", "s"]]}


def test_round_transformations_become_submodules():
    plan = propose_decomposition(AES, gateway([{"response_text": fenced(aes_plan_doc())}]),
                                 top_function="aes_round")
    assert len(plan.ids) >= 4
    assert set(plan.ids) == {"sub_bytes", "shift_rows", "mix_columns", "add_round_key"}
    assert all(len([f for f in cparse.find_functions(s.c_source) if not f.is_static]) == 1
               for s in plan.submodules)


PTR = "#include <stdint.h>\nint32_t sum(const int32_t *v, int32_t n) { int32_t s = 0; " \
      "for (int i = 0; i < n; i++) s += v[i]; return s; }\n"


def test_pointer_parameter_rejected_after_reprompt():
    doc = {"submodules": [sub_doc("sum", PTR, [("v", "in", 32), ("n", "in", 32),
                                               ("ap_return", "out", 32)])],
           "top_glue": "int top(void) { return sum(0, 0); }\n", "dataflow_edges": []}
    gw = gateway([{"response_text": fenced(doc), "repeat": 2}])
    with pytest.raises(DecompositionError) as ei:
        propose_decomposition(PTR, gw, top_function="top")
    assert "rule (2)" in violated_rules(ei.value.violations)
    assert any("pointer" in v for v in ei.value.violations)
    # the second prompt carried the violations back to the model
    assert "pointer" in gw.provider.calls[1]


def test_reprompt_can_fix_violation():
    bad = {"submodules": [sub_doc("inc", INC, [("x", "in", 32), ("ap_return", "out", 32)],
                                  summary="")],
           "top_glue": "int32_t inc(int32_t x);\nint32_t top(int32_t x) { return inc(x); }\n",
           "dataflow_edges": []}
    good = json.loads(json.dumps(bad))
    good["submodules"][0]["interface"]["semantics_summary"] = "add one"
    gw = gateway([{"response_text": fenced(bad)}, {"response_text": fenced(good)}])
    plan = propose_decomposition(INC, gw, top_function="top")
    assert plan.get("inc").interface.semantics_summary == "add one"
    assert "rule (3)" in gw.provider.calls[1]


def test_check_plan_structural_defects():
    a = CSubmodule("a", INC, "inc", InterfaceContract([Port("x", "in", 32),
                                                       Port("ap_return", "out", 32)], "inc"))
    plan = DecompositionPlan([a], "int top(void) { return 0; }\n",
                             [("a", "ap_return", "a", "x"), ("a", "x", "ghost", "y")])
    probs = check_plan(plan, INC, "top")
    assert any("cycle" in p for p in probs)
    assert any("ghost" in p for p in probs)
    assert any("never calls inc" in p for p in probs)


def test_check_plan_width_and_granularity():
    src = "#include <stdint.h>\nint8_t f(int8_t a) { return a; }\nint8_t g(int8_t a) { return a; }\n"
    s = CSubmodule("f", src, "f", InterfaceContract([Port("a", "in", 16),
                                                     Port("ap_return", "out", 8)], "x"))
    probs = check_plan(DecompositionPlan([s], "int8_t top(int8_t a) { return f(a); }\n"))
    assert any("exactly one externally visible" in p for p in probs)
    assert any("16 bits" in p for p in probs)


def test_plan_write_load_round_trip(tmp_path, mkfx):
    plan = DecompositionPlan.from_dict(mkfx.plan_doc())
    write_plan(plan, tmp_path)
    assert (tmp_path / "mac_q4" / "src.c").read_text() == plan.get("mac_q4").c_source
    again = load_plan(tmp_path)
    assert again.to_dict() == plan.to_dict()


def test_fixture_plan_is_valid(mkfx):
    plan = DecompositionPlan.from_dict(mkfx.plan_doc())
    assert check_plan(plan, mkfx.PROGRAM, "mac3") == []


GCC = AdapterBinding.real(ToolKind.CCompiler)


def test_reintegration_pass_on_verbatim_cut():
    glue = "#include <stdint.h>\nint32_t inc(int32_t x);\n"
    plan = DecompositionPlan([CSubmodule("inc", INC, "inc", InterfaceContract([]))], glue)
    v = reintegrate_and_check(plan, INC, INC_TB, GCC)
    assert v.passed and v.decomposed_stdout == b"1\n11\n21\n31\n"


def test_reintegration_dropped_increment():
    plan = DecompositionPlan([CSubmodule("inc", INC.replace(" + 1", ""), "inc",
                                         InterfaceContract([]))], "")
    v = reintegrate_and_check(plan, INC, INC_TB, GCC)
    assert v.status == "Fail"
    assert "first difference at output line 1" in v.report
    assert "decomposed '0', original '1'" in v.report


def test_reintegration_wrong_order_on_chain():
    src = ("#include <stdint.h>\nint32_t dbl(int32_t x) { return 2 * x; }\n"
           "int32_t inc(int32_t x) { return x + 1; }\n"
           "int32_t top(int32_t x) { return inc(dbl(x)); }\n")
    tb = ('#include <stdio.h>\n#include <stdint.h>\nint32_t top(int32_t);\n'
          'int main(void) { printf("%d\\n", top(5)); }\n')
    subs = [CSubmodule("dbl", "#include <stdint.h>\nint32_t dbl(int32_t x) { return 2 * x; }\n",
                       "dbl", InterfaceContract([])),
            CSubmodule("inc", INC, "inc", InterfaceContract([]))]
    decl = "#include <stdint.h>\nint32_t dbl(int32_t);\nint32_t inc(int32_t);\n"
    good = DecompositionPlan(subs, decl + "int32_t top(int32_t x) { return inc(dbl(x)); }\n")
    swapped = DecompositionPlan(subs, decl + "int32_t top(int32_t x) { return dbl(inc(x)); }\n")
    assert reintegrate_and_check(good, src, tb, GCC).passed
    v = reintegrate_and_check(swapped, src, tb, GCC)
    assert not v.passed and v.decomposed_stdout == b"12\n" and v.original_stdout == b"11\n"


def test_reintegration_build_failure():
    plan = DecompositionPlan([CSubmodule("inc", "int32_t inc(", "inc", InterfaceContract([]))], "")
    with pytest.raises(BuildError):
        reintegrate_and_check(plan, INC, INC_TB, GCC)


def test_first_difference_on_length():
    assert "line 2" in first_difference(b"a\n", b"a\nb\n")


@given(st.lists(st.integers(-1000, 1000), max_size=8))
def test_count_calls_matches_glue(xs):
    body = "".join(f"    y = f(y + {x});\n" for x in xs)
    src = f"int g(int y) {{\n{body}    return y;\n}}\n"
    assert cparse.count_calls(src, "f") == len(xs)
