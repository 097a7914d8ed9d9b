import pytest
from hypothesis import given, settings, strategies as st

from hdlagent.diffverify import (MismatchEntry, MismatchLog, build_repair_bundle,
                                 classify_discrepancy, compare_traces, differential_loop,
                                 load_cases, loop_summary, merge_logs)
from hdlagent.errors import CoverageError, InterfaceError, PreconditionError, TraceParseError
from hdlagent.gateway import Gateway, ProviderConfig, ScriptedMock
from hdlagent.toolchain import PortDecl, PortTrace, Sample, format_hex
from hdlagent.workspace import Stage


def trace(values, port="y", width=8, start=0):
    return PortTrace([PortDecl(port, width)],
                     [Sample(start + i, port, format_hex(v, width)) for i, v in enumerate(values)])


def gw(*texts):
    return Gateway(ProviderConfig("mock:inline", backoff_base=0),
                   ScriptedMock([{"response_text": t} for t in texts]))


def test_identical_traces_pass():
    t = trace([1, 2, 3])
    m = compare_traces(t, t)
    assert m.passed and m.total_cases == 3 and m.serialize() == "SUMMARY 0/3\n"


def test_single_difference():
    m = compare_traces(trace([1, 9, 3]), trace([1, 2, 3]))
    (e,) = m.entries
    assert (e.test_case_id, e.sample_index, e.actual_hex, e.expected_hex) == (2, 1, "09", "02")
    assert m.failing_cases == 1


def test_coverage_error_names_missing_indices():
    with pytest.raises(CoverageError) as ei:
        compare_traces(trace([1, 2]), trace([1, 2, 3, 4]))
    assert sorted(ei.value.missing) == [2, 3]
    assert "2, 3" in str(ei.value)


def test_header_mismatch():
    with pytest.raises(InterfaceError, match="width 16"):
        compare_traces(trace([1], width=16), trace([1]))


def test_case_map_groups_samples(tmp_path):
    p = tmp_path / "cases"
    p.write_text("# idx case stimulus\n0 1 x=1\n1 1 x=2\n2 2 x=3\n")
    cm, stim = load_cases(p)
    m = compare_traces(trace([0, 5, 5]), trace([0, 4, 4]), cm, stim)
    assert m.total_cases == 2 and m.failing_case_ids == [1, 2]
    assert "STIM 1 x=2" in m.serialize()


def test_unmapped_sample():
    with pytest.raises(CoverageError):
        compare_traces(trace([1, 2]), trace([1, 2]), {0: 1})


def test_entry_requires_difference():
    with pytest.raises(ValueError):
        MismatchEntry(1, "", "y", "01", "01", 0)


def test_parse_rejects_inconsistent_summary():
    with pytest.raises(TraceParseError):
        MismatchLog.parse("SUMMARY 2/3\nCASE 1 PORT y IDX 0 ACTUAL 01 EXPECTED 02\n")
    with pytest.raises(TraceParseError):
        MismatchLog.parse("CASE 1 PORT y IDX 0 ACTUAL 01 EXPECTED 02\n")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 255), st.integers(0, 255)), min_size=1, max_size=30))
def test_log_round_trip(pairs):
    m = compare_traces(trace([a for a, _ in pairs]), trace([b for _, b in pairs]))
    again = MismatchLog.parse(m.serialize())
    assert again.entries == m.entries and again.total_cases == m.total_cases


def _many(n):
    entries = [MismatchEntry(i + 1, "", "y", "01", "02", i) for i in range(n)]
    return MismatchLog("u", entries, n, total_samples=n)


def test_bundle_truncates_to_ten():
    b = build_repair_bundle("module u; endmodule", "int u();", _many(50))
    assert len(b.shown) == 10
    assert [e.sample_index for e in b.shown] == list(range(10))
    assert "50 of 50 compared outputs mismatch, first 10 shown" in b.summary


def test_bundle_single_entry():
    b = build_repair_bundle("m", "c", _many(1))
    assert len(b.shown) == 1 and "first 1 shown" in b.summary
    assert len(b.reasoning_stages) >= 3


def test_bundle_requires_mismatch():
    with pytest.raises(PreconditionError):
        build_repair_bundle("m", "c", MismatchLog("u", [], 3))


def test_classify_scaling():
    golden = [10, 20, 40, 80]
    m = compare_traces(trace([v >> 1 for v in golden]), trace(golden))
    assert "scaling" in classify_discrepancy(m)


def test_classify_lag():
    golden = [3, 7, 11, 15, 19]
    dut = [0] + golden[:-1]
    g = trace(golden)
    assert "reset_or_lag" in classify_discrepancy(compare_traces(trace(dut), g), g)


def test_classify_state_retention(tmp_path):
    p = tmp_path / "cases"
    p.write_text("0 1\n1 2\n2 3\n")
    cm, _ = load_cases(p)
    m = compare_traces(trace([5, 9, 9]), trace([5, 6, 7]), cm)
    assert "state_retention" in classify_discrepancy(m)


def test_classify_offset_and_unknown():
    assert "constant_offset" in classify_discrepancy(
        compare_traces(trace([4, 5, 6]), trace([1, 2, 3])))
    assert classify_discrepancy(compare_traces(trace([9]), trace([2]))) == {"unknown"}


# A toy DUT: the "code" is the right-shift applied to each golden value.
GOLDEN = [16, 32, 48, 64]


def shift_sim(code, _it):
    s = int(code.split("=")[1])
    return trace([v >> s for v in GOLDEN])


def fence(s):
    return f"```verilog\nshift={s}\n```"


def run_loop(code, gateway, archive=None, limit=3):
    return differential_loop("u", code, simulate_dut=shift_sim, golden_trace=trace(GOLDEN),
                             compare=compare_traces, gateway=gateway, limit=limit,
                             c_reference="int u(int x) { return x; }", archive=archive)


def test_loop_passes_without_prompts():
    g = gw()
    v = run_loop("shift=0", g)
    assert v.passed and v.repairs == 0 and g.provider.calls == []


def test_loop_two_repairs(mac3_ws):
    arch = mac3_ws.archive(Stage.SubmoduleVerify, 0, "u")
    g = gw(fence(1), fence(0))
    v = run_loop("shift=2", g, arch)
    assert v.passed and v.repairs == 2 and v.simulations == 3
    assert [lg.failing_cases for lg in v.logs] == [4, 4, 0]
    assert "scaling" in g.provider.calls[0]
    assert loop_summary(v) == '{"repairs": 2, "simulations": 3, "status": "Pass"}'


def test_loop_exhausts_with_three_bundles(mac3_ws):
    arch = mac3_ws.archive(Stage.SubmoduleVerify, 0, "u")
    v = run_loop("shift=1", gw(fence(2), fence(3), fence(1)), arch)
    assert v.status == "Exhausted" and v.repairs == 3
    bundles = [p for p in arch.paths if p.endswith(".bundle.txt")]
    assert len(bundles) == 3


def test_unparseable_repair_consumes_iteration():
    v = run_loop("shift=1", gw("no code", fence(0)))
    assert v.passed and v.repairs == 2 and v.simulations == 2


def test_zero_limit_reports_exhausted_without_prompt():
    g = gw()
    v = run_loop("shift=1", g, limit=0)
    assert v.status == "Exhausted" and g.provider.calls == []


def test_merge_logs():
    a = compare_traces(trace([1, 2]), trace([1, 3]))
    b = compare_traces(trace([5], port="z"), trace([6], port="z"))
    m = merge_logs("top", a, b)
    assert [e.port_name for e in m.entries] == ["z", "y"]
    assert m.total_samples == 3
