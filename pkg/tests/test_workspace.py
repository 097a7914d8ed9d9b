import os

import pytest
from hypothesis import given, settings, strategies as st

from hdlagent.errors import OrderingError, SetupError, ValidationError
from hdlagent.workspace import (MANIFEST_NAME, SKELETON, TOP, ProjectManifest, Round,
                                RunRecord, Stage, StageStatus, Status, Workspace,
                                init_workspace)


def _manifest(tmp_path, **kw):
    (tmp_path / "p.c").write_text("int f(int x) { return x; }\n")
    (tmp_path / "tb.c").write_text("int main(void) { return 0; }\n")
    d = dict(project_name="p", c_source_path="p.c", c_testbench_path="tb.c",
             repetitions_n=2, submodule_ids=["a", "b"])
    d.update(kw)
    return ProjectManifest.from_dict(d)


@pytest.fixture
def ws(tmp_path):
    return init_workspace(_manifest(tmp_path), tmp_path / "ws", manifest_base=tmp_path)


def test_init_creates_skeleton_and_manifest(ws):
    assert sorted(p.name for p in ws.root.iterdir() if p.is_dir()) == sorted(SKELETON)
    assert (ws.root / MANIFEST_NAME).is_file()
    assert (ws.root / "src" / "p.c").is_file()
    reopened = Workspace.open(ws.root)
    assert reopened.manifest.c_source_path == "src/p.c"


def test_default_limits_are_three(ws):
    assert ws.manifest.iteration_limits == {"syntax_repair": 3, "functional_repair": 3,
                                            "integration_repair": 3}


def test_zero_repetitions_names_field(tmp_path):
    with pytest.raises(ValidationError) as ei:
        init_workspace(_manifest(tmp_path, repetitions_n=0), tmp_path / "ws",
                       manifest_base=tmp_path)
    assert any("repetitions_n" in p for p in ei.value.problems)
    assert not (tmp_path / "ws").exists()


def test_invalid_manifest_lists_every_problem(tmp_path):
    m = _manifest(tmp_path, repetitions_n=0, submodule_ids=["a", "a"],
                  iteration_limits={"syntax_repair": 0})
    probs = m.problems(tmp_path)
    assert any("repetitions_n" in p for p in probs)
    assert any("submodule_ids" in p for p in probs)
    assert any("syntax_repair" in p for p in probs)


def test_top_id_reserved(tmp_path):
    probs = _manifest(tmp_path, submodule_ids=["a", "top"]).problems(tmp_path)
    assert any("reserved" in p for p in probs)


def test_missing_source_path_rejected(tmp_path):
    m = _manifest(tmp_path, c_source_path="nope.c")
    with pytest.raises(ValidationError, match="c_source_path"):
        m.validate(tmp_path)


def test_unknown_manifest_field(tmp_path):
    with pytest.raises(ValidationError, match="colour"):
        ProjectManifest.from_dict({"project_name": "p", "c_source_path": "a",
                                   "c_testbench_path": "b", "colour": 1})


def test_reinit_without_force_touches_nothing(ws, tmp_path):
    before = {p: p.stat().st_mtime_ns for p in ws.root.rglob("*")}
    with pytest.raises(SetupError):
        init_workspace(_manifest(tmp_path), ws.root, manifest_base=tmp_path)
    assert {p: p.stat().st_mtime_ns for p in ws.root.rglob("*")} == before


def test_reinit_with_force(ws, tmp_path):
    again = init_workspace(_manifest(tmp_path), ws.root, force=True, manifest_base=tmp_path)
    assert again.manifest.project_name == "p"


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_root(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        with pytest.raises(SetupError):
            init_workspace(_manifest(tmp_path), ro / "ws", manifest_base=tmp_path)
    finally:
        ro.chmod(0o700)


def test_open_non_workspace(tmp_path):
    with pytest.raises(SetupError):
        Workspace.open(tmp_path)


def test_record_artifact_round_trip(ws):
    rel = ws.record_artifact(Stage.SyntaxRepair, 0, b"module m;\n", "attempt1.v")
    assert rel == "logs/SyntaxRepair/full-0/attempt1.v"
    assert ws.read_artifact(rel) == b"module m;\n"


def test_record_artifact_never_clobbers(ws):
    a = ws.record_artifact(Stage.SyntaxRepair, 0, b"one", "attempt1.v")
    b = ws.record_artifact(Stage.SyntaxRepair, 0, b"two", "attempt1.v")
    assert b == a + ".2"
    assert ws.read_artifact(a) == b"one" and ws.read_artifact(b) == b"two"


@pytest.mark.parametrize("label", ["../x", "a/b", "", "..", "a\\b"])
def test_record_artifact_rejects_paths(ws, label):
    with pytest.raises(ValidationError):
        ws.record_artifact(Stage.SyntaxRepair, 0, b"x", label)


def test_record_artifact_updates_run_record(ws):
    rel = ws.record_artifact(Stage.GenerateHdl, 1, b"x", "gen.v", scope="a")
    (rec,) = ws.run_records(Round(1))
    assert rec.scope == "a" and rec.stage == Stage.GenerateHdl
    assert rec.status == Status.Pending and rec.artifact_refs == [rel]


def _pass_sub(ws, sid, rnd=0):
    for stage in (Stage.GenerateHdl, Stage.SyntaxRepair, Stage.SubmoduleVerify):
        ws.advance_stage(rnd, sid, stage, Status.Pass, 1 if stage != Stage.GenerateHdl else 0)


def test_top_integrate_after_all_pass(ws):
    ws.advance_stage(0, TOP, Stage.Decompose, Status.Pass)
    _pass_sub(ws, "a")
    _pass_sub(ws, "b")
    snap = ws.advance_stage(0, TOP, Stage.Integrate, Status.Pass)
    assert snap.get(TOP, Stage.Integrate) == Status.Pass


def test_top_blocked_by_failed_submodule(ws):
    ws.advance_stage(0, TOP, Stage.Decompose, Status.Pass)
    _pass_sub(ws, "a")
    ws.advance_stage(0, "b", Stage.GenerateHdl, Status.Pass)
    ws.advance_stage(0, "b", Stage.SyntaxRepair, Status.Fail, 1)
    with pytest.raises(OrderingError, match="b"):
        ws.advance_stage(0, TOP, Stage.TopVerify, Status.Pass)


def test_submodule_cannot_skip_to_verify(ws):
    with pytest.raises(OrderingError):
        ws.advance_stage(0, "a", Stage.SubmoduleVerify, Status.Pass)


def test_stage_order_is_monotone(ws):
    _pass_sub(ws, "a")
    with pytest.raises(OrderingError, match="back"):
        ws.advance_stage(0, "a", Stage.GenerateHdl, Status.Pass)


def test_attempt_bounds(ws):
    ws.advance_stage(0, "a", Stage.GenerateHdl, Status.Pass)
    with pytest.raises(ValidationError, match="exceeds"):
        ws.advance_stage(0, "a", Stage.SyntaxRepair, Status.Fail, 4)
    with pytest.raises(ValidationError, match="Exhausted"):
        ws.advance_stage(0, "a", Stage.SyntaxRepair, Status.Exhausted, 2)
    ws.advance_stage(0, "a", Stage.SyntaxRepair, Status.Exhausted, 3)


def test_rounds_are_isolated(ws):
    _pass_sub(ws, "a", Round(0))
    assert ws.stage_status(Round(1)).get("a", Stage.GenerateHdl) is None
    assert ws.stage_status(Round(0, "direct_c")).submodules == {}


def test_status_survives_reopen(ws):
    _pass_sub(ws, "a")
    again = Workspace.open(ws.root)
    assert again.stage_status(0).submodule_passing("a")
    assert [r.tag for r in again.rounds()] == ["full-0"]


def test_round_tag_parse():
    assert Round.parse("top_feedback_only-12") == Round(12, "top_feedback_only")


@settings(max_examples=50, deadline=None)
@given(payload=st.binary(max_size=512),
       label=st.from_regex(r"[A-Za-z0-9_][A-Za-z0-9_.\-]{0,20}", fullmatch=True))
def test_artifact_round_trip_property(tmp_path_factory, payload, label):
    tmp = tmp_path_factory.mktemp("rt")
    w = init_workspace(_manifest(tmp), tmp / "ws", manifest_base=tmp)
    if label in (".", ".."):
        return
    first = w.record_artifact(Stage.Evaluate, 0, payload, label)
    second = w.record_artifact(Stage.Evaluate, 0, payload[::-1], label)
    assert first != second
    assert w.read_artifact(first) == payload
    assert w.read_artifact(second) == payload[::-1]


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.sampled_from(["a", "b", "c"]),
                       st.dictionaries(st.sampled_from(list(Stage)), st.sampled_from(list(Status)),
                                       max_size=3), max_size=3))
def test_stage_status_serialization(table):
    snap = StageStatus(submodules={k: v for k, v in table.items()})
    assert StageStatus.from_dict(snap.to_dict()) == snap


def test_run_record_round_trip():
    rec = RunRecord(2, Stage.TopVerify, Status.Exhausted, TOP, "full", 3, ["x"], 1.5)
    assert RunRecord.from_dict(rec.to_dict()) == rec
