"""On-disk project layout, manifest, artifact store and stage-progress records.

Every pipeline stage writes through a :class:`Workspace`, which makes runs
resumable and keeps every attempt (prompts, HDL, dumps, logs) addressable.
Layout under the workspace root::

    project.manifest          YAML manifest
    src/                      copies of the input C program and testbench
    submodules/<round>/...    decomposition plan and per-submodule C + specs
    golden/<round>/...        HLS golden HDL and translated testbenches
    dut/<round>/...           generated HDL, adapted testbenches, approval markers
    dumps/<round>/...         canonical traces
    logs/<stage>/<round>/...  append-only artifact store, stage status files
    reports/                  summary reports

``<round>`` is ``<mode>-<index>`` (e.g. ``full-0``); rounds never share files.
"""
from __future__ import annotations

import enum
import json
import os
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .errors import ArtifactIOError, OrderingError, SetupError, ValidationError

MANIFEST_NAME = "project.manifest"
SKELETON = ("src", "submodules", "golden", "dut", "dumps", "logs", "reports")
TOP = "TOP"
DEFAULT_LIMIT = 3


class Stage(str, enum.Enum):
    Decompose = "Decompose"
    GenerateHdl = "GenerateHdl"
    SyntaxRepair = "SyntaxRepair"
    SubmoduleVerify = "SubmoduleVerify"
    Integrate = "Integrate"
    TopVerify = "TopVerify"
    Evaluate = "Evaluate"

    @property
    def order(self) -> int:
        return list(Stage).index(self)


class Status(str, enum.Enum):
    Pending = "Pending"
    Pass = "Pass"
    Fail = "Fail"
    Exhausted = "Exhausted"


SUBMODULE_STAGES = (Stage.GenerateHdl, Stage.SyntaxRepair, Stage.SubmoduleVerify)
# which manifest limit bounds attempts_used for a stage
STAGE_LIMIT_KEY = {
    Stage.SyntaxRepair: "syntax_repair",
    Stage.SubmoduleVerify: "functional_repair",
    Stage.TopVerify: "integration_repair",
}


@dataclass(frozen=True)
class Round:
    index: int
    mode: str = "full"

    @property
    def tag(self) -> str:
        return f"{self.mode}-{self.index}"

    @classmethod
    def parse(cls, tag: str) -> "Round":
        mode, _, idx = tag.rpartition("-")
        return cls(int(idx), mode)


def as_round(r) -> Round:
    return r if isinstance(r, Round) else Round(int(r))


def _default_limits():
    return {"syntax_repair": DEFAULT_LIMIT, "functional_repair": DEFAULT_LIMIT,
            "integration_repair": DEFAULT_LIMIT}


@dataclass
class ProjectManifest:
    project_name: str
    c_source_path: str
    c_testbench_path: str
    clock_period: float = 10.0
    iteration_limits: dict = field(default_factory=_default_limits)
    repetitions_n: int = 16
    submodule_ids: list = field(default_factory=list)
    top_function: str = "top"
    top_return_port: str = "ap_return"
    nl_description_path: str | None = None
    manual_design_path: str | None = None

    def problems(self, base: Path | None = None, check_paths: bool = True) -> list[str]:
        out = []
        if not str(self.project_name).isidentifier():
            out.append(f"project_name: {self.project_name!r} is not an identifier")
        try:
            if not float(self.clock_period) > 0:
                out.append("clock_period: must be > 0")
        except (TypeError, ValueError):
            out.append("clock_period: not a number")
        limits = self.iteration_limits or {}
        for key in ("syntax_repair", "functional_repair", "integration_repair"):
            v = limits.get(key)
            if not isinstance(v, int) or v < 1:
                out.append(f"iteration_limits.{key}: must be an integer >= 1 (got {v!r})")
        if not isinstance(self.repetitions_n, int) or self.repetitions_n < 1:
            out.append(f"repetitions_n: must be an integer >= 1 (got {self.repetitions_n!r})")
        if len(set(self.submodule_ids)) != len(self.submodule_ids):
            out.append("submodule_ids: duplicate identifiers")
        if {"top", TOP} & set(self.submodule_ids):
            out.append("submodule_ids: 'top' is reserved for the top-level unit")
        if check_paths:
            base = base or Path.cwd()
            for name in ("c_source_path", "c_testbench_path", "nl_description_path",
                         "manual_design_path"):
                p = getattr(self, name)
                if p is not None and not (base / p).is_file():
                    out.append(f"{name}: {p} does not exist")
        return out

    def validate(self, base: Path | None = None, check_paths: bool = True) -> None:
        probs = self.problems(base, check_paths)
        if probs:
            raise ValidationError(probs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectManifest":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError([f"{k}: unknown manifest field" for k in sorted(unknown)])
        data = dict(data)
        limits = _default_limits()
        limits.update(data.get("iteration_limits") or {})
        data["iteration_limits"] = limits
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ProjectManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f) or {})


@dataclass
class RunRecord:
    round_index: int
    stage: Stage
    status: Status
    scope: str = TOP
    mode: str = "full"
    attempts_used: int = 0
    artifact_refs: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.value
        d["status"] = self.status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["stage"] = Stage(d["stage"])
        d["status"] = Status(d["status"])
        return cls(**d)


@dataclass
class StageStatus:
    """Per-round snapshot: scope (submodule id or TOP) -> stage -> status."""

    submodules: dict = field(default_factory=dict)
    top: dict = field(default_factory=dict)

    def scope(self, name: str) -> dict:
        if name == TOP:
            return self.top
        return self.submodules.setdefault(name, {})

    def get(self, name: str, stage: Stage) -> Status | None:
        table = self.top if name == TOP else self.submodules.get(name, {})
        return table.get(stage)

    def latest(self, name: str):
        table = self.top if name == TOP else self.submodules.get(name, {})
        if not table:
            return None, None
        stage = max(table, key=lambda s: s.order)
        return stage, table[stage]

    def submodule_passing(self, name: str) -> bool:
        return self.latest(name)[1] == Status.Pass

    def to_dict(self) -> dict:
        return {
            "submodules": {k: {s.value: v.value for s, v in t.items()}
                           for k, t in self.submodules.items()},
            "top": {s.value: v.value for s, v in self.top.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageStatus":
        return cls(
            submodules={k: {Stage(s): Status(v) for s, v in t.items()}
                        for k, t in d.get("submodules", {}).items()},
            top={Stage(s): Status(v) for s, v in d.get("top", {}).items()},
        )


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_label(label: str) -> None:
    if not label or label in (".", "..") or "/" in label or "\\" in label or "\0" in label:
        raise ValidationError(f"label: {label!r} must be a plain file name")


def init_workspace(manifest: ProjectManifest, root, force: bool = False,
                   manifest_base: Path | None = None) -> "Workspace":
    """Create the directory skeleton and persist the manifest.

    Input C files are copied into ``src/`` and the stored manifest points at
    the copies, so the workspace is self-contained.
    """
    root = Path(root)
    base = Path(manifest_base) if manifest_base else Path.cwd()
    manifest.validate(base)
    if (root / MANIFEST_NAME).exists() and not force:
        raise SetupError(f"{root} already holds a workspace (use force to re-initialize)")
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SetupError(f"cannot create {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise SetupError(f"{root} is not writable")

    for d in SKELETON:
        (root / d).mkdir(exist_ok=True)
    stored = ProjectManifest.from_dict(manifest.to_dict())
    for name in ("c_source_path", "c_testbench_path", "nl_description_path", "manual_design_path"):
        p = getattr(manifest, name)
        if p is None:
            continue
        src = base / p
        dst = root / "src" / Path(p).name
        shutil.copyfile(src, dst)
        setattr(stored, name, f"src/{dst.name}")
    atomic_write(root / MANIFEST_NAME,
                 yaml.safe_dump(stored.to_dict(), sort_keys=False).encode())
    return Workspace(root, stored)


class Workspace:
    """Handle over an initialized workspace directory."""

    def __init__(self, root, manifest: ProjectManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._lock = threading.RLock()

    @classmethod
    def open(cls, root) -> "Workspace":
        root = Path(root)
        mpath = root / MANIFEST_NAME
        if not mpath.is_file():
            raise SetupError(f"{root} is not a workspace (missing {MANIFEST_NAME})")
        manifest = ProjectManifest.load(mpath)
        manifest.validate(root)
        return cls(root, manifest)

    # -- paths --------------------------------------------------------------
    def resolve(self, rel) -> Path:
        return self.root / rel

    def rel(self, path) -> str:
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()

    def unit_dir(self, kind: str, rnd, *parts) -> Path:
        if kind not in SKELETON:
            raise ValueError(f"unknown workspace area {kind}")
        p = self.root / kind / as_round(rnd).tag
        for part in parts:
            p = p / part
        return p

    def read_text(self, rel) -> str:
        return self.resolve(rel).read_text(encoding="utf-8")

    def limit(self, key: str) -> int:
        return int(self.manifest.iteration_limits[key])

    # -- append-only artifact store ----------------------------------------
    def record_artifact(self, stage, round_index, payload: bytes, label: str,
                        scope: str | None = None) -> str:
        """Persist ``payload`` under ``logs/{stage}/{round}/[scope/]{label}``.

        Never overwrites: a repeated label is stored as ``label.2``, ``label.3``...
        """
        stage = Stage(stage)
        rnd = as_round(round_index)
        _check_label(label)
        if scope is not None:
            _check_label(scope)
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        d = self.root / "logs" / stage.value / rnd.tag
        if scope is not None:
            d = d / scope
        with self._lock:
            try:
                d.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ArtifactIOError(d, exc) from exc
            name, n = label, 1
            while True:
                target = d / name
                try:
                    with open(target, "xb") as f:
                        f.write(payload)
                    break
                except FileExistsError:
                    n += 1
                    name = f"{label}.{n}"
                except OSError as exc:
                    raise ArtifactIOError(target, exc) from exc
            rel = target.relative_to(self.root).as_posix()
            self._touch_record(rnd, stage, scope or TOP, rel)
        return rel

    def read_artifact(self, rel: str) -> bytes:
        return self.resolve(rel).read_bytes()

    def archive(self, stage, rnd, scope: str | None = None) -> "StageArchive":
        return StageArchive(self, Stage(stage), as_round(rnd), scope)

    # -- stage status and run records ---------------------------------------
    def _status_path(self, rnd: Round) -> Path:
        return self.root / "logs" / "status" / f"{rnd.tag}.json"

    def _load_state(self, rnd: Round):
        p = self._status_path(rnd)
        if not p.exists():
            return StageStatus(), []
        data = json.loads(p.read_text(encoding="utf-8"))
        return (StageStatus.from_dict(data["status"]),
                [RunRecord.from_dict(r) for r in data["records"]])

    def _save_state(self, rnd: Round, status: StageStatus, records) -> None:
        doc = {"round": rnd.tag, "status": status.to_dict(),
               "records": [r.to_dict() for r in records]}
        atomic_write(self._status_path(rnd), json.dumps(doc, indent=2).encode())

    def stage_status(self, rnd) -> StageStatus:
        with self._lock:
            return self._load_state(as_round(rnd))[0]

    def run_records(self, rnd) -> list[RunRecord]:
        with self._lock:
            return self._load_state(as_round(rnd))[1]

    def rounds(self) -> list[Round]:
        d = self.root / "logs" / "status"
        if not d.is_dir():
            return []
        out = [Round.parse(p.stem) for p in d.glob("*.json")]
        return sorted(out, key=lambda r: (r.mode, r.index))

    def _touch_record(self, rnd: Round, stage: Stage, scope: str, ref: str) -> None:
        status, records = self._load_state(rnd)
        for rec in reversed(records):
            if rec.stage == stage and rec.scope == scope:
                rec.artifact_refs.append(ref)
                break
        else:
            records.append(RunRecord(rnd.index, stage, Status.Pending, scope, rnd.mode,
                                     artifact_refs=[ref]))
        self._save_state(rnd, status, records)

    def advance_stage(self, rnd, scope: str, new_stage, status, attempts_used: int = 0,
                      wall_time: float = 0.0) -> StageStatus:
        """Move ``scope`` (a submodule id or ``TOP``) to ``new_stage`` with ``status``."""
        rnd = as_round(rnd)
        new_stage, status = Stage(new_stage), Status(status)
        with self._lock:
            snap, records = self._load_state(rnd)
            self._check_transition(snap, scope, new_stage)
            self._check_attempts(new_stage, status, attempts_used)
            snap.scope(scope)[new_stage] = status
            for rec in reversed(records):
                if rec.stage == new_stage and rec.scope == scope:
                    rec.status = status
                    rec.attempts_used = attempts_used
                    rec.wall_time = round(float(wall_time), 6)
                    break
            else:
                records.append(RunRecord(rnd.index, new_stage, status, scope, rnd.mode,
                                         attempts_used, [], round(float(wall_time), 6)))
            self._save_state(rnd, snap, records)
            return snap

    def _check_attempts(self, stage: Stage, status: Status, used: int) -> None:
        key = STAGE_LIMIT_KEY.get(stage)
        if key is None:
            return
        lim = self.limit(key)
        if used > lim:
            raise ValidationError(f"attempts_used {used} exceeds {key} limit {lim}")
        if status == Status.Exhausted and used != lim:
            raise ValidationError(f"Exhausted requires attempts_used == {lim}, got {used}")

    @staticmethod
    def _check_transition(snap: StageStatus, scope: str, stage: Stage) -> None:
        if scope != TOP and stage not in SUBMODULE_STAGES:
            raise OrderingError(f"{stage.value} is not a submodule stage ({scope})")
        if scope == TOP and stage == Stage.SubmoduleVerify:
            raise OrderingError("SubmoduleVerify applies to submodules, not TOP")
        cur_stage, cur_status = snap.latest(scope)
        if cur_stage is not None:
            if stage.order < cur_stage.order:
                raise OrderingError(
                    f"{scope}: cannot move back from {cur_stage.value} to {stage.value}")
            if stage.order > cur_stage.order and cur_status != Status.Pass:
                raise OrderingError(
                    f"{scope}: {cur_stage.value} is {cur_status.value}, cannot enter {stage.value}")
        if stage == Stage.SubmoduleVerify and snap.get(scope, Stage.SyntaxRepair) != Status.Pass:
            raise OrderingError(f"{scope}: SubmoduleVerify requires SyntaxRepair Pass")
        if scope == TOP and stage in (Stage.Integrate, Stage.TopVerify):
            for sid in snap.submodules:
                if not snap.submodule_passing(sid):
                    st, stt = snap.latest(sid)
                    raise OrderingError(
                        f"TOP cannot enter {stage.value}: submodule {sid} is "
                        f"{stt.value if stt else 'Pending'} at {st.value if st else 'start'}")


class StageArchive:
    """Bound (stage, round, scope) view onto :meth:`Workspace.record_artifact`."""

    def __init__(self, ws: Workspace | None, stage: Stage, rnd: Round, scope: str | None):
        self.ws, self.stage, self.round, self.scope = ws, stage, rnd, scope
        self.paths: list[str] = []

    def put(self, label: str, payload) -> str | None:
        if self.ws is None:
            return None
        rel = self.ws.record_artifact(self.stage, self.round, payload, label, self.scope)
        self.paths.append(rel)
        return rel


class NullArchive(StageArchive):
    def __init__(self):
        super().__init__(None, Stage.Decompose, Round(0), None)


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
