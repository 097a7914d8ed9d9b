import shutil
from pathlib import Path

import pytest

from hdlagent.workspace import ProjectManifest, init_workspace

ROOT = Path(__file__).resolve().parent.parent
MAC3 = ROOT / "benchmarks" / "mac3"
DATA = Path(__file__).resolve().parent / "data"

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def mac3_dir():
    return MAC3


@pytest.fixture
def mac3_ws(tmp_path):
    """Fresh workspace initialized from the committed mac3 manifest."""
    m = ProjectManifest.load(MAC3 / "project.manifest")
    return init_workspace(m, tmp_path / "ws", manifest_base=MAC3)


@pytest.fixture
def mac3_copy(tmp_path):
    """Private copy of the benchmark directory (scripts, fixtures, configs)."""
    dst = tmp_path / "mac3"
    shutil.copytree(MAC3, dst, ignore=shutil.ignore_patterns("__pycache__"))
    return dst


@pytest.fixture
def acceptance():
    def report(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})"
                                                                         if detail else ""))
        assert ok, f"{name}: {detail}"
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def load_fixture_builder():
    """Import benchmarks/mac3/make_fixtures.py as a module."""
    import importlib.util
    spec = importlib.util.spec_from_file_location("mac3_make_fixtures", MAC3 / "make_fixtures.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="session")
def mkfx():
    return load_fixture_builder()


def run_mac3(bench: Path, ws_root: Path, config: str = "config.full.yaml", **overrides):
    """Initialize a workspace from ``bench`` and run the pipeline to Evaluate."""
    from hdlagent.pipeline import load_config, run_pipeline
    m = ProjectManifest.load(bench / "project.manifest")
    init_workspace(m, ws_root, manifest_base=bench)
    cfg = load_config(bench / config, workspace=ws_root, **overrides)
    return run_pipeline(cfg)
