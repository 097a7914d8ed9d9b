"""Command-line entry point (``hdlagent``)."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import HdlAgentError, SetupError, ToolEnvironmentError
from .metrics import emit_report
from .pipeline import BaselineMode, approve_testbench, load_config, run_pipeline
from .rag import DEFAULT_LIBRARY, RuleTemplate, add_rule
from .workspace import ProjectManifest, Stage, Workspace, init_workspace

STAGE_COMMANDS = {
    "decompose": Stage.Decompose,
    "generate": Stage.GenerateHdl,
    "repair": Stage.SyntaxRepair,
    "verify": Stage.SubmoduleVerify,
    "integrate": Stage.TopVerify,
    "evaluate": Stage.Evaluate,
    "run": Stage.Evaluate,
}


def _pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workspace", "-w", required=True, type=Path)
    p.add_argument("--config", "-c", required=True, type=Path,
                   help="YAML file with provider, tool bindings and options")
    p.add_argument("--mode", choices=[m.value for m in BaselineMode])
    p.add_argument("--rounds", type=int, help="override repetitions_n")
    p.add_argument("--parallel", type=int, help="submodules processed concurrently")
    p.add_argument("--auto-approve", action="store_true", default=None,
                   help="approve generated testbenches (mock bindings only)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdlagent",
                                 description="Translate a C program into verified Verilog.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a workspace from a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--workspace", "-w", required=True, type=Path)
    p.add_argument("--force", action="store_true")

    for name, stage in STAGE_COMMANDS.items():
        p = sub.add_parser(name, help=f"run all rounds up to {stage.value}")
        _pipeline_args(p)

    p = sub.add_parser("report", help="write reports/summary and summary.txt")
    p.add_argument("workspaces", nargs="+", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("approve-tb", help="approve or reject a generated testbench")
    p.add_argument("--workspace", "-w", required=True, type=Path)
    p.add_argument("--round", required=True, help="round tag such as full-0")
    p.add_argument("unit", help="submodule id, or 'top'")
    p.add_argument("decision", choices=["approve", "reject"])

    p = sub.add_parser("rules", help="manage the repair rule library")
    rs = p.add_subparsers(dest="rules_command", required=True)
    a = rs.add_parser("add", help="append one rule")
    a.add_argument("--library", type=Path, default=DEFAULT_LIBRARY)
    a.add_argument("--id", required=True)
    a.add_argument("--exemplar", required=True, type=Path, help="file with an error log")
    a.add_argument("--rule", required=True, help="repair summary text")
    a.add_argument("--note", default="")
    return ap


def _run(args, stage: Stage) -> int:
    cfg = load_config(args.config, workspace=args.workspace, mode=args.mode,
                      rounds=args.rounds, parallel=args.parallel,
                      auto_approve=args.auto_approve)
    res = run_pipeline(cfg, upto=stage)
    if res.message:
        print(res.message, file=sys.stderr)
    for r in res.rounds:
        state = "pass" if r.top_pass else ("pending" if r.pending else
                                           ("fail: " + r.failed if r.failed else "incomplete"))
        print(f"{r.round.tag}: {state}")
    if res.report:
        print(Path(res.report[0]).read_text(), end="")
    return res.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init":
            m = ProjectManifest.load(args.manifest)
            ws = init_workspace(m, args.workspace, args.force, args.manifest.parent)
            print(f"initialized {ws.root}")
            return 0
        if args.command in STAGE_COMMANDS:
            return _run(args, STAGE_COMMANDS[args.command])
        if args.command == "report":
            txt, _ = emit_report([Workspace.open(w) for w in args.workspaces], args.out)
            print(txt.read_text(), end="")
            return 0
        if args.command == "approve-tb":
            state = approve_testbench(Workspace.open(args.workspace), args.round, args.unit,
                                      args.decision)
            print(f"{args.round}/{args.unit}: {state}")
            return 0
        if args.command == "rules":
            tmpl = RuleTemplate(args.id, args.exemplar.read_text(), args.rule, args.note)
            add_rule(args.library, tmpl)
            print(f"added {args.id} to {args.library}")
            return 0
    except (ToolEnvironmentError, SetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HdlAgentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
