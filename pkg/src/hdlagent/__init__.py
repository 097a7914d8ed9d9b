"""Agentic C-to-HDL translation with decomposition, retrieval-guided syntax repair
and differential functional verification against an HLS golden reference."""

__version__ = "0.1.0"

from .decomposer import DecompositionPlan, propose_decomposition, reintegrate_and_check
from .diffverify import MismatchLog, compare_traces
from .gateway import Gateway, ProviderConfig, ScriptedMock
from .integrator import backward_slice, build_instance_graph, locate_fault
from .metrics import compute_pass_rate, compute_reduction, emit_report
from .rag import RuleLibrary, cosine_similarity, embed_text, retrieve_rule
from .workspace import ProjectManifest, Stage, Status, Workspace, init_workspace

__all__ = [
    "DecompositionPlan", "propose_decomposition", "reintegrate_and_check", "MismatchLog",
    "compare_traces", "Gateway", "ProviderConfig", "ScriptedMock", "backward_slice",
    "build_instance_graph", "locate_fault", "compute_pass_rate", "compute_reduction",
    "emit_report", "RuleLibrary", "cosine_similarity", "embed_text", "retrieve_rule",
    "ProjectManifest", "Stage", "Status", "Workspace", "init_workspace", "__version__",
]
