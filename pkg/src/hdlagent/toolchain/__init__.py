from .adapters import (AdapterBinding, CompileResult, HlsResult, SimStatus, SynthReport,
                       Toolchain, ToolKind, c_key, check_c_syntax, content_key, file_key,
                       parse_synth_report, run_c_compile_and_exec, run_hdl_compile,
                       run_hls_synthesize, run_logic_synth, run_rtl_sim)
from .traces import (Dialect, PortDecl, PortTrace, Sample, format_hex, normalize_dump,
                     parse_trace_v1, serialize_trace)

__all__ = [
    "AdapterBinding", "CompileResult", "HlsResult", "SimStatus", "SynthReport", "Toolchain",
    "ToolKind", "c_key", "check_c_syntax", "content_key", "file_key", "parse_synth_report",
    "run_c_compile_and_exec", "run_hdl_compile", "run_hls_synthesize", "run_logic_synth",
    "run_rtl_sim", "Dialect", "PortDecl", "PortTrace", "Sample", "format_hex",
    "normalize_dump", "parse_trace_v1", "serialize_trace",
]
