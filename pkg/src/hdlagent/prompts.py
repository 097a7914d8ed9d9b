"""Prompt scaffolds. Every prompt opens with a ``[task:...]`` tag and the unit it
concerns, which is also what scripted mock records match on."""
from .gateway import PromptTemplate

DECOMPOSE = PromptTemplate("decompose", """\
[task:decompose] Project: {project}
Decompose the C/C++ program below into submodules for hardware generation.
Rules:
(1) Function-level granularity: split only along existing function boundaries, never by lines.
(2) Explicit I/O: every port is a fixed-width scalar or a static array, with its bit width stated.
    No pointers, no unsized arrays.
(3) Single, clear semantics: each submodule performs exactly one operation.
Each submodule source must define exactly one non-static entry function (helpers must be static).
The top glue re-implements `{top_function}` by calling the submodules in dependency order.
Return one ```json fence holding an object with keys "submodules", "top_glue" and
"dataflow_edges". A submodule is {{"id", "entry_function", "call_order_index", "c_source",
"interface": {{"ports": [{{"name", "direction", "width_bits", "array_len"}}],
"semantics_summary"}}}}; an edge is [producer_id, port, consumer_id, port].
{violations}
Program:
```c
{c_source}
```
""")

SPECS = PromptTemplate("specs", """\
[task:specs] Submodule: {submodule_id}
Write two specification files for the C function below.
1. Functional specification: the behaviour and the expected hardware behaviour. Mention every
   port by name.
2. Interface definition: one line per C parameter (and the return value):
   `<c_param> <hdl_port> <in|out> <width_bits>`
Return the functional specification in a ```markdown fence and the interface definition in an
```interface fence.
Interface contract:
{contract}
{reminder}
C source:
```c
{c_source}
```
""")

GENERATE_HDL = PromptTemplate("generate_hdl", """\
[task:hdl] Submodule: {submodule_id}
Generate a synthesizable Verilog-2001 module named `{submodule_id}` that implements the C
function below.
## C source
```c
{c_source}
```
## Functional specification
{functional_spec}
## Interface definition
{interface_definition}
## Design and formatting constraints
{constraints}
{reminder}
""")

ADAPT_TESTBENCH = PromptTemplate("adapt_testbench", """\
[task:testbench] Submodule: {submodule_id}
Translate the C testbench into a Verilog testbench for module `{module}`, instantiated as `dut`.
Trace protocol (mandatory):
- open the trace with `trace_fd = $fopen("trace.txt", "w");` and count completed output
  transactions in `trace_idx`, starting at 0;
- before the first sample declare every output port, marked by a `// @trace-header` comment:
  `$fwrite(trace_fd, "#port <port> <width>\\n");`
- after each completed output transaction write every output port, marked by a
  `// @trace-sample` comment: `$fwrite(trace_fd, "%0d <port> %h\\n", trace_idx, <port>);`
- drive every input port with the C testbench's stimuli.
Ports:
{ports}
Return the testbench in a ```verilog fence.
{reminder}
C testbench:
```c
{c_testbench}
```
""")

SYNTAX_REPAIR = PromptTemplate("syntax_repair", """\
[task:syntax-repair] Submodule: {submodule_id} Attempt: {attempt}
The Verilog below fails to compile.
## Compiler log
{error_log}
## Repair rule ({rule_id}, similarity {similarity})
{repair_rule}
## Current code
```verilog
{code}
```
Apply the rule, fix every reported error, and return the complete corrected code in one
```verilog fence.
""")

FUNCTIONAL_REPAIR = PromptTemplate("functional_repair", """\
[task:functional-repair] Unit: {unit} Iteration: {iteration}
The design under test disagrees with the golden reference under identical stimuli.
## Intended behaviour (C reference)
```c
{c_reference}
```
## Current DUT code
```verilog
{dut_code}
```
## Mismatch log
{summary}
{entries}
{hints}{localization}
## Reason step by step
{stages}
Return the complete corrected design in one ```verilog fence.
""")

TOP_LEVEL = PromptTemplate("top_level", """\
[task:top] Project: {project}
Write the top-level Verilog-2001 module `{top_module}` implementing the C program below by
instantiating the verified submodules with named port connections (`.port(signal)`).
Map every function call to an instance and every variable transfer to a wire; keep the
interface contracts and data dependencies intact.
## Original C program
```c
{c_source}
```
## Top-level ports
{top_ports}
## Verified submodules
{submodules}
{reminder}
Return only the top module in one ```verilog fence.
""")

REASONING_STAGES = (
    ("functional_understanding",
     "Functional understanding: analyse the C reference and summarise the intended behaviour."),
    ("behavior_difference_analysis",
     "Behaviour and difference analysis: review the HDL against that behaviour and correlate "
     "each mismatch with the code that produces it."),
    ("root_cause",
     "Root cause: explain why the simulation outputs differ."),
    ("fix",
     "Fix: change only what the root cause requires and keep the interface unchanged."),
)

DESIGN_CONSTRAINTS = (
    "Separate control logic from the datapath.",
    "Use synchronous, active-high reset (`rst`) sampled on the rising edge of `clk`.",
)
OPTIMIZATION_HINTS = (
    "Insert pipeline stages on long arithmetic paths where latency allows.",
)
FENCE_RULE = "Enclose the complete HDL between triple backticks tagged verilog (```verilog ... ```)."
FENCE_REMINDER = ("REMINDER: your previous answer had no usable code fence. Put the complete code "
                  "between ```verilog and ``` lines.")
