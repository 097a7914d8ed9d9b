"""Exception hierarchy shared by every stage of the agent."""


class HdlAgentError(Exception):
    """Base class for all errors raised by hdlagent."""


# workspace
class SetupError(HdlAgentError):
    pass


class ValidationError(HdlAgentError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class OrderingError(HdlAgentError):
    pass


class ArtifactIOError(HdlAgentError):
    def __init__(self, path, cause):
        self.path = path
        super().__init__(f"{path}: {cause}")


class GateStateError(HdlAgentError):
    pass


# llm gateway
class TemplateError(HdlAgentError):
    pass


class TransportError(HdlAgentError):
    """A single failed transport attempt (retryable)."""


class TransportTimeout(TransportError):
    pass


class ProviderError(HdlAgentError):
    def __init__(self, message, last_failure=None, attempts=0):
        self.last_failure = last_failure
        self.attempts = attempts
        super().__init__(message)


class ProviderTimeoutError(ProviderError):
    pass


class ScriptedMockError(ProviderError):
    pass


class ExtractionError(HdlAgentError):
    pass


# decomposition / generation
class DecompositionError(HdlAgentError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("decomposition rejected: " + "; ".join(self.violations))


class SpecError(HdlAgentError):
    pass


class GenerationError(HdlAgentError):
    pass


class AdaptationError(HdlAgentError):
    pass


# toolchain
class ToolEnvironmentError(HdlAgentError):
    """A required external tool or binding is missing. Never consumes a repair attempt."""


class MockMissError(ToolEnvironmentError):
    def __init__(self, key, where=""):
        self.key = key
        super().__init__(f"mock fixture miss for key {key}" + (f" in {where}" if where else ""))


class BuildError(HdlAgentError):
    def __init__(self, message, log=""):
        self.log = log
        super().__init__(message)


class ExecutionError(HdlAgentError):
    def __init__(self, message, exit_code=None, log=""):
        self.exit_code = exit_code
        self.log = log
        super().__init__(message)


class SynthesisError(HdlAgentError):
    def __init__(self, message, log=""):
        self.log = log
        super().__init__(message)


class SimError(HdlAgentError):
    def __init__(self, message, log=""):
        self.log = log
        super().__init__(message)


class SimTimeoutError(SimError):
    def __init__(self, message, partial_dump=None, log=""):
        self.partial_dump = partial_dump
        super().__init__(message, log)


class TraceParseError(HdlAgentError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no is not None else message)


class TraceSchemaError(TraceParseError):
    pass


# retrieval
class EmbeddingError(HdlAgentError):
    pass


class ShapeError(HdlAgentError):
    pass


class DegenerateInputError(HdlAgentError):
    pass


class RetrievalError(HdlAgentError):
    pass


# differential verification / integration
class InterfaceError(HdlAgentError):
    def __init__(self, differences):
        self.differences = list(differences)
        super().__init__("trace headers differ: " + "; ".join(self.differences))


class CoverageError(HdlAgentError):
    def __init__(self, message, missing=()):
        self.missing = list(missing)
        super().__init__(message)


class IntegrationStructureError(HdlAgentError):
    def __init__(self, defects):
        self.defects = list(defects)
        super().__init__("; ".join(self.defects))


class InstrumentationError(HdlAgentError):
    pass


class StimulusInconsistencyError(HdlAgentError):
    pass


# metrics
class StatsError(HdlAgentError):
    pass


class ComparabilityError(HdlAgentError):
    pass


class PreconditionError(HdlAgentError):
    pass
