"""Exception hierarchy shared across the package.

Everything user-facing derives from StatarkError so the CLI can map domain
failures to exit code 1 and keep 2 for genuine bugs.
"""


class StatarkError(Exception):
    """Base class for all statark domain errors."""


class ParseError(StatarkError):
    """Malformed or structurally invalid model XML."""


class GraphError(StatarkError):
    """Graph-level violation (cycles, broken references)."""


class WeightsError(StatarkError):
    """Weight blob or container problems: bad windows, missing tensors."""


class ShapeError(StatarkError):
    """Kernel-level shape or dtype contract violation."""


class CompileError(StatarkError):
    """Graph rejected at compile time (shape violations, unresolved consts)."""


class InferError(StatarkError):
    """Bad inputs to a compiled model (names, shapes)."""


class BuildError(StatarkError):
    """Invalid model configuration or chunk plan."""


class PipelineError(StatarkError):
    """Generation-level misuse (bad prompts, sampling params)."""


class ContextExhaustedError(PipelineError):
    """The session has used all max_seq_len cache rows."""
