"""Shared exception types.

Builtin IndexError/KeyError are reused where they are the natural fit
(token ids, vector lookups); everything else gets a named class so tests
and callers can tell contract violations apart from numeric failures.
"""


class ContractError(ValueError):
    """A documented precondition or usage rule was violated."""


class DimensionError(ContractError):
    """Operand shapes do not line up; message carries both shapes."""


class NumericOverflowError(ArithmeticError):
    """A primitive produced a non-finite value; message names the primitive."""


class FormatError(ValueError):
    """Malformed external input (corpus line, token framing, vector file)."""


class SchemaError(ValueError):
    """A checkpoint or parameter map is missing expected entries."""


class UndefinedCorrelationError(ValueError):
    """Pearson r requested on a zero-variance series."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; message carries the failing step."""
