"""Exception hierarchy shared by every module.

The CLI maps these onto distinct exit codes, so keep new errors under one
of the three families below.
"""


class BabyMambaError(Exception):
    """Base class for all package errors."""


class ConfigError(BabyMambaError, ValueError):
    """Invalid configuration, hyperparameter or contract violation."""


class ShapeError(ConfigError):
    """Tensor extents do not fit together."""


class ContractError(ConfigError):
    """A precondition of an operation was violated."""


class DataError(BabyMambaError):
    """Problem with input data or files."""


class SchemaError(DataError):
    """CSV or manifest does not follow the expected schema."""


class FormatError(DataError):
    """Serialized model file is malformed or from another version."""


class ProtocolError(DataError):
    """The requested split protocol cannot be applied to this data."""


class NumericError(BabyMambaError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class EvaluationError(NumericError):
    """A function evaluated to a non-finite value."""
