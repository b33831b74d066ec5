"""Exception types shared across the package.

Each class carries a short ``category`` string so the command line can emit a
one-line machine-parsable failure of the form ``error: <category>: <message>``.
"""


class MonetError(Exception):
    category = "internal"


class ConfigError(MonetError):
    category = "config"


class DataError(MonetError):
    category = "data"


class ParseError(DataError):
    """Malformed interaction file; records the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class FeatureFileError(DataError):
    category = "features"


class GraphError(MonetError):
    category = "graph"


class CheckpointError(MonetError):
    category = "checkpoint"


class TrainingError(MonetError):
    category = "training"


class EvaluationError(MonetError):
    category = "evaluation"
