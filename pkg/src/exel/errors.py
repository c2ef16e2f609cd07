"""Exception hierarchy shared across the package."""


class ExelError(Exception):
    """Base class for all package errors."""


class PartitionError(ExelError):
    """A node partition is not a valid m-partition of ``{0..n-1}``."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class OverlapError(PartitionError):
    pass


class CoverageError(PartitionError):
    pass


class EmptyGroupError(PartitionError):
    pass


class DimensionMismatch(ExelError, ValueError):
    pass


class SchemaError(ExelError):
    """Malformed JSON artifact; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConsistencyError(SchemaError):
    pass


class MissingFile(ExelError, FileNotFoundError):
    pass


class MalformedLine(ExelError):
    def __init__(self, filename, lineno, text):
        super().__init__(f"{filename}:{lineno}: cannot parse {text!r}")
        self.filename = filename
        self.lineno = lineno


class DanglingEdge(ExelError):
    pass


class NonFiniteLoss(ExelError):
    def __init__(self, epoch, trace):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.trace = list(trace)


class NotConverged(ExelError):
    def __init__(self, solution):
        super().__init__(
            f"solver stopped after {solution.sweeps} sweeps with KKT residual "
            f"{solution.kkt_residual:.3e}"
        )
        self.solution = solution


class TooFewRows(ExelError, ValueError):
    pass


class TooManyGroups(ExelError, ValueError):
    pass


class MissingNodeSet(ExelError, KeyError):
    pass


class DegenerateLabels(ExelError, ValueError):
    pass
