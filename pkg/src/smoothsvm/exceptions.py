"""Exception hierarchy shared by all modules."""


class SmoothSVMError(Exception):
    """Base class. ``stage`` is filled in by the pipelines when an error
    crosses a stage boundary (``"lasso"``, ``"clime"``, ...)."""

    stage = None

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class InvalidArgumentError(SmoothSVMError, ValueError):
    pass


class DimensionError(InvalidArgumentError):
    pass


class ConvergenceError(SmoothSVMError):
    """Raised when the solver exhausts ``max_iter``.

    The best iterate seen so far and its KKT residual are attached so the
    caller can decide whether it is usable.
    """

    def __init__(self, msg, beta=None, kkt_residual=None, iterations=None):
        super().__init__(msg)
        self.beta = beta
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class NumericalError(SmoothSVMError):
    pass


class InfeasibleError(SmoothSVMError):
    def __init__(self, msg, column=None, min_delta=None):
        super().__init__(msg)
        self.column = column
        self.min_delta = min_delta


class StateFormatError(SmoothSVMError):
    pass


class VersionMismatchError(StateFormatError):
    pass


class TruncationError(StateFormatError):
    pass


class ChecksumError(StateFormatError):
    pass


class ParseError(SmoothSVMError, ValueError):
    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class staged:
    """Context manager tagging escaping library errors with a stage label."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, SmoothSVMError) and exc.stage is None:
            exc.stage = self.name
        return False
