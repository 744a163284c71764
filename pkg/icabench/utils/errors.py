class IcaBenchError(Exception):
    """Root of every error raised by icabench."""


class InvalidDataError(IcaBenchError, ValueError):
    """Input matrix has the wrong shape or contains non-finite entries."""


class RankDeficiencyError(IcaBenchError, ValueError):
    """
    The empirical covariance is numerically singular.

    Attributes:
        n_degenerate (int): Number of covariance eigenvalues below the relative threshold.
    """

    def __init__(self, message: str, n_degenerate: int):
        super().__init__(message)
        self.n_degenerate = n_degenerate


class NonFiniteLossError(IcaBenchError, ValueError):
    """The loss cannot be evaluated (singular unmixing matrix or overflow)."""


class OracleSizeError(IcaBenchError, ValueError):
    """The dense Hessian was requested for a problem above the size cap."""


class SingularPreconditionerError(IcaBenchError, ArithmeticError):
    """A block of the Hessian approximation is singular (regularization missing)."""


class SolverDivergedError(IcaBenchError, ArithmeticError):
    """
    A solver produced a non-finite state.

    Attributes:
        trace: The ConvergenceTrace recorded up to the failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class SamplerStallError(IcaBenchError, RuntimeError):
    """A rejection sampler needed far more proposals than expected."""


class MatrixFormatError(IcaBenchError, ValueError):
    """
    A data file is malformed.

    Attributes:
        line (int | None): 1-based line of the problem (CSV files).
        offset (int | None): Byte offset of the problem (binary files).
    """

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        super().__init__(message)
        self.line = line
        self.offset = offset


class InvalidConfigError(IcaBenchError, ValueError):
    """A configuration value violates its invariants."""
