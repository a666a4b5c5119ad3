"""Exception types shared across the package."""


class CmdpError(Exception):
    """Base class for all errors raised by cmdp_accel."""


class InvalidCmdpError(CmdpError, ValueError):
    """A problem instance violates one of its structural invariants."""


class InvalidPolicyError(CmdpError, ValueError):
    """A policy matrix is malformed or not row-stochastic."""


class ConfigurationError(CmdpError, ValueError):
    """Solver parameters are out of range or mutually inconsistent."""


class SolverError(CmdpError, RuntimeError):
    """A numerical routine failed (singular system, NaN iterate, ...)."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
