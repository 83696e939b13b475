"""
Exception hierarchy for apdsync.
"""


class ApdSyncError(Exception):
    """Base class for every error raised by apdsync."""


class ConfigError(ApdSyncError, ValueError):
    """Configuration could not be validated."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(ApdSyncError, ArithmeticError):
    """A simulation produced or met a value it cannot continue from."""


class IntegrationError(NumericalError):
    def __init__(self, message, t=None):
        self.t = t
        if t is not None:
            message = f"{message} at t={t!r}"
        super().__init__(message)


class StiffnessError(IntegrationError):
    def __init__(self, t, dt, dt_min):
        self.dt = dt
        self.dt_min = dt_min
        super().__init__(f"step size {dt:.3e} fell below dt_min={dt_min:.3e}", t=t)


class UnphysicalFrequencyError(NumericalError):
    pass


class UnphysicalMomentError(NumericalError):
    pass


class BelowVacuumError(UnphysicalMomentError):
    pass


class RangeError(ApdSyncError, IndexError):
    pass


class LengthError(ApdSyncError, ValueError):
    pass


class AlignmentError(ApdSyncError, ValueError):
    pass


class AggregationError(ApdSyncError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
