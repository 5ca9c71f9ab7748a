class ConfigurationError(ValueError):
    """Exception raised for an invalid run or distribution configuration."""

    pass


class UsageError(ConfigurationError):
    """Exception raised for an unknown or malformed command-line option."""

    pass


class DomainError(ValueError):
    """Exception raised when a geometric or numeric precondition fails."""

    pass


class ProtocolError(RuntimeError):
    """Exception raised for a malformed or duplicated LET message."""

    pass


class InsufficientLETError(RuntimeError):
    """Exception raised when a traversal needs remote data that was never exported."""

    pass


class CoverageError(AssertionError):
    """Exception raised when a source influence is covered twice or not at all."""

    pass


class InfeasibleRunError(RuntimeError):
    """Exception raised when a run exceeds the desk-scale size guard."""

    pass


class SimulationError(RuntimeError):
    """
    Exception raised when the simulated runtime cannot make progress.

    :param message: Description of the failure.
    :type message: str
    :param dump: Per-rank state lines captured at the time of failure.
    :type dump: list
    """

    def __init__(self, message, dump=None):
        self.dump = list(dump or [])
        details = "\n".join(self.dump)
        super().__init__(f"{message}\n{details}" if details else message)
