"""Exception types raised across the package.

Every error carries a short category (the class name) so the command line
driver can print one machine-parsable line on failure.
"""


class RMEError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def category(self) -> str:
        return type(self).__name__


class MalformedLine(RMEError):
    def __init__(self, line_no: int, detail: str = "", path: str | None = None):
        self.line_no = line_no
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {detail}" if detail else where)


class EmptyFile(RMEError):
    pass


class AllFiltered(RMEError):
    pass


class MissingTimestamps(RMEError):
    pass


class UndefinedPair(RMEError):
    pass


class DimensionMismatch(RMEError):
    pass


class SingularSystem(RMEError):
    pass


class NonFiniteObjective(RMEError):
    def __init__(self, sweep: int, value: float):
        self.sweep = sweep
        self.value = value
        super().__init__(f"objective became {value} at sweep {sweep}")


class NoCandidates(RMEError):
    pass


class NoTestUsers(RMEError):
    pass


class InsufficientFolds(RMEError):
    pass


class ConfigError(RMEError):
    pass


class ModelFormatError(RMEError):
    pass


class EmptyRelevant(RMEError):
    pass


class MissingArtifact(RMEError):
    pass
