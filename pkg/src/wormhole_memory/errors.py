"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class WMMError(Exception):
    exit_code = 3


class ContractViolation(WMMError, ValueError):
    """Caller broke a precondition (dimension mismatch, out-of-range parameter)."""

    exit_code = 1


class ValidationError(WMMError, ValueError):
    exit_code = 1


class ConfigurationError(WMMError, ValueError):
    exit_code = 1


class FormatError(WMMError):
    """Malformed input file. ``line`` is 1-based when known."""

    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StoreVersionError(FormatError):
    pass


class UnknownSession(WMMError, KeyError):
    exit_code = 3

    def __init__(self, session_id, line=None):
        super().__init__(session_id)
        self.session_id = session_id
        self.line = line

    def __str__(self):
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}unknown session: {self.session_id!r}"


class NoCandidates(WMMError, LookupError):
    exit_code = 3
