"""Exception hierarchy. Everything user-facing derives from TrafficSimError."""


class TrafficSimError(Exception):
    pass


class ParseError(TrafficSimError):
    """Malformed document: syntax errors or missing required fields.

    Carries the source path (when known) and a location hint.
    """

    def __init__(self, message, path=None, line=None, col=None):
        loc = ""
        if path:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
            if col is not None:
                loc += f":{col}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line
        self.col = col


class SemanticError(TrafficSimError):
    """Structurally well-formed document with broken cross-references or values."""


class ConfigError(TrafficSimError):
    """Bad engine configuration."""


class RouteError(TrafficSimError):
    """Disconnected or unknown route."""


class ContractViolation(TrafficSimError):
    """An operation was called outside its preconditions."""


class InvariantViolation(TrafficSimError):
    """Internal state check failed; the engine halts rather than corrupt silently."""
