"""Exception types shared across the package."""


class NavError(Exception):
    pass


class InvalidInput(NavError, ValueError):
    pass


class ParseError(NavError):
    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


class ValidationError(NavError):
    def __init__(self, field, message=""):
        super().__init__(f"{field}: {message}" if message else field)
        self.field = field


class Infeasible(NavError):
    """Refinement could not produce a verified trajectory."""


class ProtocolError(NavError):
    pass


class ConnectionLost(NavError):
    pass


class GenerationInfeasible(NavError):
    def __init__(self, index, message=""):
        super().__init__(f"scenario {index}: {message or 'sampling cap exhausted'}")
        self.index = index


class WriteError(NavError):
    def __init__(self, path, message=""):
        super().__init__(f"{path}: {message}" if message else str(path))
        self.path = path
