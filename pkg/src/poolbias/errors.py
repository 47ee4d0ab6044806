"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class InvalidAnchor(InvalidArgument):
    pass


class SynthesisError(RuntimeError):
    """Raised when a stochastic placement keeps failing verification."""


class ParseError(ValueError):
    """Malformed input file. ``location`` names the file/line/field at fault."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class TrainingError(RuntimeError):
    pass
