"""Exception types shared across the package."""


class SentDenoiseError(Exception):
    """Base class for every error raised by this package."""


class InvalidShapeError(SentDenoiseError, ValueError):
    pass


class InvalidParameterError(SentDenoiseError, ValueError):
    pass


class DegenerateBatchError(SentDenoiseError, ValueError):
    pass


class InvalidTokenError(SentDenoiseError, ValueError):
    pass


class EmptyInputError(SentDenoiseError, ValueError):
    pass


class EmptySentenceError(SentDenoiseError, ValueError):
    pass


class NonFiniteError(SentDenoiseError, FloatingPointError):
    pass


class ContractViolation(SentDenoiseError, RuntimeError):
    pass


class UndefinedSimilarityError(SentDenoiseError, ValueError):
    pass


class UndefinedCorrelationError(SentDenoiseError, ValueError):
    pass


class IncompatibleCheckpointError(SentDenoiseError, ValueError):
    pass


class FormatError(SentDenoiseError, ValueError):
    """A data file line could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
