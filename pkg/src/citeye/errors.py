"""Exception hierarchy shared by every stage of the pipeline."""


class CiteyeError(Exception):
    """Base class for all pipeline errors."""


class InputValidationError(CiteyeError, ValueError):
    """Malformed input file. ``line`` is the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingColumn(InputValidationError):
    pass


class NonMonotonicTime(InputValidationError):
    pass


class OverlappingTrials(InputValidationError):
    pass


class UnknownLabel(InputValidationError):
    pass


class TooFewSamples(CiteyeError, ValueError):
    pass


class InsufficientSupport(CiteyeError, ValueError):
    pass


class EmptyBaseline(CiteyeError, ValueError):
    pass


class SingleClassTrain(CiteyeError, ValueError):
    pass


class EmptyMatrix(CiteyeError, ValueError):
    pass


class SchemaMismatch(CiteyeError, ValueError):
    pass


class LengthMismatch(CiteyeError, ValueError):
    pass


class MissingCoverStats(CiteyeError, ValueError):
    pass


class TooManyFeatures(CiteyeError, ValueError):
    pass


class EmptyTestSet(CiteyeError, ValueError):
    pass


class TooFewParticipants(CiteyeError, ValueError):
    pass


class EmptyDataset(CiteyeError, ValueError):
    pass


class InvalidSpec(CiteyeError, ValueError):
    pass
