"""Exception types raised for bad user input or bad data."""


class TrpfuseError(ValueError):
    """Base class for user/data errors (CLI exit code 1)."""


class AlignmentError(TrpfuseError):
    pass


class SchemaError(TrpfuseError):
    pass


class ValidationError(TrpfuseError):
    pass


class TrainingError(TrpfuseError):
    pass


class TransportError(TrpfuseError):
    """An LLM exchange failed; carries the decision point that failed."""

    def __init__(self, message, decision_index=None):
        super().__init__(message)
        self.decision_index = decision_index
