"""Exception hierarchy shared by every module."""


class FreqsemError(Exception):
    """Base class for all package errors."""


class ShapeError(FreqsemError, ValueError):
    """Tensor extents disagree with an operation's contract."""


class ConfigError(FreqsemError, ValueError):
    """A hyperparameter or parameter set is inconsistent."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(FreqsemError, ValueError):
    """A caller violated a non-shape precondition (e.g. non-scalar loss)."""


class IntegrityError(FreqsemError, ValueError):
    """Serialized weights do not match their manifest."""


class NumericError(FreqsemError, ArithmeticError):
    """Non-finite values appeared in a result."""
