"""Exception hierarchy shared by every subpackage."""


class PanlangError(Exception):
    """Base class for all errors raised by panlang."""


class ParameterError(PanlangError, ValueError):
    """An argument is outside its admissible range."""


class DimensionError(PanlangError, ValueError):
    """Array shapes are incompatible."""


class SizeError(PanlangError, ValueError):
    """An image or output is too small for the requested operation."""


class DegenerateInputError(PanlangError, ValueError):
    """Input makes the result undefined (zero vector, empty batch, flat band)."""


class ContractError(PanlangError, RuntimeError):
    """A caller violated a documented precondition."""


class VocabularyError(PanlangError, KeyError):
    """A token is not part of the fixed prompt vocabulary."""


class DivergenceError(PanlangError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_good`` holds the parameters from the last finite step, when known.
    """

    def __init__(self, message, iteration=None, last_good=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good = last_good


class FormatError(PanlangError, ValueError):
    """A binary file does not follow its container layout."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TruncationError(FormatError):
    """The payload is shorter than the header declares."""


class ConfigError(PanlangError, ValueError):
    """Run configuration failed schema validation."""


class DependencyError(PanlangError, RuntimeError):
    """A required upstream artifact (checkpoint, dataset) is missing."""
