"""Exception hierarchy.

``exit_code`` is what the command line returns when the error escapes a
subcommand: 2 for bad arguments or out-of-domain values, 3 for data problems,
1 for everything else.
"""


class GplabError(Exception):
    exit_code = 1


class ArgumentError(GplabError, ValueError):
    exit_code = 2


class DomainError(ArgumentError):
    pass


class ShapeError(ArgumentError):
    pass


class StructuralError(ShapeError):
    pass


class ResolutionError(ArgumentError):
    pass


class ConfigurationError(ArgumentError):
    pass


class InsufficientDataError(ArgumentError):
    pass


class SymmetryError(ArgumentError):
    pass


class InvalidInputError(ArgumentError):
    pass


class InfeasibleError(ArgumentError):
    pass


class DataError(GplabError):
    exit_code = 3


class FormatError(DataError):
    pass


class LengthMismatchError(FormatError):
    pass


class UnsupportedTypeError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class ExhaustionError(DataError):
    pass


class MissingDataError(DataError):
    pass


class NumericError(GplabError):
    pass


class NumericOverflowError(NumericError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ConditioningError(NumericError):
    pass


class KernelValidityError(NumericError):
    pass


class UsageError(GplabError):
    pass
