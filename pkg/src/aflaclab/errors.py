"""Exception types shared across the package."""


class AflacLabError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(AflacLabError):
    pass


class DisconnectedGraphError(AflacLabError):
    pass


class NonFiniteGradientError(AflacLabError):
    pass


class BadMagicError(AflacLabError):
    pass


class TruncatedFileError(AflacLabError):
    pass


class InsufficientDataError(AflacLabError):
    pass


class UnknownDomainError(AflacLabError):
    pass


class EmptyInputError(AflacLabError):
    pass


class NotNormalizedError(AflacLabError):
    pass


class SupportMismatchError(AflacLabError):
    pass


class ZeroCountClassError(AflacLabError):
    pass


class CapExceededError(AflacLabError):
    pass


class PreconditionError(AflacLabError):
    pass


class MissingAlignmentTargetError(AflacLabError):
    pass


class LabelRangeError(AflacLabError):
    pass


class EmptyGroupError(AflacLabError):
    pass
