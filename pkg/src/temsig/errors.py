"""Exception and warning types shared across the toolkit."""


class TemsigError(Exception):
    """Base class for every error raised by temsig."""


class ValidationError(TemsigError, ValueError):
    """Input violates a documented precondition."""


# io
class MalformedHeader(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonFiniteData(ValidationError):
    pass


class IoFailure(TemsigError, OSError):
    pass


class RaggedColumns(ValidationError):
    pass


class DegenerateRangeWarning(UserWarning):
    pass


# synth
class FrontExceedsFrameWarning(UserWarning):
    pass


class SpotOutsideImage(ValidationError):
    pass


class SupportTooLarge(ValidationError):
    pass


class DiskOutsideImage(ValidationError):
    pass


class DiskOverlapWarning(UserWarning):
    pass


# denoise
class TooFewPoints(ValidationError):
    pass


class SingularSystem(TemsigError, ArithmeticError):
    pass


class LengthMismatch(ValidationError):
    pass


# segment
class TooFewFrames(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


# polar
class NoEdges(ValidationError):
    pass


class CenterOutsideImage(ValidationError):
    pass


class BandOutsideRange(ValidationError):
    pass


# detect
class CalibrationDiverged(TemsigError, RuntimeError):
    pass


class CensoringWarning(UserWarning):
    pass


# nbed
class RadiusTooLarge(ValidationError):
    pass


class TooFewPeaks(TemsigError, RuntimeError):
    pass


class DegenerateGeometry(ValidationError):
    pass


class NonPositiveDeterminant(ValidationError):
    pass


class PeakOnBorderWarning(UserWarning):
    pass


# cli
class StageTypeMismatch(ValidationError):
    pass
