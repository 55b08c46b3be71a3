"""Exception hierarchy.

Every domain error derives from :class:`ClusterFaceError` so callers (and the
CLI) can separate domain failures from programming errors.
"""


class ClusterFaceError(Exception):
    pass


class ZeroVectorError(ClusterFaceError, ValueError):
    pass


class EmptyInputError(ClusterFaceError, ValueError):
    pass


class DimensionMismatchError(ClusterFaceError, ValueError):
    pass


class ShapeMismatchError(ClusterFaceError, ValueError):
    pass


class TapeMismatchError(ClusterFaceError, ValueError):
    pass


class NonUnitFeatureError(ClusterFaceError, ValueError):
    pass


class EmptyClassError(ClusterFaceError, KeyError):
    pass


class UninitializedCenterError(ClusterFaceError, KeyError):
    pass


class RequiredClassUninitializedError(ClusterFaceError, KeyError):
    pass


class InvalidLabelError(ClusterFaceError, ValueError):
    pass


class OutOfRangeError(ClusterFaceError, ValueError):
    pass


class MissingPositiveCenterError(ClusterFaceError, ValueError):
    pass


class DegenerateTemperatureError(ClusterFaceError, ValueError):
    pass


class MissingClassMeanError(ClusterFaceError, KeyError):
    pass


class LengthMismatchError(ClusterFaceError, ValueError):
    pass


class NonDeterministicLossError(ClusterFaceError, RuntimeError):
    pass


class ConfigInvalidError(ClusterFaceError, ValueError):
    pass


class DatasetTooSmallError(ClusterFaceError, ValueError):
    pass


class UnknownSettingError(ClusterFaceError, ValueError):
    pass


class InvalidKError(ClusterFaceError, ValueError):
    pass


class InvalidParamsError(ClusterFaceError, ValueError):
    pass


class NoPositivePairsError(ClusterFaceError, ValueError):
    pass


class NoNegativePairsError(ClusterFaceError, ValueError):
    pass


class InsufficientDataError(ClusterFaceError, ValueError):
    pass


class InvalidSpecError(ClusterFaceError, ValueError):
    pass


class FormatError(ClusterFaceError, ValueError):
    pass


class ClassTooSmallError(ClusterFaceError, ValueError):
    pass
