"""Exception hierarchy shared across the package."""


class StereoGazeError(Exception):
    """Base class for all package errors."""


# geometry
class GeometryError(StereoGazeError, ValueError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class PlaneBehindRay(GeometryError):
    pass


class RaysParallel(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class TargetBehindEyes(GeometryError):
    pass


# landmarks / features
class DegenerateLandmarks(StereoGazeError, ValueError):
    pass


class MissingPupil(StereoGazeError, ValueError):
    pass


# regressors
class NonFiniteInput(StereoGazeError, ValueError):
    pass


class DimensionMismatch(StereoGazeError, ValueError):
    pass


class SingularDesign(StereoGazeError, ValueError):
    pass


class TooFewSamples(StereoGazeError, ValueError):
    pass


class ConvergenceWarning(UserWarning):
    """Raised as a warning when an iterative solver stops at its iteration cap."""


# calibration / psom
class RankDeficient(StereoGazeError, ValueError):
    pass


class NotALattice(StereoGazeError, ValueError):
    pass


# depth
class TooFewRows(StereoGazeError, ValueError):
    pass


# pipeline
class InsufficientDepthVariation(StereoGazeError, ValueError):
    pass


class SubjectOverlap(StereoGazeError, ValueError):
    pass


class IncompleteCalibration(StereoGazeError, ValueError):
    pass


# command line
class ConfigInvalid(StereoGazeError, ValueError):
    pass


class MissingInput(StereoGazeError, FileNotFoundError):
    pass


class DownstreamError(StereoGazeError, RuntimeError):
    """Wraps a failure raised inside a module called by a command."""
