"""Exception hierarchy shared by every module of the articulation pipeline."""


class ArticulationError(ValueError):
    """Base class for all domain errors raised by the pipeline."""


class SceneParseError(ArticulationError):
    """Raised when a scene description cannot be parsed into a kinematic model."""


class JointLimitError(ArticulationError):
    """Raised when a joint configuration lies outside the joint limits."""


class DegenerateGeometryError(ArticulationError):
    """Raised when a geometric quantity is undefined (zero radius, zero axis, zero flow)."""


class EstimationError(DegenerateGeometryError):
    """Raised when no point supports an axis estimate."""


class NoContactError(ArticulationError):
    """Raised when no contact point can be selected from an observation."""


class FieldsFormatError(ArticulationError):
    """Raised when a fields, axis or trajectory file is malformed."""
