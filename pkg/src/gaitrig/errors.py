"""Exception hierarchy shared across the toolkit.

Two branches matter for the CLI: ValidationError (bad inputs, exit code 2)
and NumericalError (a solver or geometric computation failed, exit code 3).
"""


class GaitRigError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(GaitRigError):
    """Inputs violate a precondition or a file is malformed."""


class NumericalError(GaitRigError):
    """A numerical computation failed or is ill-conditioned."""


# geometry
class PointBehindCamera(NumericalError):
    """Camera-frame depth of the point is at or below the depth epsilon."""


class ZeroPosition(ValidationError):
    """Position vector too close to the origin to define viewing angles."""


class UnsupportedModel(ValidationError):
    """Distortion coefficient list has an unsupported length."""


# pnp
class InsufficientPoints(ValidationError):
    """Too few correspondences for the requested solve."""


class DegenerateConfiguration(NumericalError):
    """Correspondences are coplanar/collinear beyond the conditioning threshold."""


class Divergence(NumericalError):
    """Iterative refinement failed to reduce the cost."""


# triangulation
class NotEnoughRays(ValidationError):
    """Fewer than two rays supplied."""


class DegenerateRays(NumericalError):
    """Rays are near-parallel; the normal system is ill-conditioned."""


class TooFewConfidentViews(ValidationError):
    """Fewer than two observations pass the confidence floor."""


class EmptySession(ValidationError):
    """Session contains no synchronized instances to process."""


# bundle adjustment
class MissingInitialPose(ValidationError):
    """A camera with observations has no initial extrinsic."""


class NumericalFailure(NumericalError):
    """Cost or update became non-finite."""


# long-range refinement
class EmptyGrid(ValidationError):
    """Grid specification produces no candidate nudge states."""


# evaluation
class NoLabels(ValidationError):
    """No bounding-box labels available for the requested metric."""


class LengthMismatch(ValidationError):
    """Paired pixel lists differ in length."""


class EmptyInput(ValidationError):
    """Metric requested over an empty input."""


# session io
class NoOverlap(ValidationError):
    """Frame offsets leave no common synchronized instance."""


class ParseError(ValidationError):
    """A session file is malformed; message carries line/field diagnostics."""


class SchemaVersionMismatch(ValidationError):
    """File schema major version is newer than this toolkit supports."""
