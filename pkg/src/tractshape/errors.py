"""Named failure types shared across the toolkit."""


class TractShapeError(Exception):
    """Base class for all toolkit errors."""


# --- streamline file parsing -------------------------------------------------

class TckError(TractShapeError):
    """Base class for TCK parsing failures."""


class MissingMagic(TckError):
    """First header line does not start with the TCK magic string."""


class UnsupportedDatatype(TckError):
    """TCK datatype is not Float32LE."""


class TruncatedPayload(TckError):
    """Binary payload ended before the Inf terminator triplet."""


class EmptyFile(TckError):
    """TCK file contains zero streamlines."""


class IoFailure(TractShapeError):
    """Generic read/write failure (wraps the underlying OSError message)."""


class SchemaError(TractShapeError):
    """Manifest or CSV violates its schema; message carries field diagnostics."""


# --- geometry / synthesis ----------------------------------------------------

class InvalidSpec(TractShapeError):
    """Bundle specification violates its invariants."""


class GridTooLarge(TractShapeError):
    """Requested voxel grid exceeds the voxel-count cap."""


class DegenerateInput(TractShapeError):
    """Non-positive volume or length passed where positive is required."""


# --- numerics ----------------------------------------------------------------

class ShapeMismatch(TractShapeError):
    """Tensor operands have incompatible shapes."""


class NonFiniteValue(TractShapeError):
    """A forward op produced NaN or Inf."""


class NonFiniteLoss(TractShapeError):
    """Training loss became NaN or Inf; message carries epoch/batch diagnostics."""


class CheckpointMismatch(TractShapeError):
    """Sample is incompatible with the checkpoint (e.g. point count differs)."""


class ZeroVariance(TractShapeError):
    """A correlation/normalization requires nonzero variance."""


class TooFewSubjects(TractShapeError):
    """Dataset split requires at least two subjects."""


class TooFewRows(TractShapeError):
    """Cross-validation requires more rows than folds."""


class NotConverged(UserWarning):
    """Coordinate descent hit max_iter before reaching tolerance (soft warning)."""
