"""Exception types shared across the pipeline.

Every error raised on purpose derives from SegRefineError so the CLI can
map failures to exit codes: config problems exit 2, data problems exit 3,
numerical failures exit 4.
"""


class SegRefineError(Exception):
    pass


# --- configuration ---------------------------------------------------------

class UnknownKey(SegRefineError):
    """Config file contains a key the schema does not define."""


class ConstraintViolation(SegRefineError):
    """A parameter value is outside its allowed range."""


# --- tensor file format ----------------------------------------------------

class BadMagic(SegRefineError):
    """File does not start with the STF1 magic bytes."""


class TruncatedFile(SegRefineError):
    """File ends before the header or payload is complete."""


class UnknownDtype(SegRefineError):
    """Dtype code is not one of the supported element types."""


class ShapeOverflow(SegRefineError):
    """Stored shape is invalid or its product exceeds the u64 range."""


class IoFailure(SegRefineError):
    """Underlying filesystem write failed."""


# --- feature bundles -------------------------------------------------------

class MissingRole(SegRefineError):
    """Bundle manifest lacks a required tensor role or field."""


class GeometryMismatch(SegRefineError):
    """Tensor shapes disagree with the declared grid geometry."""


class InconsistentClassCount(SegRefineError):
    """Text embedding rows do not match the declared class names."""


# --- numerical stages ------------------------------------------------------

class EmptyImage(SegRefineError):
    """Image has no pixels or the wrong number of channels."""


class EmptyLayerAxis(SegRefineError):
    """An operation that averages over layers received none."""


class ShapeMismatch(SegRefineError):
    """Operands have incompatible shapes."""


class DimensionMismatch(SegRefineError):
    """Feature and text embeddings live in different spaces."""


class LabelOutOfRange(SegRefineError):
    """A label map contains ids outside [0, num_classes)."""


class NonFiniteEncountered(SegRefineError):
    """NaN or Inf appeared during an iterative solve."""


# --- orchestration ---------------------------------------------------------

class StageFailure(SegRefineError):
    """Wraps an error with the pipeline stage where it happened."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


CONFIG_ERRORS = (UnknownKey, ConstraintViolation)
NUMERICAL_ERRORS = (NonFiniteEncountered,)
