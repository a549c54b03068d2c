"""Exception types raised across the pipeline.

Every error the package raises deliberately derives from BeetsenseError so
callers (and the CLI) can distinguish pipeline failures from genuine bugs.
"""


class BeetsenseError(Exception):
    """Base class for all errors raised by this package."""


# --- scene I/O ---

class MissingFile(BeetsenseError):
    pass


class ShapeMismatch(BeetsenseError):
    pass


class InvalidManifest(BeetsenseError):
    pass


class InvariantViolation(BeetsenseError):
    pass


class IoFailure(BeetsenseError):
    pass


class DuplicateField(BeetsenseError):
    pass


class UnknownLabelToken(BeetsenseError):
    pass


# --- preprocessing ---

class FieldNotFound(BeetsenseError):
    pass


class InsufficientCloudFreeInstances(BeetsenseError):
    pass


class FieldTooLarge(BeetsenseError):
    pass


class EmptyAfterErosion(BeetsenseError):
    pass


class MissingBand(BeetsenseError):
    pass


# --- temporal encoding ---

class DayOutOfRange(BeetsenseError):
    pass


# --- models ---

class InvalidSpec(BeetsenseError):
    pass


class EmptyStore(BeetsenseError):
    pass


class DivergedLoss(BeetsenseError):
    pass


class VariantMismatch(BeetsenseError):
    pass


# --- clustering and aggregation ---

class TooFewPoints(BeetsenseError):
    pass


class DimMismatch(BeetsenseError):
    pass


class MissingLabels(BeetsenseError):
    pass


class MissingNdvi(BeetsenseError):
    pass


class EmptyField(BeetsenseError):
    pass


# --- evaluation ---

class MissingPrediction(BeetsenseError):
    pass


class EmptyConfusion(BeetsenseError):
    pass


# --- CLI ---

class ConfigInvalid(BeetsenseError):
    pass


class MissingArtifact(BeetsenseError):
    pass
