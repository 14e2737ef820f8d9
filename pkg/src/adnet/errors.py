"""Exception types raised across the library.

Every error the library raises deliberately derives from AdnetError so the
CLI can map them to a nonzero exit code in one place.
"""


class AdnetError(Exception):
    """Base class for all library errors."""


# data ingestion
class MissingRoot(AdnetError):
    pass


class NoClassesFound(AdnetError):
    pass


class UnreadableImage(AdnetError):
    pass


class PercentOutOfRange(AdnetError):
    pass


class EmptyClass(AdnetError):
    pass


class FingerprintMismatch(AdnetError):
    pass


# augmentation
class ImageTooSmall(AdnetError):
    pass


class WrongArity(AdnetError):
    pass


# model
class InvalidSpec(AdnetError):
    pass


class ShapeMismatch(AdnetError):
    pass


# objectives
class LabelOutOfRange(AdnetError):
    pass


class UnsupportedKind(AdnetError):
    pass


# trainer
class StepsTooSmall(AdnetError):
    pass


class NonFiniteLoss(AdnetError):
    pass


# evaluation
class EmptyDataset(AdnetError):
    pass


class InvalidSigma(AdnetError):
    pass


class SpecMismatch(AdnetError):
    pass


class MalformedLog(AdnetError):
    pass


class MissingCheckpoint(AdnetError):
    pass
