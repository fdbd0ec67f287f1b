"""Exception hierarchy.

Three families map onto the CLI exit codes: :class:`DataError` (exit 2),
:class:`NumericError` (exit 3) and plain contract violations, which are
``ValueError`` subclasses raised by the numeric kernel.
"""

from __future__ import annotations


class VideoCapError(Exception):
    """Base class for every error raised by this package."""


# -- contract violations ------------------------------------------------------


class DimensionMismatch(VideoCapError, ValueError):
    pass


class EmptyInput(VideoCapError, ValueError):
    pass


class NonPositiveScale(VideoCapError, ValueError):
    pass


class EmptyWindow(VideoCapError, ValueError):
    pass


class FrameCountMismatch(DimensionMismatch):
    pass


class FrameRangeMismatch(DimensionMismatch):
    pass


class EmptyGraph(VideoCapError, ValueError):
    pass


class PrefixTooLong(VideoCapError, ValueError):
    pass


class EmptyVisualSequence(VideoCapError, ValueError):
    pass


class LengthMismatch(VideoCapError, ValueError):
    pass


class ShapeMismatch(VideoCapError, ValueError):
    pass


class AllPadded(VideoCapError, ValueError):
    pass


class InvalidConfig(VideoCapError, ValueError):
    pass


# -- data errors --------------------------------------------------------------


class DataError(VideoCapError):
    """Malformed or missing input data."""


class BadMagic(DataError):
    pass


class CorruptHeader(DataError):
    pass


class DimMismatch(DataError):
    pass


class MissingTensor(DataError):
    pass


class BadPattern(DataError, ValueError):
    pass


class EmptyCorpus(DataError, ValueError):
    pass


class EmptyDataset(DataError):
    pass


# -- numeric failures ---------------------------------------------------------


class NumericError(VideoCapError):
    """Non-finite values or failed numerical checks."""


class NonFiniteValue(NumericError, DataError):
    """A tensor holds NaN or Inf where finite values are required."""


class NonFiniteEvaluation(NumericError):
    pass


class DivergedLoss(NumericError):
    pass
