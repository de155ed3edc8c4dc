"""Exception hierarchy shared by every module.

Each leaf class carries a distinct ``exit_code`` so the CLI can map failures
to non-overlapping process exit statuses.
"""

from __future__ import annotations


class FlowActError(Exception):
    exit_code = 1


# geometry
class NonPositiveDepth(FlowActError, ValueError):
    exit_code = 10


class NearPiRotation(FlowActError, ValueError):
    exit_code = 11


# file formats
class BadMagic(FlowActError, ValueError):
    exit_code = 20


class TruncatedFile(FlowActError, ValueError):
    exit_code = 21


class NonPositiveDims(FlowActError, ValueError):
    exit_code = 22


class DimensionMismatch(FlowActError, ValueError):
    exit_code = 23


class OutOfBounds(FlowActError, IndexError):
    exit_code = 24


class BadImageFile(FlowActError, ValueError):
    exit_code = 25


# tracking / solving
class EmptyMask(FlowActError, ValueError):
    exit_code = 30


class NoValidDepth(FlowActError, ValueError):
    exit_code = 31


class TooFewCorrespondences(FlowActError, ValueError):
    exit_code = 32


class TooFewPoints(FlowActError, ValueError):
    exit_code = 33


class DegenerateGeometry(FlowActError, ValueError):
    exit_code = 34


class ReplanNeeded(FlowActError):
    """Tracking collapsed below the inlier fraction; carries the partial result."""

    exit_code = 35

    def __init__(self, message: str, frame: int = -1, ratio: float = float("nan"), partial=None):
        super().__init__(message)
        self.frame = frame
        self.ratio = ratio
        self.partial = partial


# planning
class DegenerateDirection(FlowActError, ValueError):
    exit_code = 40


# diffusion
class ShapeMismatch(FlowActError, ValueError):
    exit_code = 50


class InvalidTimestep(FlowActError, ValueError):
    exit_code = 51


class InvalidRange(FlowActError, ValueError):
    exit_code = 52


# simulator
class FrameOutOfRange(FlowActError, IndexError):
    exit_code = 60


class EpisodeEnded(FlowActError, RuntimeError):
    exit_code = 61


class NoPreviousPose(FlowActError, RuntimeError):
    exit_code = 62


# cli
class ConfigError(FlowActError, ValueError):
    exit_code = 70


class MissingInput(FlowActError, FileNotFoundError):
    exit_code = 71
