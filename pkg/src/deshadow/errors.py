"""Exception types shared across the toolkit.

Plumbing failures reuse builtins (FileNotFoundError, OSError, ValueError);
the classes below cover contract violations specific to this pipeline.
"""


class DeshadowError(Exception):
    """Base class for toolkit-specific errors."""


class DecodeError(DeshadowError):
    """Raster file exists but is not a readable RGB image."""


class StateError(DeshadowError):
    """Operation applied to an image in the wrong color space."""


class ShapeError(DeshadowError):
    """Array arguments do not agree in shape."""


class SpecError(DeshadowError):
    """Inconsistent network architecture description."""


class EmptyCandidatesError(DeshadowError):
    """No candidate masks were found for an image."""


class FormatError(DeshadowError):
    """A file violates its documented layout or format."""


class DegenerateRegionError(DeshadowError):
    """A region (mask, ring, or metric region) is empty."""


class WeightError(DeshadowError):
    """Checkpoint does not match the requested solver configuration."""


class PairingError(DeshadowError):
    """Directories that pair by filename stem contain orphans."""


class EmptyDatasetError(DeshadowError):
    """A dataset split resolved to zero samples."""


class NumericsError(DeshadowError):
    """Non-finite values appeared where finite math was required."""

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message)
        self.stage = stage
