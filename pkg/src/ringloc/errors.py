"""Exception hierarchy shared across the package."""


class RinglocError(Exception):
    """Base class for all errors raised by ringloc."""


class FormatError(RinglocError):
    """A file could not be parsed under its declared format."""


class EmptyCloud(RinglocError):
    """A point cloud has no usable points."""


class EmptyAfterFilter(EmptyCloud):
    """Preprocessing removed every point."""


class EmptyScan(EmptyCloud):
    """A synthetic render produced no points."""


class NonUnitQuaternion(FormatError):
    """A quaternion is too far from unit norm to be renormalized safely."""


class TooFewPoints(RinglocError):
    """Fewer cloud points than requested neighbors."""


class NonSquareInput(RinglocError):
    """A square grid was required."""


class ShapeMismatch(RinglocError):
    """Two arrays that must share a shape do not."""


class DegenerateConstantInput(RinglocError):
    """An array with zero variance cannot be normalized."""


class EmptyIndex(RinglocError):
    """A map index with no entries."""


class NoCorrespondences(RinglocError):
    """ICP found no point pairs within the correspondence distance."""


class EmptyOutcomes(RinglocError):
    """Metrics were requested over an empty outcome list."""


class LengthMismatch(RinglocError):
    """Trajectories of different lengths."""


class ConfigError(RinglocError):
    """Invalid or unknown configuration values."""


class ConfigMismatch(ConfigError):
    """A stored index was built with an incompatible configuration."""


class ScanError(RinglocError):
    """A per-scan failure during index construction, tagged with the scan id."""

    def __init__(self, scan_id, cause):
        super().__init__(f"scan {scan_id}: {cause}")
        self.scan_id = scan_id
        self.cause = cause
