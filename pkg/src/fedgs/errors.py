"""Exception types shared across the package.

Every error raised deliberately by library code derives from FedgsError so
callers (and the CLI) can distinguish expected failure modes from bugs.
"""


class FedgsError(Exception):
    """Base class for all deliberate errors raised by this package."""


class InvalidConfigError(FedgsError):
    """A configuration value is out of range or inconsistent."""


class ZeroTotalError(FedgsError):
    """A count vector that must have positive mass sums to zero."""


class LengthMismatchError(FedgsError):
    """Two vectors that must share a length do not."""


class ShapeMismatchError(FedgsError):
    """An array has the wrong shape for the operation."""


class EmptySetError(FedgsError):
    """An aggregation was asked to combine zero items."""


class EmptyFederationError(FedgsError):
    """A federation description contains no groups or no devices."""


class DegenerateProblemError(FedgsError):
    """A selection problem admits no choice (L_sel is 0 or >= alpha)."""


class NoFeasiblePairError(FedgsError):
    """No 0/1 permutation pair exists (solution is all-zeros or all-ones)."""


class MalformedInstanceError(FedgsError):
    """A serialized selection instance fails validation."""


class InstanceTooLargeError(FedgsError):
    """Exhaustive enumeration would exceed the configured subset cap."""


class UnequalBatchSizesError(FedgsError):
    """An operation assuming equal batch sizes was given mixed sizes."""


class NonFiniteLossError(FedgsError):
    """A loss or gradient evaluated to NaN or infinity."""


class StreamExhaustedError(FedgsError):
    """A device stream has no batch left and regeneration is disabled."""


class MalformedManifestError(FedgsError):
    """A dataset manifest fails schema or consistency checks."""


class MalformedCheckpointError(FedgsError):
    """A model checkpoint fails header or payload validation."""


class InsufficientEligibleDevicesError(FedgsError):
    """A group cannot field enough devices with batches remaining."""
