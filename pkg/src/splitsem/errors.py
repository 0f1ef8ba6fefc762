"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
MissingArtifactError -> 3, everything derived from NumericalError -> 4.
"""


class SplitsemError(Exception):
    """Base class for all package errors."""


class ConfigError(SplitsemError):
    """Invalid configuration value, unknown key, or inconsistent CLI flags."""


class MissingArtifactError(SplitsemError):
    """A required checkpoint, dataset, or result file is absent."""


class NumericalError(SplitsemError):
    """Base for runtime numerical failures."""


class DegenerateInputError(NumericalError):
    """Input lacks the variation an operation requires (e.g. constant block)."""


class ShapeError(SplitsemError):
    """Array dimensions do not match the declared layer or channel counts."""


class FrameFormatError(SplitsemError):
    """A bit frame is malformed: bad version, truncated payload, wrong word size."""


class BandwidthExceededError(NumericalError):
    """Payload would exceed the configured bit budget."""


class TrainingDivergedError(NumericalError):
    """Loss became non-finite during training."""


class GateNotReachedError(NumericalError):
    """A configured accuracy gate was not met within the epoch budget."""


class AllChannelsPrunedError(NumericalError):
    """Sparsity training removed every feature channel; use smaller gamma."""
