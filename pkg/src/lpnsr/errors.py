"""Exception hierarchy shared across the package."""


class LPNSRError(Exception):
    """Base class for all package errors."""


class ConfigError(LPNSRError, ValueError):
    """A configuration value is missing, malformed or out of range."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class StepCountError(ConfigError):
    """Step count T below 1."""


class EtaBoundsError(ConfigError):
    """Shifting-sequence endpoint outside the open unit interval."""


class ScheduleOrderError(ConfigError):
    """Shifting sequence is not strictly increasing."""


class KappaError(ConfigError):
    """Noise scale is not positive."""


class ShapeError(LPNSRError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class StepRangeError(LPNSRError, ValueError):
    """A timestep index falls outside the valid range."""


class DomainError(LPNSRError, ValueError):
    """A formula is undefined at the requested point."""


class FormatError(LPNSRError):
    """A binary file has bad magic bytes or is truncated."""


class VersionError(FormatError):
    """A binary file carries an unsupported format version."""


class ArchitectureMismatchError(LPNSRError):
    """A checkpoint holds a different network than requested."""


class ScheduleMismatchError(LPNSRError):
    """A checkpoint was trained under a different diffusion schedule."""


class MissingArtifactError(LPNSRError):
    """A required upstream artifact (checkpoint, corpus) is absent."""


class TrainingDivergedError(LPNSRError):
    """Loss became non-finite during optimisation."""
