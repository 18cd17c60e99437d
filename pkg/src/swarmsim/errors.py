"""Exception hierarchy shared by every subsystem."""


class SwarmSimError(Exception):
    """Base class for all simulator errors."""


class ScenarioError(SwarmSimError):
    """Malformed or unclosed scenario file."""


class InvalidPoseError(SwarmSimError):
    """Pose lies outside the environment or inside an obstacle."""


class NoCorrespondenceError(SwarmSimError):
    """Point matching left zero inlier pairs."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateConfigurationError(SwarmSimError):
    """Rigid transform is not determined by the given pairs."""


class MissionTimeExhausted(SwarmSimError):
    """Coverage time index ran past the 8-bit limit of 255."""


class ExcludedInitialCondition(SwarmSimError):
    """Heading error equal to pi, the measure-zero set excluded by the stability result."""


class BandwidthViolation(SwarmSimError):
    """A per-step payload exceeded the radio byte budget."""


class SyncFailure(SwarmSimError):
    """Map synchronisation between neighbours failed during the initial phase."""


class ConfigError(SwarmSimError):
    """Invalid configuration value or unknown key."""
