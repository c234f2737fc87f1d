"""Exception types shared across the package."""


class SiteSwarmError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SiteSwarmError):
    """Array or sequence dimensions do not line up."""


class TapeError(SiteSwarmError):
    """Gradient tape misuse (e.g. backward called twice)."""


class NumericsError(SiteSwarmError):
    """A non-finite value appeared where only finite values are allowed."""


class CapacityError(SiteSwarmError):
    """A fixed-size buffer was appended to while full."""


class ConfigError(SiteSwarmError):
    """Invalid or inconsistent configuration."""


class UnreachableError(SiteSwarmError):
    """Inverse kinematics target cannot be reached."""


class CheckpointError(SiteSwarmError):
    """Checkpoint file is missing, corrupt, or has the wrong version."""
