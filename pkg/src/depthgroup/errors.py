"""Exception types shared across the package."""


class DepthgroupError(Exception):
    """Base class for all package errors."""


class ValidationError(DepthgroupError):
    """Raised when inputs violate a documented precondition."""


class StaleArtifactError(DepthgroupError):
    """Raised when a derived artifact no longer matches its upstream config."""
