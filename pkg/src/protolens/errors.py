"""Exception types shared across the package."""


class ProtoLensError(Exception):
    """Base class for package-specific errors."""


class CorpusError(ProtoLensError):
    """Malformed or unusable corpus data."""


class ConfigError(ProtoLensError):
    """Invalid configuration (dimension mismatches, bad settings)."""


class CheckpointError(ProtoLensError):
    """Unreadable, truncated, or incompatible checkpoint file."""


class NotAlignedError(ProtoLensError):
    """Model has never been aligned; explanation artifacts are undefined."""
