"""Exception types shared across the package."""


class StreamStabError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(StreamStabError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateFitError(StreamStabError, ValueError):
    """A least-squares fit has no unique solution (too few or degenerate points)."""


class SequenceFormatError(StreamStabError, ValueError):
    """A frame-sequence directory is malformed (gaps, mixed sizes, empty)."""


class BundleFormatError(StreamStabError, ValueError):
    """A weights bundle is structurally invalid (bad magic, truncated, bad shapes)."""


class ChecksumError(BundleFormatError):
    """A weights bundle section failed checksum verification."""


class ConfigError(StreamStabError, ValueError):
    """A configuration file contains unknown keys or invalid values."""
