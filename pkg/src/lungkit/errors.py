"""Exception and warning types shared across lungkit."""


class LungkitError(Exception):
    """Base class for domain errors (bad data, bad files, bad configs)."""


class ImageFormatError(LungkitError):
    pass


class ManifestError(LungkitError):
    pass


class ShapeError(LungkitError, ValueError):
    pass


class BundleFormatError(LungkitError):
    pass


class TrainingError(LungkitError):
    pass


class ConfigError(LungkitError):
    pass


class LungkitWarning(UserWarning):
    """Raised for degenerate-but-recoverable situations, e.g. too few lung components."""
