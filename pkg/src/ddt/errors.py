"""Exception hierarchy. Every library error derives from :class:`DDTError`."""


class DDTError(Exception):
    pass


class DimensionError(DDTError, ValueError):
    """Incompatible vector / embedding dimensions."""


class DomainError(DDTError, ValueError):
    """Argument outside the mathematical domain (e.g. a non-positive variance)."""


class ConfigError(DDTError, ValueError):
    pass


class ShapeError(DDTError, ValueError):
    """Image or tensor shape does not match what the model expects."""


class FormatError(DDTError, ValueError):
    """Malformed binary file (PPM image or checkpoint)."""


class ManifestError(DDTError, ValueError):
    pass


class IoError(DDTError, OSError):
    pass
