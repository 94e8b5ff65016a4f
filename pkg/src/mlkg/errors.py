"""Exception types shared across the package."""


class MLKGError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MLKGError):
    """An argument violated a documented precondition (shape, range, emptiness)."""


class ConfigError(MLKGError):
    """Configuration file or flag values are invalid (unknown key, bad value, missing required)."""


class DatasetError(MLKGError):
    """Dataset layout or file integrity problem (orphans, unreadable files)."""


class BackendError(MLKGError):
    """A knowledge backend call failed after retries.

    Carries the prompt id that failed so callers can resume generation.
    """

    def __init__(self, message: str, prompt_id: str = ""):
        super().__init__(message)
        self.prompt_id = prompt_id


class CacheMissError(MLKGError):
    """Requested knowledge is not present in the cache."""

    def __init__(self, class_name: str, image_id: str):
        super().__init__(f"no cached knowledge for class={class_name!r} image_id={image_id!r}")
        self.class_name = class_name
        self.image_id = image_id


class CacheFormatError(MLKGError):
    """The cache file on disk is malformed. Carries the offending path."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class MetricError(MLKGError):
    """A metric is undefined for the given input (e.g. empty ground truth)."""
