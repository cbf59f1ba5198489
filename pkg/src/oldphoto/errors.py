"""Exception hierarchy shared by every stage of the pipeline."""


class OldPhotoError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(OldPhotoError, ValueError):
    pass


class InvalidInputError(OldPhotoError, ValueError):
    pass


class InvalidPlacementError(InvalidParameterError):
    pass


class DegradationOpError(OldPhotoError, RuntimeError):
    def __init__(self, kind, message):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class ConfigurationError(OldPhotoError):
    """Missing checkpoints, unmet stage dependencies, bad config files."""


class DataError(OldPhotoError):
    """Unreadable or mismatched data on disk."""


class RefusalError(OldPhotoError):
    """A reference computation refused an input that is too large."""


class UndefinedMetricError(OldPhotoError, ValueError):
    pass
