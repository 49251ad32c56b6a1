"""Exception hierarchy. The CLI maps each family to an exit code."""


class DepthSyncError(Exception):
    exit_code = 1


class InvalidInputError(DepthSyncError, ValueError):
    exit_code = 2


class BehindCameraError(InvalidInputError):
    pass


class LoadError(InvalidInputError):
    """Base for sequence/dataset loading failures; ``path`` names the culprit."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class ManifestMissingError(LoadError):
    pass


class ManifestFormatError(LoadError):
    pass


class TimestampOrderError(LoadError):
    pass


class DimensionMismatchError(LoadError):
    pass


class ImageReadError(LoadError):
    pass


class WriteError(DepthSyncError, OSError):
    pass


class AlignmentInfeasibleError(DepthSyncError):
    exit_code = 3


class DivergenceError(DepthSyncError):
    exit_code = 4


class TrainerError(DepthSyncError):
    def __init__(self, model, cause):
        super().__init__(f"trainer failed for model {model}: {cause!r}")
        self.model = model
