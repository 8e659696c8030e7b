"""Exception types raised across the package."""


class GsposeError(Exception):
    """Base class for all errors raised by gspose."""


class AngleNearPi(GsposeError, ValueError):
    pass


class DegenerateCloud(GsposeError, ValueError):
    pass


class NoValidDepth(GsposeError, ValueError):
    pass


class StateMismatch(GsposeError, ValueError):
    """Backward was called with a render produced from different inputs."""


class DimensionMismatch(GsposeError, ValueError):
    pass


class EmptyMask(GsposeError, ValueError):
    """No pixel passed the transmittance mask."""


class Diverged(GsposeError, RuntimeError):
    pass


class Degenerate(GsposeError, ValueError):
    pass


class SceneError(GsposeError, ValueError):
    """Base for dataset loading problems; the message names the offending path."""

    def __init__(self, message: str, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class MissingIntrinsics(SceneError):
    pass


class ImageSizeMismatch(SceneError):
    pass


class CorruptFile(SceneError):
    pass
