class RetinaFuseError(Exception):
    """Base class for data and model errors raised by this package."""


class ImageError(RetinaFuseError):
    """An image file could not be decoded."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class ModelFormatError(RetinaFuseError):
    """A serialized model or bundle is malformed or has an unknown version."""


class ShapeError(RetinaFuseError, ValueError):
    """Array dimensions do not agree."""
