"""Exception hierarchy shared by all gist_mini modules."""


class GistError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(GistError, ValueError):
    pass


class SizeError(GistError, ValueError):
    pass


class ShapeError(GistError, ValueError):
    pass


class MeshParseError(GistError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class UnsupportedElementError(MeshParseError):
    pass


class MeshIndexError(GistError, IndexError):
    pass


class DegenerateFaceError(GistError, ValueError):
    """A face with repeated vertices or zero area."""

    def __init__(self, face, message="degenerate face"):
        super().__init__(f"{message} (face {face})")
        self.face = face


class ZeroDegreeError(GistError, ValueError):
    pass


class DivergenceError(GistError, RuntimeError):
    def __init__(self, epoch, message="non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class UndefinedR2Error(GistError, ValueError):
    """R^2 is undefined for a constant truth vector; the MSE is still attached."""

    def __init__(self, mse):
        super().__init__("R^2 undefined: truth vector is constant")
        self.mse = mse


class ReportError(GistError, ValueError):
    pass


class GenerationError(GistError, ValueError):
    pass
