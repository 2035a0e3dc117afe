class StrainError(ValueError):
    """Base class for every domain error raised by aaastrain."""


class FrameError(StrainError):
    """A per-point surface fit failed; ``index`` names the point."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class OutOfGridError(StrainError):
    """Points fell outside the displacement grid."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class FormatError(StrainError):
    """Malformed input file."""
