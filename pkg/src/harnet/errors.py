"""Exception hierarchy shared by every harnet module."""


class HarnetError(Exception):
    """Base class for all errors raised by harnet."""


class ShapeError(HarnetError, ValueError):
    """Tensor dimensions are inconsistent with an operation's contract."""


class StateError(HarnetError, RuntimeError):
    """An object is not in the state an operation requires (e.g. missing gradients)."""


class TrainingError(HarnetError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(HarnetError, ValueError):
    """Malformed configuration document. ``key_path`` names the offending key."""

    def __init__(self, message, key_path=""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class IoError(HarnetError, OSError):
    """A file or directory could not be read or written."""


class FormatError(HarnetError, ValueError):
    """A binary or text file does not follow its declared format."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset
