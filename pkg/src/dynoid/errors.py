"""Exception hierarchy shared by all dynoid modules."""


class DynoidError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(DynoidError, ValueError):
    """Invalid hyperparameters, dimensions or configuration values."""


class UsageError(DynoidError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ShapeError(UsageError):
    """Array dimensions do not match what an operation expects."""


class NumericError(DynoidError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(NumericError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class ControllerError(DynoidError, RuntimeError):
    """A feedback controller could not be synthesised or diverged."""


class CapabilityError(DynoidError, NotImplementedError):
    """The requested computation is outside what the implementation supports."""


class FormatError(DynoidError, ValueError):
    """A serialized file could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class VersionError(FormatError):
    """A serialized file carries a format version this package cannot read."""

    def __init__(self, found, expected, path=None):
        super().__init__(
            f"unsupported format_version {found!r} (this build reads version {expected!r})",
            path=path,
        )
        self.found = found
        self.expected = expected
