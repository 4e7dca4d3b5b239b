"""Exception hierarchy shared by all toolkit modules."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ToolkitError):
    pass


class EmptyBag(ToolkitError):
    pass


class InvalidBox(ToolkitError):
    pass


class InvalidObjectness(ToolkitError):
    pass


class InvalidLabel(ToolkitError):
    pass


class InvalidConfig(ToolkitError):
    pass


class CountMismatch(ToolkitError):
    pass


class EmptyBatch(ToolkitError):
    pass


class NoPositives(ToolkitError):
    pass


class NoNegatives(ToolkitError):
    pass


class SplitTooSmall(ToolkitError):
    pass


class ArchiveError(ToolkitError):
    pass


class InconsistentDims(ArchiveError):
    pass


class BadMagic(ArchiveError):
    pass


class VersionUnsupported(ArchiveError):
    pass


class CorruptOffset(ArchiveError):
    def __init__(self, message: str, image_id: str | None = None):
        super().__init__(message)
        self.image_id = image_id


class ParseError(ToolkitError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
