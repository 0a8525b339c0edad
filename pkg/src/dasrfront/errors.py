"""Exception hierarchy.

Errors split into two families so the command line can map them onto exit
codes: configuration problems (exit 2) and problems with the data being
processed (exit 3).
"""


class ConfigError(ValueError):
    """Invalid parameters, config file or scene specification."""


class DataError(ValueError):
    """Input data is missing, malformed or numerically unusable."""


class DegenerateSignalError(DataError):
    def __init__(self, what="signal"):
        super().__init__(f"degenerate signal: {what}")


class FileFormatError(DataError):
    """Malformed binary/text file. Carries the offending field and byte offset."""

    def __init__(self, path, field, offset, message):
        self.path = str(path)
        self.field = field
        self.offset = offset
        super().__init__(f"{self.path}: {message} (field '{field}' at byte offset {offset})")
