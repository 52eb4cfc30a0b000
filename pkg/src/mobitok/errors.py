"""Exception hierarchy shared by every mobitok module."""


class MobitokError(Exception):
    """Base class for all library errors."""

    module = "mobitok"


class ConfigError(MobitokError, ValueError):
    """A parameter or configuration value is out of its allowed range."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ParseError(MobitokError, ValueError):
    """A row of input data could not be parsed."""

    module = "ingest"

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class LoadError(MobitokError, IOError):
    """A persisted artifact is missing or inconsistent with its manifest."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TrainingError(MobitokError, RuntimeError):
    module = "quantizer"


class InvalidPrefixError(MobitokError, KeyError):
    module = "token_index"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "invalid prefix"
