"""Exception hierarchy shared by every module."""


class KEAError(Exception):
    pass


class InvalidShapeError(KEAError, ValueError):
    pass


class InvalidLabelError(KEAError, ValueError):
    pass


class InvalidConfigError(KEAError, ValueError):
    pass


class InvalidIdError(KEAError, IndexError):
    pass


class ParseError(KEAError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyLexiconError(KEAError, ValueError):
    pass


class FormatError(KEAError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class IngestError(KEAError, ValueError):
    pass


class DivergedError(KEAError, RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
