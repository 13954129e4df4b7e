"""Domain exceptions shared across modules."""


class TcrgenError(Exception):
    """Base class for all domain errors raised by this package."""


class UnknownResidue(TcrgenError):
    def __init__(self, char, where=""):
        self.char = char
        suffix = f" in {where}" if where else ""
        super().__init__(f"unknown residue {char!r}{suffix}")


class OverlongSource(TcrgenError):
    pass


class OverlongTarget(TcrgenError):
    pass


class EmptyBatch(TcrgenError):
    pass


class EmptySplit(TcrgenError):
    pass


class EmptySequence(TcrgenError):
    pass


class EmptyIndex(TcrgenError):
    pass


class EmptyInput(TcrgenError):
    pass


class ShapeMismatch(TcrgenError):
    pass


class DisabledChannel(TcrgenError):
    pass


class MissingColumn(TcrgenError):
    pass


class MalformedRow(TcrgenError):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class TooFewContexts(TcrgenError):
    pass


class CheckpointError(TcrgenError):
    pass
