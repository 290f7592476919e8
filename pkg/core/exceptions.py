"""Exception hierarchy shared by every app of the toolkit."""


class KemenyError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(KemenyError, ValueError):
    pass


class InvalidConfigError(InvalidInputError):
    """A configuration document or spec failed validation.

    `errors` maps field names to lists of messages.
    """

    def __init__(self, errors):
        self.errors = dict(errors)
        lines = [f"{field}: {' '.join(messages)}" for field, messages in sorted(self.errors.items())]
        super().__init__('; '.join(lines))


class CapacityError(KemenyError):
    pass


class IngestionError(KemenyError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class UnsupportedFormatError(IngestionError):
    pass


class ConvergenceError(KemenyError):
    def __init__(self, message, last_iterate):
        self.last_iterate = last_iterate
        super().__init__(message)


class ShapeError(KemenyError, ValueError):
    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        rendered = ' and '.join(str(tuple(shape)) for shape in shapes)
        super().__init__(f"{primitive}: incompatible shapes {rendered}")


class InvalidUseError(KemenyError):
    pass


class InvalidStateError(KemenyError):
    pass


class CheckpointError(KemenyError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


class DegenerateTestError(KemenyError):
    pass
