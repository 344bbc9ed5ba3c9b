"""Exception hierarchy shared by every module."""

from __future__ import annotations


class PagannError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PagannError, ValueError):
    pass


class FormatError(PagannError, ValueError):
    """Malformed vector or index file."""

    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class EmptyIndexError(PagannError):
    pass


class NotFoundError(PagannError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "not found"


class CorruptionError(PagannError):
    """Stored payload failed its checksum or layout check."""


class IndexCorruptionError(PagannError):
    """Index directory references data the store does not hold."""


class InvariantError(PagannError):
    """A structural invariant of an index does not hold."""

    def __init__(self, invariant: str, detail: str):
        self.invariant = invariant
        super().__init__(f"invariant '{invariant}' violated: {detail}")
