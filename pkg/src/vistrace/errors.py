"""Exception hierarchy shared by the engine, the HTTP layer, and the CLI."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


class SchemaMismatchError(EngineError):
    """CSV header or arity disagrees with the declared schema."""


class CsvParseError(EngineError):
    """A cell failed to parse as its declared type."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


class DuplicateRelationError(EngineError):
    """A relation with this name is already loaded."""


class RowIdOutOfRangeError(EngineError):
    """A row id is outside [0, row_count)."""


class TypeMismatchError(EngineError):
    """An expression, predicate, key, or aggregate is ill-typed for its input schema."""


class EmptyExtentError(EngineError):
    """min/max requested over zero rows or an all-null column."""


class UnknownRelationError(EngineError):
    """Named relation does not exist in the workflow or dataset."""


class UnknownColumnError(EngineError):
    """Named column does not exist on the relation."""


class UnreachableTargetError(EngineError):
    """No lineage path connects the trace endpoints."""


class NotInvertibleError(EngineError):
    """Scale cannot be inverted (color ramp or degenerate domain)."""


class SelectionOutOfViewportError(EngineError):
    """Selection geometry is malformed or lies outside the view's viewport."""


class UnknownViewError(EngineError):
    """View id not present in the session."""


class UnknownEventError(EngineError):
    """Event id not present in the session's event log."""


class NoSharedBaseError(EngineError):
    """Two views share no base relation, so they cannot be linked."""
