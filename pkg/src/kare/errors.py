"""Error hierarchy shared by the library and the CLI.

Everything raised for bad input data derives from :class:`KareError`, so the CLI
can map it to exit code 2 in one place.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional, Sequence

if TYPE_CHECKING:
    from kare.lexicon import EntitySpan


class KareError(ValueError):
    """Root of all data errors."""


class LexiconParseError(KareError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateTermError(LexiconParseError):
    pass


class EntityClassError(LexiconParseError):
    pass


class OverlapError(KareError):
    pass


class MissingEntityError(KareError):
    """An entity class could not be located; ``spans`` holds what was found."""

    def __init__(self, message: str, spans: Sequence["EntitySpan"] = ()) -> None:
        self.spans = list(spans)
        super().__init__(message)


class DatasetError(KareError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LabelError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


class SplitError(KareError):
    pass


class KappaError(KareError):
    pass


class EmbeddingParseError(KareError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SpanError(KareError):
    pass


class ShapeError(KareError):
    pass


class AlignmentError(KareError):
    pass


class ContextError(KareError):
    pass


class ConfigError(KareError):
    pass


class CheckpointError(KareError):
    pass


class MetricsError(KareError):
    pass
