"""Exception hierarchy.

Every validation failure raised while reading input files derives from
:class:`IngestError` and carries the offending file and (1-based) line so
that ``egolead validate`` can point at it. The class name is the documented
error name.
"""

from __future__ import annotations


class EgoleadError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def name(self) -> str:
        return type(self).__name__


class IngestError(EgoleadError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.message = message
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


# manifest
class MissingField(IngestError):
    pass


class DuplicateWearer(IngestError):
    pass


class BadCategoryMap(IngestError):
    pass


# streams
class NonMonotonicTimestamps(IngestError):
    pass


class EmptyStream(IngestError):
    pass


class BadRecord(IngestError):
    pass


# label maps / boxes
class RLEUnderflow(IngestError):
    """A raster row's runs cover fewer cells than the declared width."""


class RLEOverflow(IngestError):
    """A raster row's runs cover more cells than the declared width."""


class UnknownCategoryId(IngestError):
    """A label or box refers to an object id absent from the category map."""


class DegenerateBox(IngestError):
    pass


class DuplicateFaceBox(IngestError):
    pass


# analysis
class TooFewSamples(EgoleadError, ValueError):
    pass


class AllInvalid(EgoleadError, ValueError):
    pass


class FrameMissing(EgoleadError, KeyError):
    pass


class PointOutOfBounds(EgoleadError, ValueError):
    pass


class MissingFaceTracks(EgoleadError):
    def __init__(self, wearer_id: str):
        self.wearer_id = wearer_id
        super().__init__(f"no face tracks for wearer {wearer_id!r}")


class NoLeaderUtterances(EgoleadError, ValueError):
    pass


class AdapterUnreachable(EgoleadError):
    pass


class MalformedResponse(EgoleadError):
    pass


class IncompleteSession(EgoleadError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("incomplete session, missing: " + ", ".join(self.missing))


class InfeasibleScript(EgoleadError, ValueError):
    pass


class SessionMismatch(EgoleadError, ValueError):
    pass


class MissingAnalysis(EgoleadError):
    pass
