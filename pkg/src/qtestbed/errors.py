"""Exception types raised across the simulator."""

from __future__ import annotations


class TestbedError(Exception):
    """Base class for every error raised by :mod:`qtestbed`."""

    __test__ = False  # keep pytest from collecting this as a test class


class WavelengthOutOfRange(TestbedError, ValueError):
    pass


class NegativeLoss(TestbedError, ValueError):
    pass


class UnmappedChannel(TestbedError, LookupError):
    pass


class ConflictingAssignment(TestbedError, ValueError):
    pass


class InvalidParams(TestbedError, ValueError):
    pass


class UnsortedStream(TestbedError, ValueError):
    pass


class NoPeak(TestbedError, RuntimeError):
    pass


class InsufficientExchanges(TestbedError, ValueError):
    pass


class InsufficientCounts(TestbedError, RuntimeError):
    pass


class InvalidIndex(TestbedError, ValueError):
    pass


class MissingAnnouncement(TestbedError, ValueError):
    pass


class InsufficientKey(TestbedError, ValueError):
    pass


class QOutOfRange(TestbedError, ValueError):
    pass


class GridExhausted(TestbedError, RuntimeError):
    pass


class LowStatistics(TestbedError, RuntimeError):
    pass


class PreconditionError(TestbedError, ValueError):
    pass


class ValidationError(TestbedError, ValueError):
    """Scenario validation failure carrying every violation found.

    ``errors`` is a list of ``(field_path, message)`` tuples.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))
