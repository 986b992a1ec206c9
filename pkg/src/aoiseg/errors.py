"""Exception hierarchy shared by every module."""


class AOISegError(Exception):
    """Base class for all errors raised by aoiseg."""


class DimensionError(AOISegError, ValueError):
    pass


class InvalidStatisticsError(AOISegError, ValueError):
    pass


class FormatError(AOISegError):
    """Bad magic bytes, unsupported version or malformed header."""


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class NonFiniteError(AOISegError, ValueError):
    pass


class InconsistentDimensionError(DimensionError):
    pass


class DegenerateKeyError(AOISegError, ValueError):
    def __init__(self, provenance):
        self.provenance = provenance
        super().__init__(f"zero-norm embedding for entry {provenance!r}")


class DegenerateQueryError(AOISegError, ValueError):
    pass


class EmptyBankError(AOISegError):
    pass


class InsufficientEntriesError(AOISegError, ValueError):
    pass


class NotIndexedError(AOISegError):
    pass


class EmptyNeighborhoodError(AOISegError, ValueError):
    pass


class InvalidTemperatureError(AOISegError, ValueError):
    pass


class UndefinedMetricError(AOISegError):
    pass


class InsufficientDataError(AOISegError, ValueError):
    pass


class SpecError(AOISegError, ValueError):
    pass


class ShiftError(AOISegError, ValueError):
    pass
