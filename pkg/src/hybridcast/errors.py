"""Exception hierarchy shared across the package."""


class HybridcastError(ValueError):
    """Base class for all errors raised by hybridcast."""


class SeriesError(HybridcastError):
    pass


class ParseError(SeriesError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class BoundaryError(SeriesError):
    """Missing value at the start or end of a series (no extrapolation)."""


class ForecastError(HybridcastError):
    pass


class ContextTooShortError(ForecastError):
    pass


class CapabilityError(ForecastError):
    """Forecaster asked to do something it does not support (e.g. exogenous input)."""


class RankError(HybridcastError):
    """Rank-deficient or ill-conditioned least-squares design."""


class RecordError(ForecastError):
    """Invalid record in a recorded-forecast file."""


class AlignmentError(HybridcastError):
    pass


class CalibrationError(HybridcastError):
    def __init__(self, message: str, achieved_coverage: float, factor: float):
        self.achieved_coverage = achieved_coverage
        self.factor = factor
        super().__init__(message)


class InfeasibleError(HybridcastError):
    """Not enough history to run a method (e.g. residual modelling at long contexts)."""


class ConfigError(HybridcastError):
    pass
