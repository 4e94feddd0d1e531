"""Exception hierarchy shared by all modules."""


class AncillaError(Exception):
    """Base class for every error raised by this package."""


class NonPhysicalState(AncillaError):
    pass


class InconsistentInput(AncillaError):
    pass


class OrderTooHigh(AncillaError):
    pass


class ProbabilityOutOfRange(AncillaError):
    pass


class QuadratureNotConverged(AncillaError):
    pass


class GridTooNarrow(AncillaError):
    pass


class EmptyTable(AncillaError):
    pass


class DegenerateCalibration(AncillaError):
    pass


class DimensionMismatch(AncillaError):
    pass


class InsufficientData(AncillaError):
    pass


class NegativeVariance(AncillaError):
    pass


class ZeroVariance(AncillaError):
    pass


class ConjugacyMismatch(AncillaError):
    pass


class ConfigError(AncillaError):
    """Scenario configuration failed to parse or validate."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])
