"""Exception types raised by the estimation pipeline."""


class EstimationError(RuntimeError):
    """Base class for failures during sampling, fitting or maximization."""


class BudgetExhausted(EstimationError):
    pass


class DesignError(ValueError):
    """A design cannot be built from the requested budget or geometry."""


class RankDeficientError(EstimationError):
    pass


class PrecisionError(EstimationError):
    """The zoom cube has shrunk below what double precision can resolve."""


class DegenerateScanError(EstimationError):
    pass
