"""Exception types shared across the package."""

from sklearn.exceptions import NotFittedError


class TrafficDiffError(Exception):
    """Base class for all trafficdiff errors."""


class DegenerateLane(TrafficDiffError):
    """Polyline has fewer than 2 points or duplicate consecutive points."""


class NoReferenceLane(TrafficDiffError):
    """No lane found within the query radius."""


class NonPositiveHorizon(TrafficDiffError):
    pass


class HorizonExceeded(TrafficDiffError):
    pass


class InvalidScheduleParams(TrafficDiffError):
    pass


class ShapeMismatch(TrafficDiffError):
    pass


class EmptyCandidates(TrafficDiffError):
    pass


class InsufficientSamples(TrafficDiffError):
    pass


class EdgeMismatch(TrafficDiffError):
    """Histograms being compared do not share bin edges."""


class InvalidPerturbation(TrafficDiffError):
    pass


class InvalidConfig(TrafficDiffError):
    pass


class NumericFailure(TrafficDiffError):
    """Non-finite value produced during training or sampling."""


class ModelNotFitted(TrafficDiffError, NotFittedError):
    """Estimator used before fit; also catchable as sklearn's NotFittedError."""
