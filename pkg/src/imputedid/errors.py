"""Exception and warning classes raised across the package.

Every estimation failure derives from :class:`EstimationError`; the CLI maps
those to exit code 3 and reports ``type(exc).__name__`` as the error code.
"""

from __future__ import annotations


class EstimationError(ValueError):
    """Base class for recoverable estimation and input errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# data model
class EmptyInput(EstimationError):
    pass


class RaggedCovariates(EstimationError):
    pass


class NonFiniteValue(EstimationError):
    pass


class MissingColumn(EstimationError):
    pass


class NoControl(EstimationError):
    """Every record is treated, so no untreated comparison exists."""


# regression
class AllZeroWeights(EstimationError):
    pass


class DegenerateDesign(EstimationError):
    pass


class NonConvergence(EstimationError):
    def __init__(self, message: str, tolerance: float = float("nan")):
        super().__init__(message)
        self.tolerance = tolerance


# imputation
class DisconnectedDesign(EstimationError):
    pass


class SchemaMismatch(EstimationError):
    pass


class EmptyEffectSet(EstimationError):
    pass


class UnknownLabel(EstimationError):
    pass


class SingleCategory(EstimationError):
    pass


# pretrend
class InsufficientLeadSupport(EstimationError):
    pass


# twfe
class CollinearInteraction(EstimationError):
    pass


class SingleYear(EstimationError):
    pass


class DegenerateOutcome(EstimationError):
    pass


# inference
class SingleCluster(EstimationError):
    pass


class AllResamplesDegenerate(EstimationError):
    pass


class UnpairedReplicates(EstimationError):
    pass


# indices
class ZeroVariance(EstimationError):
    pass


class ZeroVarianceColumn(ZeroVariance):
    pass


class TooFewRows(EstimationError):
    pass


class MissingReferenceKey(EstimationError):
    pass


# simulate / cli
class InvalidConfig(EstimationError):
    pass


class UnknownPreset(EstimationError):
    pass


class UnwritablePath(EstimationError):
    pass


class NoTreatedWarning(UserWarning):
    """The treatment view contains no treated rows."""


class SingularCovarianceWarning(UserWarning):
    """A Wald test fell back to a pseudo-inverse."""


class InsufficientLeadSupportWarning(UserWarning):
    """Some lead dummies have no support and were excluded."""
