"""Exception and warning classes raised across the package."""


class NLGrowthError(Exception):
    """Base class for all package errors."""


# dataset
class MissingColumn(NLGrowthError, KeyError):
    pass


class NonMonotoneTimes(NLGrowthError, ValueError):
    pass


class OrphanObservation(NLGrowthError, ValueError):
    pass


class UnknownRole(NLGrowthError, KeyError):
    pass


# curves / model building
class MissingShapeParameter(NLGrowthError, KeyError):
    pass


class IncompleteParameterSet(NLGrowthError, KeyError):
    pass


class RoleMismatch(NLGrowthError, ValueError):
    pass


class SingularStructure(NLGrowthError, ValueError):
    pass


class ClassIndexOutOfRange(NLGrowthError, IndexError):
    pass


class NonPDImpliedCovariance(NLGrowthError, ValueError):
    """The implied covariance of an individual is not positive definite."""

    def __init__(self, individual, min_pivot, class_index=None):
        self.individual = individual
        self.min_pivot = float(min_pivot)
        self.class_index = class_index
        where = f"individual {individual!r}"
        if class_index is not None:
            where += f" (class {class_index})"
        super().__init__(f"implied covariance not positive definite for {where}; min pivot {self.min_pivot:.3g}")


# estimation
class DegenerateData(NLGrowthError, ValueError):
    pass


class AllAttemptsFailed(UserWarning):
    """No optimization attempt reached an acceptable status code."""


# post-fit
class NoCovarianceAvailable(NLGrowthError, ValueError):
    pass


class NotNested(NLGrowthError, ValueError):
    pass


class NegativeStatistic(NLGrowthError, ValueError):
    pass


class DatasetMismatch(NLGrowthError, ValueError):
    pass


# simulation
class NonPDTrueCovariance(NLGrowthError, ValueError):
    pass
