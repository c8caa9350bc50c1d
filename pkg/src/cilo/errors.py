"""Exception hierarchy shared by all modules."""


class CiloError(Exception):
    pass


class DimensionMismatch(CiloError, ValueError):
    pass


class InfeasiblePolyhedron(CiloError):
    pass


class NumericalFailure(CiloError):
    pass


class BudgetInfeasible(CiloError):
    """Budget ``beta`` lies below the smallest achievable mean true cost."""


class DualUnbounded(NumericalFailure):
    pass


class EmptyCandidateSet(CiloError, ValueError):
    pass


class OnBoundary(CiloError):
    """A distance to a moment set is numerically zero."""


class DirectionUndefined(CiloError):
    pass


class EmptyGrid(CiloError, ValueError):
    pass


class SingularSystem(NumericalFailure):
    pass


class FeasibilityResampleExceeded(CiloError):
    pass
