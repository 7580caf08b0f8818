"""Exception hierarchy shared by all modules."""


class DoeError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(DoeError, ValueError):
    pass


# topology / power flow
class TopologyError(DoeError, ValueError):
    pass


class CycleDetected(TopologyError):
    pass


class DisconnectedBus(TopologyError):
    pass


class DuplicateEdge(TopologyError):
    pass


class NonConvergence(DoeError, RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NegativeVoltageSquare(NonConvergence):
    pass


# datasets
class TooManyRejections(DoeError, RuntimeError):
    pass


class EmptySplit(DoeError, ValueError):
    pass


class FingerprintMismatch(DoeError, ValueError):
    pass


class MalformedFile(DoeError, ValueError):
    pass


# networks
class DivergedLoss(DoeError, RuntimeError):
    pass


class DataHeadMismatch(DoeError, ValueError):
    pass


class EmptyTestSet(DoeError, ValueError):
    pass


class NegativeOutputScale(DoeError, ValueError):
    pass


class NegativeZWeight(DoeError, ValueError):
    pass


class UnfoldedModel(DoeError, ValueError):
    pass


class HeadLimitMismatch(DoeError, ValueError):
    pass


# solvers
class SolverFailure(DoeError, RuntimeError):
    pass


class NumericalBreakdown(SolverFailure):
    pass


class NegativeWeight(DoeError, ValueError):
    pass


class UnboundedInput(DoeError, ValueError):
    pass


class IntervalMissing(DoeError, ValueError):
    pass


class NoIncumbentFound(SolverFailure):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class BadSegmentCount(DoeError, ValueError):
    pass
