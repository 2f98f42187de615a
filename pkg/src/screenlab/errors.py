"""Exception types raised across screenlab."""


class ScreenlabError(Exception):
    """Base class for all screenlab errors."""


class LengthMismatch(ScreenlabError, ValueError):
    pass


class EmptyInput(ScreenlabError, ValueError):
    pass


class RaggedLengths(ScreenlabError, ValueError):
    pass


class RuleOutOfRange(ScreenlabError, ValueError):
    pass


class InsufficientPositives(ScreenlabError, ValueError):
    pass


class InsufficientNegatives(ScreenlabError, ValueError):
    pass


class DegenerateSplit(ScreenlabError, ValueError):
    pass


class HeadTargetMismatch(ScreenlabError, ValueError):
    pass


class WrongHead(ScreenlabError, ValueError):
    pass


class EmptySamples(ScreenlabError, ValueError):
    pass


class NonFiniteLoss(ScreenlabError, FloatingPointError):
    pass


class EmptyPositives(ScreenlabError, ValueError):
    pass


class TooFewActiveSamples(ScreenlabError, ValueError):
    pass


class DimensionMismatch(ScreenlabError, ValueError):
    pass


class DomainError(ScreenlabError, ValueError):
    pass


class OptimizationFailure(ScreenlabError, RuntimeError):
    pass


class GridTooCoarse(ScreenlabError, ValueError):
    """The posterior mode sits on the edge of the parameter grid."""


class SingularPrecision(ScreenlabError, ValueError):
    pass
