"""Exception hierarchy shared by all restrictlab modules."""


class RestrictLabError(Exception):
    """Base class for every error raised by this package."""


# surfaces
class NonSymmetric(RestrictLabError, ValueError):
    pass


class BadShape(RestrictLabError, ValueError):
    pass


class NearSingular(RestrictLabError, ValueError):
    pass


class UnknownName(RestrictLabError, KeyError):
    pass


# conditions
class EmptyBox(RestrictLabError, ValueError):
    pass


class SingularHessian(RestrictLabError, ArithmeticError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class RankDeficientD(RestrictLabError, ArithmeticError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


# geometry
class NoConvergence(RestrictLabError, ArithmeticError):
    pass


class LeftBox(RestrictLabError, ArithmeticError):
    pass


class PreconditionFailed(RestrictLabError, ValueError):
    pass


# extension / wave packets
class ResolutionTooCoarse(RestrictLabError, ValueError):
    pass


class TailNotConverged(RestrictLabError, ArithmeticError):
    pass


class GridTooCoarse(RestrictLabError, ValueError):
    pass


class MixedDecompositions(RestrictLabError, ValueError):
    pass


class InsufficientStrata(RestrictLabError, ValueError):
    pass


# incidence
class ScaleMismatch(RestrictLabError, ValueError):
    pass


# experiments
class SearchFailed(RestrictLabError, RuntimeError):
    pass


class NormalFormFailed(RestrictLabError, ValueError):
    pass


class ConditionNotMet(RestrictLabError, RuntimeError):
    """An experiment refused to run because a prerequisite condition failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(RestrictLabError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column
