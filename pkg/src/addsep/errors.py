"""Exception hierarchy shared by every addsep module."""


class AddsepError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class DimensionMismatch(AddsepError, ValueError):
    pass


class SameVariable(AddsepError, ValueError):
    pass


class UnsupportedActivation(AddsepError, ValueError):
    pass


class TapeMismatch(AddsepError, ValueError):
    """Arithmetic between values recorded on different tapes."""


class NotDifferentiable(AddsepError):
    """Raised when a tape primitive has no recorded higher derivative."""


class EmptySplit(AddsepError, ValueError):
    pass


class NonFiniteLoss(AddsepError, ArithmeticError):
    pass


class FormatError(AddsepError, ValueError):
    pass


class ZeroStep(AddsepError, ZeroDivisionError):
    pass


class EvaluationError(AddsepError):
    pass


class InsufficientSamples(AddsepError, ValueError):
    pass


class AllSamplesDegenerate(AddsepError, ValueError):
    pass


class NonFinite(AddsepError, ArithmeticError):
    pass


class UnsatisfiableBalance(AddsepError, ValueError):
    pass


class NoNegatives(AddsepError, ValueError):
    pass


class MissingModel(AddsepError, FileNotFoundError):
    pass


class IncompleteRun(AddsepError):
    pass
