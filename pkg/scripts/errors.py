"""
Exception hierarchy shared by every grsir script.

Two families, each carrying the exit code the CLI maps it to:
  InputError      exit 2  bad data, bad flags, ill-posed requests
  NumericalError  exit 3  the linear algebra refused (singular / indefinite / no signal)
"""
from __future__ import annotations


class GrsirError(Exception):
    exit_code = 1


class InputError(GrsirError, ValueError):
    exit_code = 2


class NumericalError(GrsirError, ArithmeticError):
    exit_code = 3


# ----------------------------- input errors ------------------------------ #

class DegenerateResponse(InputError):
    """Too few distinct responses to build the requested slices."""


class DegenerateSlice(InputError):
    """A slice proportion is zero."""


class DimensionTooSmall(InputError):
    pass


class SubspaceTooSmall(InputError):
    pass


class OutOfRange(InputError):
    pass


class DegenerateIndex(InputError):
    """Projected index is (numerically) constant; no link can be fitted."""


class NotSymmetric(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class InvalidConfig(InputError):
    pass


# --------------------------- numerical errors ---------------------------- #

class SingularCovariance(NumericalError):
    hint = "the predictor covariance is singular; use a regularized prior (ridge, pca-ridge, pca-tikhonov)"


class SingularBasisCovariance(NumericalError):
    pass


class NoSignal(NumericalError):
    pass


class CholeskyFailure(NumericalError):
    pass


class NonPositiveDefinite(NumericalError):
    pass


class SaturatedSignal(NumericalError):
    hint = "the slices explain the predictors exactly; use fewer slices or more observations"
