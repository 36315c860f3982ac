"""Exception types raised across the package."""

import numpy as np


class MmseLabError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MmseLabError, ValueError):
    """An argument is outside the domain accepted by an operation."""


class OutOfDomainError(InvalidInputError):
    """A query falls outside the region where an analytical result is defined."""


class SingularDiagonalError(MmseLabError, np.linalg.LinAlgError):
    """The diagonal part of a matrix has a non-positive entry, so it cannot be inverted.

    ``index`` holds the offending (batch..., row) position when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotPositiveDefiniteError(MmseLabError, np.linalg.LinAlgError):
    """Cholesky factorization met a pivot below the positivity threshold."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularMatrixError(MmseLabError, np.linalg.LinAlgError):
    """A triangular solve met a zero diagonal entry."""


class NumericalConsistencyError(MmseLabError, ArithmeticError):
    """A quantity that must be real in exact arithmetic carries a large imaginary part."""


class DegenerateUserError(MmseLabError, ArithmeticError):
    """A user has an all-zero channel column or a non-positive NPI."""

    def __init__(self, message, user=None, subcarrier=None):
        super().__init__(message)
        self.user = user
        self.subcarrier = subcarrier


class FrameDetectionError(MmseLabError):
    """Detection of a frame aborted; ``subcarrier`` names the first failing subcarrier."""

    def __init__(self, message, subcarrier=None):
        super().__init__(message)
        self.subcarrier = subcarrier


class RangeError(MmseLabError, ValueError):
    """A fixed-point operand lies outside the range a unit accepts."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
