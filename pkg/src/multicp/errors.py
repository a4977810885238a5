"""Exception hierarchy for multicp."""

from __future__ import annotations

import numpy as np


class ChangePointError(Exception):
    """Base class for all package errors."""


class ArgumentError(ChangePointError, ValueError):
    """Invalid argument shape, count or configuration."""


class DomainError(ChangePointError, ValueError):
    """An observation lies outside the support of a family."""

    def __init__(self, family_id: str, index: int, message: str = ""):
        self.family_id = family_id
        self.index = index
        text = f"observation {index} is outside the support of family {family_id!r}"
        if message:
            text += f": {message}"
        super().__init__(text)


class ParameterError(ChangePointError, ValueError):
    """A parameter vector lies outside its box or has the wrong dimension."""


class OptimizationError(ChangePointError, RuntimeError):
    """An iterative maximizer did not converge.

    Carries the best iterate found and the final (projected) gradient norm.
    """

    def __init__(self, message: str, best=None, grad_norm: float = float("nan"), trace=None):
        self.best = None if best is None else np.asarray(best, dtype=float)
        self.grad_norm = float(grad_norm)
        self.trace = trace if trace is not None else []
        super().__init__(f"{message} (gradient norm {self.grad_norm:.3e})")


class IntegrationError(ChangePointError, RuntimeError):
    """Numerical integration did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        self.achieved = float(achieved)
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")


class IdentifiabilityError(ChangePointError):
    """Adjacent true segments cannot be told apart."""


class LemmaCheckError(ChangePointError, AssertionError):
    """A probe violated the J1 upper bound."""

    def __init__(self, message: str, probe=None):
        self.probe = probe
        super().__init__(message)


class InferenceError(ChangePointError, np.linalg.LinAlgError):
    """The information matrix cannot be inverted."""


class NumericError(ChangePointError, FloatingPointError):
    """A density evaluation underflowed or produced a non-finite value."""


class SizeError(ChangePointError, ValueError):
    """An exhaustive search would exceed its size guard."""


class InternalError(ChangePointError, RuntimeError):
    """An internal invariant was breached."""
