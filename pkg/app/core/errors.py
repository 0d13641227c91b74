"""
Exception hierarchy shared by the services.
"""

from typing import Optional


class CtcatError(Exception):
    """Base class for all library errors."""


class ScenarioError(CtcatError, ValueError):
    """A scenario or matrix file could not be parsed or violates an invariant."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CoverageError(CtcatError, ValueError):
    """An estimator needs a (instance, arm) cell that has no observations."""


class UndefinedPropensityError(CoverageError):
    """p(arm | type, instance) cannot be estimated from the counters."""


class ConfounderUnobservedError(CtcatError, ValueError):
    """A record reached a rectifying learner without its instance label."""


class UnsupportedRewardError(CtcatError, ValueError):
    """A learner received a reward outside the domain it models."""


class TerminalStateError(CtcatError, RuntimeError):
    """step() was called on an episode that already ended."""


class ConvergenceError(CtcatError, RuntimeError):
    """Candidate training finished below the configured success floor."""

    def __init__(self, message: str, success_rate: float):
        self.success_rate = success_rate
        super().__init__(message)
