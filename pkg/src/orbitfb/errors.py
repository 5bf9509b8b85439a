"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`OrbitFeedbackError`. The CLI maps :class:`ConfigError` to exit code 2
and :class:`NumericalError` to exit code 3.
"""

from __future__ import annotations


class OrbitFeedbackError(Exception):
    """Base class."""


class DimensionError(OrbitFeedbackError, ValueError):
    """Shapes do not chain or lengths disagree."""


class NonFiniteError(OrbitFeedbackError, ValueError):
    """NaN or Inf where finite values are required."""


class ConfigError(OrbitFeedbackError, ValueError):
    """Invalid configuration value or file."""


class ParseError(OrbitFeedbackError, ValueError):
    """Malformed text file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(OrbitFeedbackError, ArithmeticError):
    """Base for failures of a numerical procedure."""


class SingularityError(NumericalError):
    """A matrix that must be inverted is numerically singular."""


class RankError(NumericalError):
    """Regression design matrix is rank deficient."""

    def __init__(self, rank: int, required: int):
        self.rank = rank
        self.required = required
        super().__init__(f"numerical rank {rank} < required {required}")


class DivergenceError(NumericalError):
    """A simulated trajectory left the finite / guarded region."""

    def __init__(self, message: str, step: int | None = None, episode: int | None = None):
        self.step = step
        self.episode = episode
        where = []
        if episode is not None:
            where.append(f"episode {episode}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
