"""Exception hierarchy; each error carries the CLI exit code it maps to."""

from typing import Optional


class PEnergyError(Exception):
    exit_code: int = 1


class UsageError(PEnergyError, ValueError):
    exit_code = 2


class SchemeParseError(PEnergyError, ValueError):
    exit_code = 2


class AssumptionViolation(PEnergyError):
    """A finite-depth combinatorial certificate failed."""

    exit_code = 1


class NoBracketError(PEnergyError):
    exit_code = 1


class InfeasibleProblemError(PEnergyError):
    """Empty constraint set: ring ground set empty or a cutoff support filling the level."""

    exit_code = 1


class InfiniteDisparityError(PEnergyError):
    exit_code = 1


class SupportSeparationError(PEnergyError):
    exit_code = 1


class SolverNonConvergenceError(PEnergyError):
    exit_code = 3

    def __init__(
        self, message: str, residual: float, iterations: int, context: Optional[str] = None
    ) -> None:
        super().__init__(message if context is None else f"{message} ({context})")
        self.residual = residual
        self.iterations = iterations
