from typing import Protocol

from fractal_penergy.services.types import ConductanceResult, DirichletProblem


class DirichletSolverInterface(Protocol):
    def solve(self, problem: DirichletProblem) -> ConductanceResult:
        """Minimize the p-energy subject to the problem's prescribed values."""
