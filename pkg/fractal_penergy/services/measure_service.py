import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from fractal_penergy.services.types import CellFunction, CellWord, SubdivisionScheme

WEIGHT_SUM_TOL = 1e-12


class SelfSimilarMeasure:
    """Self-similar measure: μ(K_w) is the product of the symbol weights along w."""

    logger = logging.getLogger(__name__)

    def __init__(self, scheme: SubdivisionScheme, weights: Optional[Sequence[float]] = None) -> None:
        k = scheme.branching
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (k,):
            raise ValueError(f"expected {k} weights for scheme {scheme.name!r}, got {w.size}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("measure weights must be positive and finite")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"measure weights must sum to 1, got {w.sum():.15g}")
        self.scheme = scheme
        self.weights = w

    @classmethod
    def uniform(cls, scheme: SubdivisionScheme) -> "SelfSimilarMeasure":
        return cls(scheme)

    @property
    def branching(self) -> int:
        return self.scheme.branching

    def mass(self, w: CellWord) -> float:
        return float(np.prod(self.weights[list(w.symbols)])) if w.symbols else 1.0

    def masses(self, level: int) -> np.ndarray:
        """μ(K_w) for every w ∈ T_level, in cell index order."""
        masses = np.ones(1)
        for _ in range(level):
            masses = (masses[:, None] * self.weights[None, :]).ravel()
        return masses

    def relative_masses(self, m: int) -> np.ndarray:
        """μ(K_v)/μ(K_w) over v ∈ S^m(w); identical for every w."""
        return self.masses(m)

    def decay_constant(self) -> Tuple[float, float]:
        """(c_μ, γ) with μ(K_w) ≤ c_μ γ^|w|."""
        return 1.0, float(self.weights.max())

    def project(self, f: CellFunction, to_level: int) -> CellFunction:
        """P_n of the piecewise-constant lift of f, by one bottom-up averaging pass."""
        if to_level < 0 or to_level > f.level:
            raise ValueError(f"cannot project a level-{f.level} function to level {to_level}")
        if len(f) != self.branching**f.level:
            raise ValueError(f"function has {len(f)} values, T_{f.level} has {self.branching**f.level}")
        values = f.values
        for _ in range(f.level - to_level):
            values = values.reshape(-1, self.branching) @ self.weights
        return CellFunction(to_level, values)

    def lp_norm(self, f: CellFunction, p: float) -> float:
        if not p > 1:
            raise ValueError(f"p must be > 1, got {p}")
        return float(np.sum(self.masses(f.level) * np.abs(f.values) ** p) ** (1.0 / p))
