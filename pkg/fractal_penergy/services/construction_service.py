import logging
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from fractal_penergy.core.errors import (
    AssumptionViolation,
    InfeasibleProblemError,
    SupportSeparationError,
    UsageError,
)
from fractal_penergy.models.schemas import (
    FINITE_DEPTH,
    ConstructionReport,
    CutoffRecord,
    LevelRecord,
)
from fractal_penergy.services.disparity_service import DisparityService
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.penergy_service import PEnergyService
from fractal_penergy.services.types import (
    CellFunction,
    CellWord,
    ConstructionConfig,
    DirichletProblem,
)
from fractal_penergy.utils.workers import run_jobs

ONE_DIM_EXTRA_LEVELS = 6


def harmonic_number(k: int) -> float:
    return float(sum(1.0 / j for j in range(1, k + 1)))


@dataclass(frozen=True, eq=False)
class Rings:
    """A_j ⊆ B_j ⊆ B*_j around w_j, as T_level index arrays."""

    level: int
    a: np.ndarray
    b: np.ndarray
    b_star: np.ndarray


class ConstructionService:
    """Cutoff hierarchy around a target point and the finite-depth checks of its bounds.

    For each level n the service builds f_{n,j} for j = 1..k(n), sums them with
    weights 1/j into f_n, and reports energies, plateau values, Lᵖ norms and the
    projected energies of the lift.
    """

    logger = logging.getLogger(__name__)

    def __init__(
        self,
        penergy: PEnergyService,
        measure: SelfSimilarMeasure,
        disparity: DisparityService,
        config: ConstructionConfig,
        max_level: int = 6,
        cert_depth: int = 3,
        jobs: int = 1,
    ) -> None:
        self.penergy = penergy
        self.partition = penergy.partition
        self.measure = measure
        self.disparity = disparity
        self.config = config
        self.max_level = max_level
        self.cert_depth = cert_depth
        self.jobs = jobs
        self._rings: Dict[int, Rings] = {}
        self._cutoffs: Dict[Tuple[int, int, str], CellFunction] = {}

    @property
    def level_cap(self) -> int:
        extra = ONE_DIM_EXTRA_LEVELS if self.partition.scheme.dimension == 1 else 0
        return self.max_level + extra

    @property
    def n_max(self) -> int:
        return min(self.config.step * (self.config.k_max + 1) - 1, self.level_cap)

    def k_of(self, n: int) -> int:
        return min(n // self.config.step, self.config.k_max)

    # targets and rings

    @cached_property
    def targets(self) -> List[CellWord]:
        return self.target_sequence()

    def target_sequence(self) -> List[CellWord]:
        """w_j = ω(j(M*+1)) for j = 0..k_max, checked against π^{M*+1}(w_{j+1}) = w_j."""
        step = self.config.step
        targets = [self.config.address(j * step) for j in range(self.config.k_max + 1)]
        for j in range(self.config.k_max):
            if self.partition.pi_k(targets[j + 1], step) != targets[j]:
                raise AssumptionViolation(
                    f"π^{step}({targets[j + 1]}) != {targets[j]}: target words are not nested"
                )
        return targets

    def rings(self, j: int) -> Rings:
        """(A_j, B_j, B*_j) = (Γ_{M*}(w_j), Γ_{2M*}(w_j), Γ_1(B_j))."""
        if j not in self._rings:
            if not 0 <= j <= self.config.k_max:
                raise ValueError(f"j must lie in 0..{self.config.k_max}, got {j}")
            w = self.targets[j]
            level = w.level
            center = np.array([w.index(self.partition.branching)])
            mstar = self.config.mstar
            b = self.partition.local_gamma_indices(level, center, 2 * mstar)
            self._rings[j] = Rings(
                level=level,
                a=self.partition.local_gamma_indices(level, center, mstar),
                b=b,
                b_star=self.partition.local_gamma_indices(level, b, 1),
            )
        return self._rings[j]

    def ring_words(self, j: int) -> Tuple[List[CellWord], List[CellWord], List[CellWord]]:
        r = self.rings(j)
        words = self.partition.words
        return words(r.level, r.a), words(r.level, r.b), words(r.level, r.b_star)

    def nesting_violation(self) -> Optional[int]:
        """First j with π^{M*+1}(B*_{j+1}) ⊄ A_j, if any."""
        step = self.config.step
        for j in range(self.config.k_max):
            parents = self.partition.ancestor_indices(self.rings(j + 1).b_star, step)
            if not np.isin(parents, self.rings(j).a).all():
                return j
        return None

    # cutoffs

    def build_cutoff(self, n: int, j: int, mode: Optional[str] = None) -> CellFunction:
        """f_{n,j}: 1 on S^{n-(M*+1)j}(A_j), 0 off S^{n-(M*+1)j}(B_j)."""
        mode = mode or self.config.cutoff_mode
        if j < 1 or self.config.step * j > n:
            raise ValueError(f"cutoff needs j >= 1 and (M*+1)j <= n, got n={n}, j={j}")
        key = (n, j, mode)
        if key in self._cutoffs:
            return self._cutoffs[key]
        rings = self.rings(j)
        depth = n - rings.level
        if rings.b.size == self.partition.level_size(rings.level):
            raise InfeasibleProblemError(
                f"B_{j} is all of T_{rings.level}: no zero boundary at n={n}; raise the level"
            )
        t0 = time.perf_counter()
        if mode == "min":
            values = self._cell_cutoff(n, rings.a, rings.b, depth)
        else:
            mstar = self.config.mstar

            def per_cell(cell: int) -> np.ndarray:
                support = self.partition.local_gamma_indices(rings.level, np.array([cell]), mstar)
                return self._cell_cutoff(n, np.array([cell]), support, depth)

            values = np.max(np.stack(run_jobs(per_cell, list(rings.a), self.jobs)), axis=0)
        cutoff = CellFunction(n, values)
        self._cutoffs[key] = cutoff
        self.logger.debug(
            "Cutoff f_(%d,%d) [%s] built in %.2fs", n, j, mode, time.perf_counter() - t0
        )
        return cutoff

    def _cell_cutoff(
        self, n: int, one_cells: np.ndarray, support_cells: np.ndarray, depth: int
    ) -> np.ndarray:
        graph = self.partition.level_graph(n)
        ones = self.partition.refine_indices(one_cells, depth)
        free = np.setdiff1d(self.partition.refine_indices(support_cells, depth), ones)
        fixed = np.setdiff1d(np.arange(graph.size), free)
        problem = DirichletProblem(
            graph=graph,
            fixed_index=fixed,
            fixed_value=np.isin(fixed, ones).astype(np.float64),
            p=self.config.p,
            level=n,
        )
        result = self.penergy.solve_dirichlet(problem)
        return result.minimizer.values  # type: ignore[union-attr]

    def compare_cutoff_modes(self, n: int, j: int) -> Tuple[float, float]:
        """Energies of the harmonic-minimizer and max-of-cell-cutoffs builds of f_{n,j}."""
        p = self.config.p
        return (
            self.penergy.energy(self.build_cutoff(n, j, "min"), p),
            self.penergy.energy(self.build_cutoff(n, j, "max"), p),
        )

    # assembly

    def assemble(self, n: int) -> CellFunction:
        """f_n = Σ_{j≤k} f_{n,j}/j after checking support separation of the rings."""
        k = self.k_of(n)
        if k < 1:
            raise ValueError(f"level {n} is below M*+1={self.config.step}: no cutoff fits")
        cutoffs = [self.build_cutoff(n, j) for j in range(1, k + 1)]
        for j in range(2, k + 1):
            self._check_separation(n, j, cutoffs[j - 1])
        values = np.zeros(self.partition.level_size(n))
        for j, cutoff in enumerate(cutoffs, start=1):
            values += cutoff.values / j
        return CellFunction(n, values)

    def _check_separation(self, n: int, j: int, cutoff: CellFunction) -> None:
        outer = self.rings(j - 1)
        support = np.flatnonzero(cutoff.values > 0)
        halo = self.partition.gamma_indices(n, support, 1)
        parents = self.partition.ancestor_indices(halo, n - outer.level)
        outside = halo[~np.isin(parents, outer.a)]
        if outside.size:
            cell = self.partition.words(n, outside[:1])[0]
            raise SupportSeparationError(
                f"Γ_1(supp f_({n},{j})) leaves S^{n - outer.level}(A_{j - 1}) at {cell} "
                f"({outside.size} cells); check M* and the rings"
            )

    # report

    def _level_record(self, n: int) -> Tuple[LevelRecord, List[CutoffRecord]]:
        cfg = self.config
        p, sigma, step = cfg.p, cfg.sigma, cfg.step
        k = self.k_of(n)
        cutoffs = run_jobs(lambda j: self.build_cutoff(n, j), list(range(1, k + 1)), self.jobs)
        energies = [self.penergy.energy(f, p) for f in cutoffs]
        records = [
            CutoffRecord(n=n, j=j, energy=e, scaled_energy=e * sigma ** (n - step * j))
            for j, e in enumerate(energies, start=1)
        ]

        f_n = self.assemble(n)
        total = self.penergy.energy(f_n, p)
        decomposition = float(sum(e * j ** (-p) for j, e in enumerate(energies, start=1)))
        rel_error = abs(total - decomposition) / max(abs(total), np.finfo(float).tiny)

        inner = self.rings(k)
        plateau_cells = self.partition.refine_indices(inner.a, n - inner.level)
        plateau_values = f_n.values[plateau_cells]
        if np.ptp(plateau_values) > 1e-12:
            self.logger.warning(
                "f_%d is not constant on the innermost ring (spread %.3e)", n, np.ptp(plateau_values)
            )

        projected = [
            (m, sigma**m * self.penergy.energy(self.measure.project(f_n, m), p))
            for m in range(1, n + 1)
        ]
        record = LevelRecord(
            n=n,
            k=k,
            cutoff_energies=energies,
            total_energy=total,
            decomposition_sum=decomposition,
            decomposition_rel_error=float(rel_error),
            scaled_energy=sigma**n * total,
            plateau=float(plateau_values.min()),
            plateau_expected=harmonic_number(k),
            max_value=float(f_n.values.max()),
            lp_norm=self.measure.lp_norm(f_n, p),
            projected_scaled=projected,
            support_separated=True,
        )
        return record, records

    def verify_bounds(self) -> ConstructionReport:
        """Run the whole hierarchy for n = M*+1..n_max and compare against the bounds."""
        cfg = self.config
        p, step = cfg.p, cfg.step
        if self.n_max < step:
            raise UsageError(f"level cap {self.level_cap} is below M*+1={step}")
        t0 = time.perf_counter()
        targets = self.targets
        violation = self.nesting_violation()
        if violation is not None:
            raise AssumptionViolation(
                f"π^{step}(B*_{violation + 1}) ⊄ A_{violation} around {targets[violation + 1]}; "
                f"M*={cfg.mstar} is too small for this scheme"
            )
        lstar = self.partition.certify_degree_bound(self.cert_depth)

        levels: List[LevelRecord] = []
        cutoffs: List[CutoffRecord] = []
        for n in range(step, self.n_max + 1):
            record, cut = self._level_record(n)
            levels.append(record)
            cutoffs.extend(cut)
            self.logger.info(
                "Level n=%d k=%d: scaled energy %.6g, plateau %.6g, decomposition error %.1e",
                n, record.k, record.scaled_energy, record.plateau, record.decomposition_rel_error,
            )

        c1 = max(c.scaled_energy for c in cutoffs)
        zeta_p = float(special.zeta(p))
        energy_bound = c1 * zeta_p
        max_scaled = max(r.scaled_energy for r in levels)

        c_mu, gamma = self.measure.decay_constant()
        head = ((lstar + 1) ** (2 * cfg.mstar) * c_mu) ** (1.0 / p)
        ratio = gamma ** (step / p)
        norm_bound = head * ratio / (1.0 - ratio)
        max_lp = max(r.lp_norm for r in levels)

        max_projected = max(v for r in levels for _, v in r.projected_scaled)
        cover_level = min(self.cert_depth, self.n_max)
        covering = self.disparity.covering_of(
            cover_level, np.arange(self.partition.level_size(cover_level))
        )
        c2_formula = float(lstar**covering.n_e * covering.n_e ** (p - 1) * covering.n_t)

        applicable = cfg.sigma <= 1
        if not applicable:
            self.logger.warning("σ=%.4g > 1: boundedness check inapplicable", cfg.sigma)
        k_achieved = max(r.k for r in levels)
        truncated = k_achieved < cfg.k_max
        label = FINITE_DEPTH if applicable else FINITE_DEPTH + "; boundedness check inapplicable (σ>1)"
        if truncated:
            self.logger.warning(
                "Level cap %d stops the hierarchy at k=%d of k_max=%d; raise --max-level for the rest",
                self.level_cap, k_achieved, cfg.k_max,
            )
            label += f"; truncated at k={k_achieved}/{cfg.k_max} by level cap {self.level_cap}"
        report = ConstructionReport(
            scheme=self.partition.scheme.name,
            scheme_hash=self.partition.scheme.digest(),
            p=p,
            sigma=cfg.sigma,
            sigma_source=cfg.sigma_source,
            k_max=cfg.k_max,
            k_achieved=k_achieved,
            mstar=cfg.mstar,
            lstar=lstar,
            omega=str(cfg.omega),
            cutoff_mode=cfg.cutoff_mode,  # type: ignore[arg-type]
            targets=[str(w) for w in targets],
            nesting_holds=True,
            levels=levels,
            cutoffs=cutoffs,
            c1=c1,
            zeta_p=zeta_p,
            energy_bound=energy_bound,
            max_scaled_energy=max_scaled,
            energy_bound_holds=max_scaled <= energy_bound * (1 + 1e-12),
            norm_bound=norm_bound,
            max_lp_norm=max_lp,
            norm_bound_holds=max_lp <= norm_bound * (1 + 1e-12),
            c2_observed=max_projected / max_scaled if max_scaled > 0 else float("inf"),
            c2_formula_per_c=c2_formula,
            covering_nt=covering.n_t,
            covering_ne=covering.n_e,
            boundedness_applicable=applicable,
            depth=self.n_max,
            truncated=truncated,
            label=label,
        )
        self.logger.info(
            "Construction %s p=%.3g σ=%.4g: k=%d/%d, C1=%.4g, max scaled %.4g <= %.4g: %s (%.1fs)",
            report.scheme, p, cfg.sigma, report.k_achieved, cfg.k_max, c1, max_scaled,
            energy_bound, report.energy_bound_holds, time.perf_counter() - t0,
        )
        return report
