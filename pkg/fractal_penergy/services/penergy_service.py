import hashlib
import logging
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from fractal_penergy import __version__
from fractal_penergy.core.config import Settings
from fractal_penergy.core.errors import InfeasibleProblemError, SolverNonConvergenceError
from fractal_penergy.models.schemas import ConductanceRecord, ResultRecord
from fractal_penergy.services.interface.solver_interface import DirichletSolverInterface
from fractal_penergy.services.interface.store_interface import ResultStoreInterface
from fractal_penergy.services.partition_service import PartitionService
from fractal_penergy.services.types import (
    CellFunction,
    CellGraph,
    CellWord,
    ConductanceResult,
    DirichletProblem,
)
from fractal_penergy.utils.workers import run_jobs

ARMIJO = 1e-4
STAGNATION_FACTOR = 1e3


def graph_energy(
    graph: CellGraph, values: np.ndarray, p: float, members: Optional[np.ndarray] = None
) -> float:
    """Half the ordered double sum of |f(w)-f(v)|^p, i.e. one term per unordered edge."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    values = np.asarray(values, dtype=np.float64)
    if members is None:
        diff = values[graph.edges_i] - values[graph.edges_j]
    else:
        members = np.asarray(members, dtype=np.int64)
        li, lj = graph.induced_edges(members)
        diff = values[members[li]] - values[members[lj]]
    return float(np.sum(np.abs(diff) ** p))


def quadratic_minimum(problem: DirichletProblem) -> float:
    """Exact p = 2 value: one sparse solve of the reduced Laplacian system."""
    graph = problem.graph
    x = np.zeros(graph.size)
    fixed = np.zeros(graph.size, dtype=bool)
    fixed[problem.fixed_index] = True
    x[problem.fixed_index] = problem.fixed_value
    _, labels = csgraph.connected_components(graph.adjacency, directed=False)
    constrained = np.isin(labels, labels[problem.fixed_index])
    free = ~fixed & constrained
    if free.any():
        lap = (sparse.diags(graph.degrees.astype(np.float64)) - graph.adjacency).tocsr()
        rhs = -(lap[free][:, fixed] @ x[fixed])
        x[free] = np.atleast_1d(spsolve(lap[free][:, free].tocsc(), rhs))
    return graph_energy(graph, x, 2.0)


def sets_digest(*index_sets: np.ndarray) -> str:
    h = hashlib.sha256()
    for idx in index_sets:
        h.update(np.unique(np.asarray(idx, dtype=np.int64)).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


@dataclass
class _SmoothedEnergy:
    """Σ (Δ² + ε²)^{p/2} over active edges, Δ = D y + c in normalized units."""

    D: sparse.csr_matrix
    c: np.ndarray
    p: float
    lower: np.ndarray
    upper: np.ndarray

    def diffs(self, y: np.ndarray) -> np.ndarray:
        return self.D @ y + self.c

    def value(self, y: np.ndarray, eps: float) -> float:
        d = self.diffs(y)
        return float(np.sum((d * d + eps * eps) ** (self.p / 2)))

    def weights(self, y: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
        d = self.diffs(y)
        return d, self.p * (d * d + eps * eps) ** (self.p / 2 - 1)

    def gradient(self, y: np.ndarray, eps: float) -> np.ndarray:
        d, w = self.weights(y, eps)
        return self.D.T @ (w * d)

    def curvature(self, y: np.ndarray, eps: float) -> np.ndarray:
        d = self.diffs(y)
        s = d * d + eps * eps
        return self.p * s ** (self.p / 2 - 2) * ((self.p - 1) * d * d + eps * eps)

    def weighted_laplacian(self, edge_weights: np.ndarray) -> sparse.csr_matrix:
        return (self.D.T @ sparse.diags(edge_weights) @ self.D).tocsr()

    def clip(self, y: np.ndarray) -> np.ndarray:
        return np.clip(y, self.lower, self.upper)


class PLaplaceSolver(DirichletSolverInterface):
    """ε-smoothed IRLS with continuation, then a damped Newton polish.

    Works in normalized units (prescribed values mapped onto [0, 1]); the
    reported value is the exact p-energy of the de-normalized minimizer.
    """

    logger = logging.getLogger(__name__)

    def __init__(
        self,
        tol_kkt: float = 1e-9,
        max_stages: int = 40,
        eps_start: float = 1e-2,
        eps_final: float = 1e-10,
        direct_max: int = 50000,
        irls_steps: int = 3,
        newton_max: int = 80,
    ) -> None:
        if eps_final <= 0 or eps_start < eps_final:
            raise ValueError("need 0 < eps_final <= eps_start")
        self.tol_kkt = tol_kkt
        self.max_stages = max_stages
        self.eps_start = eps_start
        self.eps_final = eps_final
        self.direct_max = direct_max
        self.irls_steps = irls_steps
        self.newton_max = newton_max

    @classmethod
    def from_settings(cls, cfg: Settings) -> "PLaplaceSolver":
        return cls(
            tol_kkt=cfg.solver_tol_kkt,
            max_stages=cfg.solver_max_stages,
            eps_start=cfg.solver_eps_start,
            eps_final=cfg.solver_eps_final,
            direct_max=cfg.solver_direct_max,
        )

    def solve(self, problem: DirichletProblem) -> ConductanceResult:
        t0 = time.perf_counter()
        graph, p = problem.graph, problem.p
        x = np.zeros(graph.size)
        fixed = np.zeros(graph.size, dtype=bool)
        fixed[problem.fixed_index] = True
        x[problem.fixed_index] = problem.fixed_value

        n_comp, labels = csgraph.connected_components(graph.adjacency, directed=False)
        lo = np.full(n_comp, np.inf)
        hi = np.full(n_comp, -np.inf)
        np.minimum.at(lo, labels[problem.fixed_index], problem.fixed_value)
        np.maximum.at(hi, labels[problem.fixed_index], problem.fixed_value)
        constrained = np.isfinite(lo)[labels]

        unknown = ~fixed & constrained
        flat = unknown & (lo[labels] == hi[labels])
        x[flat] = lo[labels[flat]]
        unknown &= ~flat
        free_idx = np.flatnonzero(unknown)

        if free_idx.size == 0:
            value = graph_energy(graph, x, p)
            return ConductanceResult(value, CellFunction(problem.level, x), 0.0, 0, 0.0)

        shift = float(problem.fixed_value.min())
        scale = float(problem.fixed_value.max()) - shift
        t = (x - shift) / scale
        work = self._assemble(graph, unknown, free_idx, t, (lo[labels] - shift) / scale,
                              (hi[labels] - shift) / scale, p)

        y = work.clip(self._solve_spd(work.weighted_laplacian(np.ones(work.c.size)), -work.D.T @ work.c))
        iterations = 1
        tol = self.tol_kkt
        kkt = float(np.abs(work.gradient(y, self.eps_final)).max())
        stagnated = False

        if p != 2 and kkt > tol:
            y, its = self._continuation(work, y)
            iterations += its
            y, its, kkt, stagnated = self._newton_polish(work, y, tol)
            iterations += its

        if kkt > tol:
            if kkt <= STAGNATION_FACTOR * tol:
                stagnated = True
                self.logger.warning(
                    "Solve stagnated at kkt=%.3e (tol %.1e) after %d iterations; accepted",
                    kkt, tol, iterations,
                )
            else:
                raise SolverNonConvergenceError(
                    "p-energy minimization did not converge",
                    residual=kkt * scale ** (p - 1),
                    iterations=iterations,
                    context=f"p={p}, unknowns={free_idx.size}",
                )

        x[free_idx] = shift + scale * y
        value = graph_energy(graph, x, p)
        self.logger.debug(
            "Solved p=%.3g with %d unknowns: value=%.12g kkt=%.2e iters=%d (%.2fs)",
            p, free_idx.size, value, kkt, iterations, time.perf_counter() - t0,
        )
        return ConductanceResult(
            value=value,
            minimizer=CellFunction(problem.level, x),
            kkt_residual=kkt * scale ** (p - 1),
            iterations=iterations,
            epsilon_final=self.eps_final * scale,
            stagnated=stagnated,
        )

    @staticmethod
    def _assemble(
        graph: CellGraph,
        unknown: np.ndarray,
        free_idx: np.ndarray,
        t: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
        p: float,
    ) -> _SmoothedEnergy:
        pos = np.full(graph.size, -1, dtype=np.int64)
        pos[free_idx] = np.arange(free_idx.size)
        active = unknown[graph.edges_i] | unknown[graph.edges_j]
        ai, aj = graph.edges_i[active], graph.edges_j[active]
        rows = np.arange(ai.size)
        mi, mj = unknown[ai], unknown[aj]
        D = sparse.csr_matrix(
            (
                np.concatenate([np.ones(mi.sum()), -np.ones(mj.sum())]),
                (np.concatenate([rows[mi], rows[mj]]), np.concatenate([pos[ai[mi]], pos[aj[mj]]])),
            ),
            shape=(ai.size, free_idx.size),
        )
        c = np.where(mi, 0.0, t[ai]) - np.where(mj, 0.0, t[aj])
        return _SmoothedEnergy(D, c, p, lower[free_idx], upper[free_idx])

    def _continuation(self, work: _SmoothedEnergy, y: np.ndarray) -> Tuple[np.ndarray, int]:
        eps = self.eps_start
        iterations = 0
        for _ in range(self.max_stages):
            for _ in range(self.irls_steps):
                d, w = work.weights(y, eps)
                g = work.D.T @ (w * d)
                step = self._solve_spd(work.weighted_laplacian(w), -g)
                y_next, moved = self._line_search(work, y, step, g, eps)
                iterations += 1
                change = float(np.abs(y_next - y).max())
                y = y_next
                # stage accuracy tracks ε
                if not moved or change <= eps:
                    break
            if eps <= self.eps_final:
                break
            eps = max(eps / 2, self.eps_final)
        return y, iterations

    def _newton_polish(
        self, work: _SmoothedEnergy, y: np.ndarray, tol: float
    ) -> Tuple[np.ndarray, int, float, bool]:
        eps = self.eps_final
        iterations = 0
        stagnated = False
        g = work.gradient(y, eps)
        kkt = float(np.abs(g).max())
        while kkt > tol and iterations < self.newton_max:
            step = self._solve_spd(work.weighted_laplacian(work.curvature(y, eps)), -g)
            y_next, moved = self._line_search(work, y, step, g, eps)
            if not moved:
                candidate = work.clip(y + step)
                g_cand = work.gradient(candidate, eps)
                if float(np.abs(g_cand).max()) >= kkt:
                    stagnated = True
                    break
                y_next = candidate
            y = y_next
            iterations += 1
            g = work.gradient(y, eps)
            kkt = float(np.abs(g).max())
        return y, iterations, kkt, stagnated

    @staticmethod
    def _line_search(
        work: _SmoothedEnergy, y: np.ndarray, step: np.ndarray, g: np.ndarray, eps: float
    ) -> Tuple[np.ndarray, bool]:
        """Armijo backtracking; the box projection never increases the objective."""
        f0 = work.value(y, eps)
        slope = float(g @ step)
        if slope >= 0 or not np.any(step):
            return y, False
        alpha = 1.0
        while alpha >= 1e-10:
            candidate = work.clip(y + alpha * step)
            if work.value(candidate, eps) <= f0 + ARMIJO * alpha * slope:
                return candidate, bool(np.abs(candidate - y).max() > 1e-15)
            alpha /= 2
        return y, False

    def _solve_spd(self, A: sparse.csr_matrix, b: np.ndarray) -> np.ndarray:
        if A.shape[0] <= self.direct_max:
            return np.atleast_1d(spsolve(A.tocsc(), b))
        diag = A.diagonal()
        precond = LinearOperator(A.shape, matvec=lambda v: v / diag)
        sol, info = cg(A, b, rtol=1e-12, maxiter=10 * A.shape[0], M=precond)
        if info != 0:
            self.logger.warning("CG did not converge (info=%d) on %d unknowns; using spsolve", info, A.shape[0])
            return np.atleast_1d(spsolve(A.tocsc(), b))
        return sol


class PEnergyService:
    """p-energies, Dirichlet problems, effective and ring conductances on one scheme."""

    logger = logging.getLogger(__name__)

    def __init__(
        self,
        partition: PartitionService,
        solver: DirichletSolverInterface,
        store: Optional[ResultStoreInterface] = None,
        jobs: int = 1,
    ) -> None:
        self.partition = partition
        self.solver = solver
        self.store = store
        self.jobs = jobs

    @property
    def scheme_digest(self) -> str:
        return self.partition.scheme.digest()

    def energy(
        self, f: CellFunction, p: float, members: Optional[Iterable[CellWord]] = None
    ) -> float:
        """ℰ^n_{p,A}(f); ``members=None`` means A = T_n."""
        graph = self.partition.level_graph(f.level)
        if len(f) != graph.size:
            raise ValueError(f"function has {len(f)} values, T_{f.level} has {graph.size} cells")
        idx = None
        if members is not None:
            words = list(members)
            if any(w.level != f.level for w in words):
                raise ValueError(f"all cells of A must have level {f.level}")
            idx = np.unique(self.partition.indices(words))
        return graph_energy(graph, f.values, p, idx)

    def solve_dirichlet(self, problem: DirichletProblem) -> ConductanceResult:
        return self.solver.solve(problem)

    def effective_conductance(
        self, a1: Sequence[CellWord], a2: Sequence[CellWord], m: int, p: float
    ) -> ConductanceResult:
        """ℰ_{p,m}(A1, A2, T_n): 1 on S^m(A1), 0 on S^m(A2), minimized on T_{n+m}."""
        if m < 0:
            raise ValueError(f"m must be >= 0, got {m}")
        if not a1 or not a2:
            raise ValueError("both constraint sets must be non-empty")
        n = self.partition.common_level(list(a1) + list(a2))
        i1 = np.unique(self.partition.indices(a1))
        i2 = np.unique(self.partition.indices(a2))
        if np.intersect1d(i1, i2).size:
            raise ValueError("A1 and A2 must be disjoint")

        def compute() -> ConductanceResult:
            graph = self.partition.level_graph(n + m)
            one = self.partition.refine_indices(i1, m)
            zero = self.partition.refine_indices(i2, m)
            problem = DirichletProblem(
                graph=graph,
                fixed_index=np.concatenate([one, zero]),
                fixed_value=np.concatenate([np.ones(one.size), np.zeros(zero.size)]),
                p=p,
                level=n + m,
            )
            return self.solver.solve(problem)

        return self._cached(p, n, m, sets_digest(i1, i2), compute)

    def ring_conductance(self, w: CellWord, m: int, p: float, mstar: int) -> ConductanceResult:
        """ℰ_{p,m}(w, T_|w| \\ Γ_{M*}(w), T_|w|).

        The minimization is carried out on the patch S^m(Γ_{M*+1}(w)): every
        other vertex is held at 0 and only touches 0-valued neighbors, so the
        value equals the one on T_{|w|+m}. The minimizer covers the patch only.
        """
        n = w.level
        if n < 1:
            raise ValueError("ring conductance needs |w| >= 1")
        graph = self.partition.level_graph(n)
        wi = w.index(self.partition.branching)
        inner = self.partition.gamma_indices(n, np.array([wi]), mstar)
        if inner.size == graph.size:
            raise InfeasibleProblemError(
                f"Γ_{mstar}({w}) is all of T_{n}: no ground set; use a deeper word"
            )

        def compute() -> ConductanceResult:
            outer = self.partition.gamma_indices(n, np.array([wi]), mstar + 1)
            patch, fine = self.partition.patch_graph(n, outer, m)
            ancestor = self.partition.ancestor_indices(fine, m)
            one = ancestor == wi
            zero = ~np.isin(ancestor, inner)
            fixed = np.flatnonzero(one | zero)
            problem = DirichletProblem(
                graph=patch,
                fixed_index=fixed,
                fixed_value=one[fixed].astype(np.float64),
                p=p,
                level=n + m,
            )
            return self.solver.solve(problem)

        return self._cached(p, n, m, sets_digest(np.array([wi]), inner), compute)

    def ring_classes(self, levels: Iterable[int], mstar: int) -> List[CellWord]:
        """One representative word per translation class of (Γ_{M*+1}(w), Γ_{M*}(w))."""
        seen: Dict[Tuple, CellWord] = {}
        for n in levels:
            graph = self.partition.level_graph(n)
            inner_reach = graph.reach(mstar)
            outer_reach = graph.reach(mstar + 1)
            for wi in range(graph.size):
                inner = inner_reach.indices[inner_reach.indptr[wi] : inner_reach.indptr[wi + 1]]
                if inner.size == graph.size:
                    continue
                outer = outer_reach.indices[outer_reach.indptr[wi] : outer_reach.indptr[wi + 1]]
                key = (
                    self.partition.relative_shape(n, wi, outer),
                    self.partition.relative_shape(n, wi, inner),
                )
                seen.setdefault(key, graph.word(wi))
        return list(seen.values())

    def ring_sup(
        self, m: int, p: float, mstar: int, levels: Iterable[int]
    ) -> Tuple[float, CellWord]:
        """Max of ring conductances over deduplicated samples at the given levels."""
        levels = list(levels)
        words = self.ring_classes(levels, mstar)
        if not words:
            raise InfeasibleProblemError(
                f"no word at levels {levels} has a non-empty ring ground set (M*={mstar})"
            )
        t0 = time.perf_counter()
        results = run_jobs(
            lambda w: self.ring_conductance(w, m, p, mstar), words, self.jobs, desc=f"rings m={m}"
        )
        best = int(np.argmax([r.value for r in results]))
        self.logger.info(
            "Ring sup p=%.3g m=%d over %d classes (levels %s): %.6g at w=%s (%.2fs)",
            p, m, len(words), levels, results[best].value, words[best], time.perf_counter() - t0,
        )
        return results[best].value, words[best]

    def _cached(
        self, p: float, n: int, m: int, sets_hash: str, compute: Callable[[], ConductanceResult]
    ) -> ConductanceResult:
        if self.store is None:
            return compute()
        key = hashlib.sha256(
            f"{self.scheme_digest}|{p!r}|{n}|{m}|{sets_hash}".encode("utf-8")
        ).hexdigest()
        hit = self.store.get(key)
        if hit is not None:
            rec = ConductanceRecord.model_validate(hit.outputs)
            return ConductanceResult(
                value=rec.value,
                minimizer=None,
                kkt_residual=rec.kkt,
                iterations=rec.iters,
                epsilon_final=rec.epsilon_final,
                cached=True,
            )
        result = compute()
        record = ConductanceRecord(
            scheme=self.scheme_digest,
            p=p,
            n=n,
            m=m,
            sets_hash=sets_hash,
            value=result.value,
            kkt=result.kkt_residual,
            iters=result.iterations,
            epsilon_final=result.epsilon_final,
        )
        self.store.put(
            ResultRecord(
                subcommand="solve",
                input_hash=key,
                outputs=record.model_dump(),
                created_at=datetime.now(timezone.utc).isoformat(),
                tool_version=__version__,
            )
        )
        return result
