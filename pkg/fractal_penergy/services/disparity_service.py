import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import minimize
from scipy.sparse import csgraph

from fractal_penergy.core.errors import InfiniteDisparityError
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.partition_service import PartitionService
from fractal_penergy.services.types import CellFunction, CellGraph, Covering, DisparityEstimate
from fractal_penergy.utils.workers import run_jobs

ORACLE_START_MAX = 1024


def incidence(size: int, ei: np.ndarray, ej: np.ndarray) -> sparse.csr_matrix:
    rows = np.arange(ei.size)
    return sparse.csr_matrix(
        (np.concatenate([np.ones(ei.size), -np.ones(ej.size)]), (np.concatenate([rows, rows]), np.concatenate([ei, ej]))),
        shape=(ei.size, size),
    )


def _signed_power(d: np.ndarray, q: float) -> np.ndarray:
    return np.sign(d) * np.abs(d) ** q


class DisparityRatio:
    """R(g) = ℰ_{p,A}(Avg_m g) / ℰ_{p,S^m(A)}(g) on l(S^m(A)).

    ``null_basis`` holds orthonormal columns spanning the locally constant
    functions of the fine graph; R is invariant along them.
    """

    def __init__(
        self,
        avg: sparse.csr_matrix,
        coarse: sparse.csr_matrix,
        fine: sparse.csr_matrix,
        p: float,
        null_basis: np.ndarray,
    ) -> None:
        self.avg = avg
        self.coarse = coarse
        self.fine = fine
        self.p = p
        self.null_basis = null_basis

    @property
    def size(self) -> int:
        return self.fine.shape[1]

    def parts(self, g: np.ndarray) -> Tuple[float, float]:
        dc = self.coarse @ (self.avg @ g)
        df = self.fine @ g
        return float(np.sum(np.abs(dc) ** self.p)), float(np.sum(np.abs(df) ** self.p))

    def value(self, g: np.ndarray) -> float:
        num, den = self.parts(g)
        return num / den if den > 0 else 0.0

    def value_and_grad(self, g: np.ndarray) -> Tuple[float, np.ndarray]:
        dc = self.coarse @ (self.avg @ g)
        df = self.fine @ g
        num = float(np.sum(np.abs(dc) ** self.p))
        den = float(np.sum(np.abs(df) ** self.p))
        if den <= 0:
            return 0.0, np.zeros_like(g)
        ratio = num / den
        grad_num = self.avg.T @ (self.coarse.T @ (self.p * _signed_power(dc, self.p - 1)))
        grad_den = self.fine.T @ (self.p * _signed_power(df, self.p - 1))
        return ratio, (grad_num - ratio * grad_den) / den

    def project(self, g: np.ndarray) -> np.ndarray:
        return g - self.null_basis @ (self.null_basis.T @ g)

    def normalize(self, g: np.ndarray) -> Optional[np.ndarray]:
        g = self.project(g)
        norm = float(np.linalg.norm(g))
        return g / norm if norm > 1e-300 else None


class DisparityService:
    """Covering systems and neighbor disparity constants σ_{p,m}(A), σ_{p,m,n}."""

    logger = logging.getLogger(__name__)

    def __init__(
        self,
        partition: PartitionService,
        measure: SelfSimilarMeasure,
        restarts: int = 32,
        seed: int = 0,
        jobs: int = 1,
        max_iter: int = 400,
    ) -> None:
        self.partition = partition
        self.measure = measure
        self.restarts = restarts
        self.seed = seed
        self.jobs = jobs
        self.max_iter = max_iter

    # coverings

    def star_patches(self, level: int, members: np.ndarray) -> List[np.ndarray]:
        members = np.unique(np.asarray(members, dtype=np.int64))
        graph = self.partition.level_graph(level)
        patches = []
        for w in members:
            star = np.concatenate([[w], graph.neighbors(int(w))])
            patches.append(np.intersect1d(star, members))
        return patches

    def covering_of(
        self, level: int, members: np.ndarray, patches: Optional[Sequence[np.ndarray]] = None
    ) -> Covering:
        """Star covering of A (or a supplied family) with its verified (N_T, N_E)."""
        members = np.unique(np.asarray(members, dtype=np.int64))
        if members.size == 0:
            raise ValueError("cannot cover an empty set")
        patches = self.star_patches(level, members) if patches is None else [
            np.intersect1d(np.asarray(pt, dtype=np.int64), members) for pt in patches
        ]
        patches = [pt for pt in patches if pt.size]
        covered = np.unique(np.concatenate(patches))
        if covered.size != members.size:
            raise ValueError(f"family leaves {members.size - covered.size} cells of A uncovered")

        local = {int(c): i for i, c in enumerate(members)}
        rows = np.concatenate([[local[int(c)] for c in pt] for pt in patches]).astype(np.int64)
        cols = np.concatenate([np.full(pt.size, i) for i, pt in enumerate(patches)])
        membership = sparse.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(members.size, len(patches))
        )
        n_t = int(np.diff(membership.indptr).max())
        n_e = self._chaining_number(level, members, membership)
        return Covering(level=level, patches=patches, n_t=n_t, n_e=n_e)

    def _chaining_number(
        self, level: int, members: np.ndarray, membership: sparse.csr_matrix
    ) -> int:
        graph = self.partition.level_graph(level)
        li, lj = graph.induced_edges(members)
        if li.size == 0:
            return 1
        shared = (membership @ membership.T).tocsr()
        direct = np.asarray(shared[li, lj]).ravel() > 0
        if direct.all():
            return 1
        # chain graph: adjacent pairs that share a patch
        keep = direct
        chain = sparse.csr_matrix(
            (np.ones(int(keep.sum())), (li[keep], lj[keep])), shape=(members.size, members.size)
        )
        starts = np.unique(li[~direct])
        dist = csgraph.shortest_path(chain, directed=False, unweighted=True, indices=starts)
        row_of = {int(s): r for r, s in enumerate(starts)}
        lengths = [dist[row_of[int(u)], v] for u, v in zip(li[~direct], lj[~direct])]
        worst = max(lengths)
        if not np.isfinite(worst):
            raise ValueError("family is not a covering: some adjacent pair has no patch chain")
        return max(1, int(worst))

    # disparity

    def build_ratio(self, level: int, members: np.ndarray, m: int, p: float) -> Tuple[DisparityRatio, np.ndarray, CellGraph]:
        members = np.unique(np.asarray(members, dtype=np.int64))
        fine_graph, fine_cells = self.partition.patch_graph(level, members, m)
        avg = sparse.kron(
            sparse.identity(members.size, format="csr"),
            sparse.csr_matrix(self.measure.relative_masses(m)[None, :]),
            format="csr",
        )
        ci, cj = self.partition.level_graph(level).induced_edges(members)
        coarse = incidence(members.size, ci, cj)
        fine = incidence(fine_graph.size, fine_graph.edges_i, fine_graph.edges_j)

        n_comp, labels = csgraph.connected_components(fine_graph.adjacency, directed=False)
        null_basis = np.zeros((fine_graph.size, n_comp))
        null_basis[np.arange(fine_graph.size), labels] = 1.0
        null_basis /= np.sqrt(null_basis.sum(axis=0))[None, :]
        ratio = DisparityRatio(avg, coarse, fine, p, null_basis)
        if n_comp > 1:
            for comp in range(n_comp):
                num, _ = ratio.parts((labels == comp).astype(np.float64))
                if num > 1e-12:
                    raise InfiniteDisparityError(
                        f"S^{m}(A) splits into {n_comp} components and one carries coarse energy; "
                        "σ is infinite (the covering family should use connected patches)"
                    )
        return ratio, fine_cells, fine_graph

    def sigma_pm(
        self, level: int, members: np.ndarray, m: int, p: float, restarts: Optional[int] = None
    ) -> DisparityEstimate:
        """Best ratio over restarts of a sphere-projected ascent plus an L-BFGS-B polish."""
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if not p > 1:
            raise ValueError(f"p must be > 1, got {p}")
        restarts = self.restarts if restarts is None else restarts
        t0 = time.perf_counter()
        ratio, fine_cells, _ = self.build_ratio(level, members, m, p)
        if ratio.coarse.shape[0] == 0:
            return DisparityEstimate(
                value=0.0,
                maximizer=CellFunction(level + m, np.zeros(ratio.size)),
                fine_cells=fine_cells,
                restarts=0,
                seed=self.seed,
            )

        starts: List[np.ndarray] = []
        if ratio.size <= ORACLE_START_MAX:
            starts.append(self._oracle_vector(ratio))
        for child in np.random.SeedSequence(self.seed).spawn(restarts):
            starts.append(np.random.default_rng(child).standard_normal(ratio.size))

        candidates = run_jobs(lambda g0: self._ascend(ratio, g0), starts, self.jobs, desc="disparity")
        best_g = max(candidates, key=lambda c: c[1])[0]
        value = ratio.value(best_g)
        self.logger.debug(
            "σ_{p,m}(A) p=%.3g m=%d |A|=%d: %.10g from %d starts (%.2fs)",
            p, m, np.unique(members).size, value, len(starts), time.perf_counter() - t0,
        )
        return DisparityEstimate(
            value=value,
            maximizer=CellFunction(level + m, best_g),
            fine_cells=fine_cells,
            restarts=restarts,
            seed=self.seed,
        )

    def _ascend(self, ratio: DisparityRatio, g0: np.ndarray) -> Tuple[np.ndarray, float]:
        g = ratio.normalize(g0)
        if g is None:
            return np.zeros(ratio.size), 0.0
        r, grad = ratio.value_and_grad(g)
        eta = 1.0
        for _ in range(self.max_iter):
            direction = ratio.project(grad)
            norm = float(np.linalg.norm(direction))
            if norm <= 1e-14 * max(r, 1.0):
                break
            direction /= norm
            improved = False
            while eta > 1e-12:
                cand = ratio.normalize(g + eta * direction)
                if cand is not None:
                    rc = ratio.value(cand)
                    if rc > r:
                        improved = True
                        break
                eta /= 2
            if not improved:
                break
            gain = rc - r
            g = cand
            r, grad = ratio.value_and_grad(g)
            eta = min(2 * eta, 1.0)
            if gain <= 1e-13 * r:
                break

        def neg(v: np.ndarray) -> Tuple[float, np.ndarray]:
            val, gr = ratio.value_and_grad(v)
            return -val, -gr

        polished = minimize(neg, g, jac=True, method="L-BFGS-B", options={"gtol": 1e-12, "maxiter": 500})
        cand = ratio.normalize(polished.x)
        if cand is not None and ratio.value(cand) > r:
            g, r = cand, ratio.value(cand)
        return g, r

    @staticmethod
    def _oracle_vector(ratio: DisparityRatio) -> np.ndarray:
        _, vec = _generalized_top(ratio)
        return vec

    def sigma_p2_oracle(self, level: int, members: np.ndarray, m: int) -> float:
        """σ_{2,m}(A) as the top generalized eigenvalue (dense; small instances)."""
        ratio, _, _ = self.build_ratio(level, members, m, 2.0)
        if ratio.coarse.shape[0] == 0:
            return 0.0
        value, _ = _generalized_top(ratio)
        return value

    def sigma_pmn(
        self,
        m: int,
        n: int,
        p: float,
        patches: Optional[Sequence[np.ndarray]] = None,
    ) -> Tuple[DisparityEstimate, np.ndarray, int]:
        """max over the covering family at level n (stars by default), deduplicated by translation.

        Returns the best estimate, the attaining patch and the number of classes evaluated.
        """
        family = patches if patches is not None else self.star_patches(
            n, np.arange(self.partition.level_size(n))
        )
        classes: Dict[Tuple, np.ndarray] = {}
        for patch in family:
            patch = np.unique(np.asarray(patch, dtype=np.int64))
            key = self.partition.relative_shape(n, int(patch[0]), patch)
            classes.setdefault(key, patch)
        reps = list(classes.values())
        t0 = time.perf_counter()
        estimates = [self.sigma_pm(n, patch, m, p) for patch in reps]
        best = int(np.argmax([e.value for e in estimates]))
        self.logger.info(
            "σ_{p,m,n} p=%.3g m=%d n=%d: %.8g over %d patch classes (%.2fs)",
            p, m, n, estimates[best].value, len(reps), time.perf_counter() - t0,
        )
        return estimates[best], reps[best], len(reps)

    def sigma_pm_running(self, m: int, p: float, n_max: int) -> List[float]:
        """Running max of σ_{p,m,n} over n = 1..n_max (the finite-depth stand-in for σ_{p,m})."""
        running: List[float] = []
        for n in range(1, n_max + 1):
            value = self.sigma_pmn(m, n, p)[0].value
            running.append(max(value, running[-1]) if running else value)
        return running


def _generalized_top(ratio: DisparityRatio) -> Tuple[float, np.ndarray]:
    avg = ratio.avg.toarray()
    coarse_lap = (ratio.coarse.T @ ratio.coarse).toarray()
    fine_lap = (ratio.fine.T @ ratio.fine).toarray()
    basis = linalg.null_space(ratio.null_basis.T)
    qc = basis.T @ (avg.T @ coarse_lap @ avg) @ basis
    lf = basis.T @ fine_lap @ basis
    vals, vecs = linalg.eigh(qc, lf)
    return float(vals[-1]), basis @ vecs[:, -1]
