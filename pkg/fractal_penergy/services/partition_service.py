import logging
import time
from functools import lru_cache
from itertools import product
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from fractal_penergy.core.errors import AssumptionViolation, UsageError
from fractal_penergy.services.types import (
    CellGraph,
    CellWord,
    InclusionCheck,
    LevelGraph,
    SubdivisionScheme,
)

logger = logging.getLogger(__name__)


def _interval2() -> SubdivisionScheme:
    return SubdivisionScheme("interval2", 2, ((0,), (1,)), dimension=1)


def _square(side: int) -> SubdivisionScheme:
    cells = tuple(product(range(side), repeat=2))
    return SubdivisionScheme(f"square{side}", side, cells)


def _carpet() -> SubdivisionScheme:
    cells = tuple(c for c in product(range(3), repeat=2) if c != (1, 1))
    return SubdivisionScheme("sierpinski-carpet", 3, cells)


BUILTIN_SCHEMES = {
    "interval2": _interval2,
    "square2": lambda: _square(2),
    "square3": lambda: _square(3),
    "sierpinski-carpet": _carpet,
}


def builtin_scheme(name: str, adjacency_mode: Optional[str] = None) -> SubdivisionScheme:
    try:
        scheme = BUILTIN_SCHEMES[name]()
    except KeyError:
        raise UsageError(
            f"unknown scheme {name!r}; built-ins are {', '.join(sorted(BUILTIN_SCHEMES))}"
        ) from None
    if adjacency_mode is not None and adjacency_mode != scheme.adjacency_mode:
        scheme = scheme.with_mode(adjacency_mode)
    return scheme


def _offsets(dimension: int, adjacency_mode: str) -> np.ndarray:
    if adjacency_mode == "edge":
        eye = np.eye(dimension, dtype=np.int64)
        return np.concatenate([eye, -eye])
    grid = np.asarray(list(product((-1, 0, 1), repeat=dimension)), dtype=np.int64)
    return grid[np.any(grid != 0, axis=1)]


def level_coords(scheme: SubdivisionScheme, level: int) -> np.ndarray:
    """Integer box coordinates of every cell of T_level in index order."""
    coords = np.zeros((1, scheme.dimension), dtype=np.int64)
    kept = scheme.kept_array
    for _ in range(level):
        coords = (coords[:, None, :] * scheme.grid_side + kept[None, :, :]).reshape(
            -1, scheme.dimension
        )
    return coords


def _box_edges(coords: np.ndarray, side: int, adjacency_mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Edges (i < j) between boxes of a coordinate list whose closures touch."""
    dimension = coords.shape[1]
    weights = side ** np.arange(dimension - 1, -1, -1, dtype=np.int64)
    keys = coords @ weights
    order = np.argsort(keys)
    sorted_keys = keys[order]

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    for offset in _offsets(dimension, adjacency_mode):
        target = coords + offset
        src = np.flatnonzero(np.all((target >= 0) & (target < side), axis=1))
        tkeys = target[src] @ weights
        pos = np.minimum(np.searchsorted(sorted_keys, tkeys), sorted_keys.size - 1)
        hit = sorted_keys[pos] == tkeys
        dst = order[pos[hit]]
        src = src[hit]
        keep = src < dst
        rows.append(src[keep])
        cols.append(dst[keep])

    ei = np.concatenate(rows)
    ej = np.concatenate(cols)
    perm = np.lexsort((ej, ei))
    return ei[perm], ej[perm]


@lru_cache(maxsize=32)
def build_level_graph(scheme: SubdivisionScheme, level: int) -> LevelGraph:
    """Cell adjacency graph on T_level, cached per (scheme, level, mode)."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    t0 = time.perf_counter()
    coords = level_coords(scheme, level)
    ei, ej = _box_edges(coords, scheme.grid_side**level, scheme.adjacency_mode)
    graph = LevelGraph(
        size=coords.shape[0],
        edges_i=ei,
        edges_j=ej,
        scheme=scheme,
        level=level,
        coords=coords,
    )
    logger.debug(
        "Level graph %s n=%d: %d cells, %d edges in %.3fs",
        scheme.name,
        level,
        graph.size,
        graph.n_edges,
        time.perf_counter() - t0,
    )
    return graph


class PartitionService:
    """Tree words, level graphs, Γ-neighborhoods and the finite-depth certificates."""

    logger = logging.getLogger(__name__)

    def __init__(self, scheme: SubdivisionScheme) -> None:
        self.scheme = scheme
        self._mstar: Optional[int] = None

    @property
    def branching(self) -> int:
        return self.scheme.branching

    def level_graph(self, level: int) -> LevelGraph:
        return build_level_graph(self.scheme, level)

    def level_size(self, level: int) -> int:
        return self.branching**level

    # words

    def children(self, w: CellWord) -> List[CellWord]:
        self._check_word(w)
        return [w.child(s) for s in range(self.branching)]

    @staticmethod
    def pi(w: CellWord) -> CellWord:
        return w.parent()

    def pi_k(self, w: CellWord, k: int) -> CellWord:
        return w.prefix(max(w.level - k, 0))

    def refine(self, words: Iterable[CellWord], m: int) -> List[CellWord]:
        """S^m of a same-level word set, in index order."""
        words = list(words)
        if m < 0:
            raise ValueError(f"m must be >= 0, got {m}")
        if not words:
            return []
        level = self.common_level(words)
        idx = self.refine_indices(self.indices(words), m)
        return [CellWord.from_index(int(i), level + m, self.branching) for i in idx]

    def refine_indices(self, indices: np.ndarray, m: int) -> np.ndarray:
        block = self.branching**m
        indices = np.unique(np.asarray(indices, dtype=np.int64))
        return (indices[:, None] * block + np.arange(block, dtype=np.int64)[None, :]).ravel()

    def ancestor_indices(self, indices: np.ndarray, k: int) -> np.ndarray:
        return np.asarray(indices, dtype=np.int64) // (self.branching**k)

    def indices(self, words: Iterable[CellWord]) -> np.ndarray:
        return np.asarray([w.index(self.branching) for w in words], dtype=np.int64)

    def words(self, level: int, indices: Iterable[int]) -> List[CellWord]:
        return [CellWord.from_index(int(i), level, self.branching) for i in indices]

    def cell_coords(self, w: CellWord) -> np.ndarray:
        self._check_word(w)
        coord = np.zeros(self.scheme.dimension, dtype=np.int64)
        kept = self.scheme.kept_array
        for s in w.symbols:
            coord = coord * self.scheme.grid_side + kept[s]
        return coord

    # adjacency and neighborhoods

    def adjacent(self, u: CellWord, v: CellWord) -> bool:
        if u.level != v.level:
            raise ValueError(f"level mismatch: |{u}|={u.level}, |{v}|={v.level}")
        if u == v:
            return True
        diff = np.abs(self.cell_coords(u) - self.cell_coords(v))
        if self.scheme.adjacency_mode == "edge":
            return int(diff.sum()) == 1
        return int(diff.max()) <= 1

    def gamma(self, M: int, w: CellWord) -> List[CellWord]:
        return self.gamma_of([w], M)

    def gamma_of(self, words: Sequence[CellWord], M: int) -> List[CellWord]:
        """Γ_M of a word set: union of the members' M-neighborhoods."""
        if M < 0:
            raise ValueError(f"M must be >= 0, got {M}")
        level = self.common_level(words)
        idx = self.gamma_indices(level, self.indices(words), M)
        return self.words(level, idx)

    def gamma_indices(self, level: int, indices: np.ndarray, M: int) -> np.ndarray:
        return self.level_graph(level).ball(np.asarray(indices, dtype=np.int64), M)

    def coords_to_indices(self, coords: np.ndarray, level: int) -> np.ndarray:
        """T_level index of each coordinate row; -1 where no cell of T_level sits."""
        side, dim = self.scheme.grid_side, self.scheme.dimension
        table = np.full(side**dim, -1, dtype=np.int64)
        table[np.ravel_multi_index(self.scheme.kept_array.T, (side,) * dim)] = np.arange(
            self.branching
        )
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, dim)
        valid = np.all((coords >= 0) & (coords < side**level), axis=1)
        idx = np.zeros(coords.shape[0], dtype=np.int64)
        for i in range(level):
            digits = (coords // side ** (level - 1 - i)) % side
            sym = table[np.ravel_multi_index(digits.T, (side,) * dim)]
            valid &= sym >= 0
            idx = idx * self.branching + np.maximum(sym, 0)
        return np.where(valid, idx, -1)

    def local_gamma_indices(self, level: int, indices: np.ndarray, M: int) -> np.ndarray:
        """Γ_M of a cell set computed inside its Chebyshev M-window.

        Same result as ``gamma_indices`` without building the whole level graph,
        since an M-step path never leaves that window.
        """
        indices = np.unique(np.asarray(indices, dtype=np.int64))
        dim = self.scheme.dimension
        base = np.stack([self.cell_coords(w) for w in self.words(level, indices)])
        window = np.asarray(list(product(range(-M, M + 1), repeat=dim)), dtype=np.int64)
        cand = np.unique((base[:, None, :] + window[None, :, :]).reshape(-1, dim), axis=0)
        idx = self.coords_to_indices(cand, level)
        keep = idx >= 0
        cand, idx = cand[keep], idx[keep]
        ei, ej = _box_edges(cand, self.scheme.grid_side**level, self.scheme.adjacency_mode)
        graph = CellGraph(size=cand.shape[0], edges_i=ei, edges_j=ej)
        sources = np.flatnonzero(np.isin(idx, indices))
        return np.sort(idx[graph.ball(sources, M)])

    def patch_graph(
        self, level: int, indices: np.ndarray, m: int
    ) -> Tuple[CellGraph, np.ndarray]:
        """Induced graph on S^m(G) at level+m, built without materializing T_{level+m}.

        Returns the graph and the T_{level+m} index of each of its vertices
        (ascending, same order as ``refine_indices``).
        """
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        fine_idx = self.refine_indices(idx, m)
        base = self.level_graph(level).coords[idx]
        local = level_coords(self.scheme, m)
        coords = (base[:, None, :] * self.scheme.grid_side**m + local[None, :, :]).reshape(
            -1, self.scheme.dimension
        )
        ei, ej = _box_edges(coords, self.scheme.grid_side ** (level + m), self.scheme.adjacency_mode)
        return CellGraph(size=coords.shape[0], edges_i=ei, edges_j=ej), fine_idx

    def relative_shape(self, level: int, center: int, members: np.ndarray) -> Tuple:
        """Translation class of a cell set around ``center`` (hashable)."""
        coords = self.level_graph(level).coords
        rel = coords[np.asarray(members, dtype=np.int64)] - coords[center]
        return tuple(sorted(map(tuple, rel.tolist())))

    # certificates

    def certify_degree_bound(self, n_max: int) -> int:
        """Maximal neighbor count over levels 1..n_max (finite-depth certificate)."""
        if n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {n_max}")
        t0 = time.perf_counter()
        lstar = max(self.level_graph(n).degree_max for n in range(1, n_max + 1))
        self.logger.info(
            "Degree bound L*=%d for %s (%s) certified at depth %d in %.2fs",
            lstar,
            self.scheme.name,
            self.scheme.adjacency_mode,
            n_max,
            time.perf_counter() - t0,
        )
        return lstar

    def certify_mstar(self, n_max: int, m_hi: int = 4) -> int:
        """Smallest M ≥ 1 with π(Γ_{M+1}(w)) ⊆ Γ_M(π(w)) at every level 2..n_max."""
        if n_max < 2:
            raise ValueError(f"n_max must be >= 2, got {n_max}")
        t0 = time.perf_counter()
        for M in range(1, m_hi + 1):
            failure = None
            for level in range(2, n_max + 1):
                failure = self._inclusion_violation(level, 1, M + 1, M)
                if failure is not None:
                    break
            if failure is None:
                self.logger.info(
                    "M*=%d for %s (%s) certified at depth %d in %.2fs",
                    M,
                    self.scheme.name,
                    self.scheme.adjacency_mode,
                    n_max,
                    time.perf_counter() - t0,
                )
                self._mstar = M
                return M
            self.logger.debug("M=%d rejected: violated at word %s", M, failure)
        raise AssumptionViolation(
            f"no M <= {m_hi} satisfies π(Γ_(M+1)(w)) ⊆ Γ_M(π(w)) for {self.scheme.name} "
            f"at depth {n_max}"
        )

    def mstar(self, n_max: int = 4) -> int:
        if self._mstar is None:
            self.certify_mstar(n_max)
        return self._mstar  # type: ignore[return-value]

    def verify_neighborhood_contraction(
        self, k_max: int, n_max: int, mstar: Optional[int] = None
    ) -> InclusionCheck:
        """π^k(Γ_{M*+k}(w)) ⊆ Γ_{M*}(π^k(w)) for every k ≤ k_max and |w| ∈ [k+1, n_max]."""
        mstar = self.mstar(max(n_max, 2)) if mstar is None else mstar
        t0 = time.perf_counter()
        for k in range(1, k_max + 1):
            for level in range(k + 1, n_max + 1):
                failure = self._inclusion_violation(level, k, mstar + k, mstar)
                if failure is not None:
                    self.logger.warning(
                        "Neighborhood contraction fails at w=%s, k=%d (M*=%d)", failure, k, mstar
                    )
                    return InclusionCheck(False, n_max, (failure, k))
        self.logger.info(
            "Neighborhood contraction holds for k<=%d at depth %d (%.2fs)",
            k_max,
            n_max,
            time.perf_counter() - t0,
        )
        return InclusionCheck(True, n_max)

    def verify_projection_inclusion(self, i_max: int, n_max: int) -> InclusionCheck:
        """π(Γ_i(w)) ⊆ Γ_i(π(w)) for i = 1..i_max at levels 2..n_max."""
        for i in range(1, i_max + 1):
            for level in range(2, n_max + 1):
                failure = self._inclusion_violation(level, 1, i, i)
                if failure is not None:
                    self.logger.warning("Projection inclusion fails at w=%s, i=%d", failure, i)
                    return InclusionCheck(False, n_max, (failure, i))
        return InclusionCheck(True, n_max)

    def _inclusion_violation(
        self, level: int, k: int, fine_radius: int, coarse_radius: int
    ) -> Optional[CellWord]:
        """First w in T_level with π^k(Γ_fine(w)) ⊄ Γ_coarse(π^k(w)), if any."""
        fine = self.level_graph(level)
        coarse_level = level - k
        coarse = self.level_graph(coarse_level)
        proj = sparse.csr_matrix(
            (
                np.ones(fine.size),
                (np.arange(fine.size), np.arange(fine.size) // self.branching**k),
            ),
            shape=(fine.size, coarse.size),
        )
        reached = (fine.reach(fine_radius) @ proj).tocsr()
        allowed = (proj @ coarse.reach(coarse_radius)).tocsr()
        reached.data[:] = 1.0
        allowed.data[:] = 1.0
        excess = (reached - reached.multiply(allowed)).tocsr()
        excess.eliminate_zeros()
        if excess.nnz == 0:
            return None
        row = int(np.flatnonzero(np.diff(excess.indptr))[0])
        return fine.word(row)

    def common_level(self, words: Sequence[CellWord]) -> int:
        levels = {w.level for w in words}
        if len(levels) != 1:
            raise ValueError(f"words must share one level, got levels {sorted(levels)}")
        return levels.pop()

    def _check_word(self, w: CellWord) -> None:
        if any(s < 0 or s >= self.branching for s in w.symbols):
            raise ValueError(f"word {w} uses symbols outside 0..{self.branching - 1}")
