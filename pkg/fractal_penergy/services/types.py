import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

ADJACENCY_MODES = ("closure", "edge")


@dataclass(frozen=True)
class SubdivisionScheme:
    """Generator of the partition tree: an L-adic grid with a kept-cell pattern.

    Symbols of the tree alphabet are indices into ``kept``, which is stored in
    lexicographic order so that word indices are deterministic.
    """

    name: str
    grid_side: int
    kept: Tuple[Tuple[int, ...], ...]
    dimension: int = 2
    adjacency_mode: str = "closure"

    def __post_init__(self) -> None:
        if self.grid_side < 2:
            raise ValueError(f"grid_side must be >= 2, got {self.grid_side}")
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ValueError(f"unknown adjacency mode {self.adjacency_mode!r}")
        cells = tuple(sorted({tuple(int(c) for c in cell) for cell in self.kept}))
        if not cells:
            raise ValueError(f"scheme {self.name!r} keeps no cells")
        for cell in cells:
            if len(cell) != self.dimension:
                raise ValueError(f"cell {cell} does not have dimension {self.dimension}")
            if any(c < 0 or c >= self.grid_side for c in cell):
                raise ValueError(f"cell {cell} outside the {self.grid_side}-grid")
        object.__setattr__(self, "kept", cells)
        if not _closure_connected(np.asarray(cells, dtype=np.int64)):
            raise ValueError(
                f"kept cells of scheme {self.name!r} are not connected under closure intersection"
            )

    @property
    def branching(self) -> int:
        return len(self.kept)

    @property
    def kept_array(self) -> np.ndarray:
        return np.asarray(self.kept, dtype=np.int64)

    def with_mode(self, adjacency_mode: str) -> "SubdivisionScheme":
        return replace(self, adjacency_mode=adjacency_mode)

    def to_text(self) -> str:
        """Render in the scheme-file format (header line + 0/1 grid)."""
        header = f"L={self.grid_side} mode={self.adjacency_mode}"
        kept = set(self.kept)
        if self.dimension == 1:
            row = "".join("1" if (j,) in kept else "0" for j in range(self.grid_side))
            return f"{header} dim=1\n{row}\n"
        rows = [
            "".join("1" if (i, j) in kept else "0" for j in range(self.grid_side))
            for i in range(self.grid_side)
        ]
        return header + "\n" + "\n".join(rows) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def _closure_connected(cells: np.ndarray) -> bool:
    diff = np.abs(cells[:, None, :] - cells[None, :, :]).max(axis=2)
    adj = sparse.csr_matrix(diff <= 1)
    n_components, _ = csgraph.connected_components(adj, directed=False)
    return n_components == 1


@dataclass(frozen=True, order=True)
class CellWord:
    """Address of a cell in the tree; the empty word is the reference point."""

    symbols: Tuple[int, ...] = ()

    @property
    def level(self) -> int:
        return len(self.symbols)

    def parent(self) -> "CellWord":
        return CellWord(self.symbols[:-1])

    def child(self, symbol: int) -> "CellWord":
        return CellWord(self.symbols + (symbol,))

    def prefix(self, level: int) -> "CellWord":
        return CellWord(self.symbols[:level])

    def index(self, branching: int) -> int:
        idx = 0
        for s in self.symbols:
            idx = idx * branching + s
        return idx

    @classmethod
    def from_index(cls, index: int, level: int, branching: int) -> "CellWord":
        digits = []
        for _ in range(level):
            index, s = divmod(index, branching)
            digits.append(s)
        return cls(tuple(reversed(digits)))

    @classmethod
    def parse(cls, text: str) -> "CellWord":
        text = text.strip()
        if text in ("", "∅", "-"):
            return cls(())
        for sep in (".", ","):
            if sep in text:
                return cls(tuple(int(tok) for tok in text.split(sep) if tok != ""))
        return cls(tuple(int(ch) for ch in text))

    def __str__(self) -> str:
        return ".".join(str(s) for s in self.symbols) if self.symbols else "∅"


@dataclass(frozen=True, eq=False)
class CellGraph:
    """Undirected simple graph stored as unordered edge lists (i < j)."""

    size: int
    edges_i: np.ndarray
    edges_j: np.ndarray

    @classmethod
    def from_edges(cls, size: int, edges: Iterable[Tuple[int, int]]) -> "CellGraph":
        pairs = {(min(a, b), max(a, b)) for a, b in edges if a != b}
        arr = np.asarray(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(size=size, edges_i=arr[:, 0].copy(), edges_j=arr[:, 1].copy())

    @classmethod
    def path(cls, n_edges: int) -> "CellGraph":
        i = np.arange(n_edges, dtype=np.int64)
        return cls(size=n_edges + 1, edges_i=i, edges_j=i + 1)

    @property
    def n_edges(self) -> int:
        return int(self.edges_i.size)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        data = np.ones(2 * self.n_edges)
        rows = np.concatenate([self.edges_i, self.edges_j])
        cols = np.concatenate([self.edges_j, self.edges_i])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.size, self.size))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def degree_max(self) -> int:
        return int(self.degrees.max()) if self.size else 0

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency
        return adj.indices[adj.indptr[i] : adj.indptr[i + 1]]

    def ball(self, indices: Iterable[int], radius: int) -> np.ndarray:
        """Γ_radius of a vertex set: everything reachable in at most ``radius`` steps."""
        mask = np.zeros(self.size, dtype=bool)
        mask[np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)] = True
        frontier = mask.copy()
        for _ in range(radius):
            reached = (self.adjacency @ frontier.astype(np.float64)) > 0
            new = reached & ~mask
            if not new.any():
                break
            mask |= new
            frontier = new
        return np.flatnonzero(mask)

    def reach(self, radius: int) -> sparse.csr_matrix:
        """0/1 matrix whose row w is the indicator of Γ_radius(w)."""
        ident = sparse.identity(self.size, format="csr")
        step = (ident + self.adjacency).tocsr()
        step.data[:] = 1.0
        reach = ident
        for _ in range(radius):
            reach = (reach @ step).tocsr()
            reach.data[:] = 1.0
        return reach

    def induced_edges(self, members: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Edges with both endpoints in ``members``, in local (position) coordinates."""
        local = np.full(self.size, -1, dtype=np.int64)
        local[members] = np.arange(members.size)
        keep = (local[self.edges_i] >= 0) & (local[self.edges_j] >= 0)
        return local[self.edges_i[keep]], local[self.edges_j[keep]]


@dataclass(frozen=True, eq=False)
class LevelGraph(CellGraph):
    """Adjacency graph on T_n; cell index = base-K value of the word."""

    scheme: SubdivisionScheme = field(default=None)  # type: ignore[assignment]
    level: int = 0
    coords: np.ndarray = field(default=None)  # type: ignore[assignment]

    def word(self, index: int) -> CellWord:
        return CellWord.from_index(int(index), self.level, self.scheme.branching)

    def index(self, word: CellWord) -> int:
        if word.level != self.level:
            raise ValueError(f"word {word} has level {word.level}, graph level is {self.level}")
        return word.index(self.scheme.branching)


@dataclass(frozen=True)
class InclusionCheck:
    """Outcome of an exhaustive neighborhood-inclusion check; truthy when it holds."""

    holds: bool
    depth: int
    violation: Optional[Tuple[CellWord, int]] = None

    def __bool__(self) -> bool:
        return self.holds


@dataclass(frozen=True, eq=False)
class CellFunction:
    """A real-valued function on T_n, indexed like the level graph cells."""

    level: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("cell function values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("cell function values must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Minimize the p-energy on ``graph`` subject to prescribed values."""

    graph: CellGraph
    fixed_index: np.ndarray
    fixed_value: np.ndarray
    p: float
    level: int = 0

    def __post_init__(self) -> None:
        idx = np.asarray(self.fixed_index, dtype=np.int64).ravel()
        val = np.broadcast_to(np.asarray(self.fixed_value, dtype=np.float64), idx.shape).copy()
        if idx.size == 0:
            raise ValueError("a Dirichlet problem needs at least one prescribed vertex")
        if np.unique(idx).size != idx.size:
            raise ValueError("prescribed vertices must be distinct")
        if idx.min() < 0 or idx.max() >= self.graph.size:
            raise ValueError("prescribed vertex out of range")
        if not np.all(np.isfinite(val)):
            raise ValueError("prescribed values must be finite")
        if not self.p > 1:
            raise ValueError(f"p must be > 1, got {self.p}")
        object.__setattr__(self, "fixed_index", idx)
        object.__setattr__(self, "fixed_value", val)

    @classmethod
    def from_mapping(
        cls, graph: CellGraph, fixed: Mapping[int, float], p: float, level: int = 0
    ) -> "DirichletProblem":
        keys = np.fromiter(fixed.keys(), dtype=np.int64, count=len(fixed))
        vals = np.fromiter(fixed.values(), dtype=np.float64, count=len(fixed))
        return cls(graph=graph, fixed_index=keys, fixed_value=vals, p=p, level=level)

    def scaled(self, factor: float) -> "DirichletProblem":
        return replace(self, fixed_value=factor * self.fixed_value)


@dataclass(frozen=True, eq=False)
class ConductanceResult:
    value: float
    minimizer: Optional[CellFunction]
    kkt_residual: float
    iterations: int
    epsilon_final: float
    stagnated: bool = False
    cached: bool = False


@dataclass(frozen=True, eq=False)
class DisparityEstimate:
    """Best ratio found; always a valid lower bound for σ_{p,m}(A)."""

    value: float
    maximizer: CellFunction
    fine_cells: np.ndarray
    restarts: int
    seed: int
    certified_lower: bool = True


@dataclass(frozen=True, eq=False)
class Covering:
    level: int
    patches: Sequence[np.ndarray]
    n_t: int
    n_e: int


CUTOFF_MODES = ("min", "max")


@dataclass(frozen=True)
class ConstructionConfig:
    """Inputs of the cutoff-hierarchy construction.

    ``omega`` addresses the target point: a finite word repeated cyclically, or
    with ``repeat=False`` an explicit prefix that must cover the deepest level;
    ``cutoff_mode`` is "min" (one harmonic minimizer per ring) or "max"
    (pointwise max of per-cell minimizers).
    """

    p: float
    sigma: float
    k_max: int
    mstar: int
    omega: CellWord = CellWord((0,))
    cutoff_mode: str = "min"
    sigma_source: str = "given"
    repeat: bool = True

    def __post_init__(self) -> None:
        if not self.p > 1:
            raise ValueError(f"p must be > 1, got {self.p}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.mstar < 1:
            raise ValueError(f"M* must be >= 1, got {self.mstar}")
        if self.omega.level == 0:
            raise ValueError("omega needs at least one symbol")
        if self.cutoff_mode not in CUTOFF_MODES:
            raise ValueError(f"cutoff mode must be one of {CUTOFF_MODES}, got {self.cutoff_mode!r}")

    @property
    def step(self) -> int:
        return self.mstar + 1

    def address(self, level: int) -> CellWord:
        """ω(level): the first ``level`` symbols of the repeated pattern."""
        pattern = self.omega.symbols
        if not self.repeat:
            if level > len(pattern):
                raise ValueError(
                    f"omega prefix too short: {len(pattern)} symbols, level {level} needed"
                )
            return CellWord(pattern[:level])
        reps = -(-level // len(pattern))
        return CellWord((pattern * reps)[:level])
