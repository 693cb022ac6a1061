import numpy as np
import pytest

from fractal_penergy.core.errors import SchemeParseError, UsageError
from fractal_penergy.services.partition_service import (
    BUILTIN_SCHEMES,
    PartitionService,
    builtin_scheme,
    level_coords,
)
from fractal_penergy.services.types import CellWord, SubdivisionScheme
from fractal_penergy.utils.scheme_file import load_scheme, parse_scheme

CARPET_TEXT = """# Sierpinski carpet
L=3 mode=closure
111
101
111
"""


def test_word_index_round_trip():
    w = CellWord((0, 3, 5))
    assert w.index(8) == 29
    assert CellWord.from_index(29, 3, 8) == w
    assert CellWord.parse("0.3.5") == w
    assert CellWord.parse("035") == w
    assert str(w) == "0.3.5"
    assert str(CellWord.parse("∅")) == "∅"
    assert w.parent() == CellWord((0, 3))
    assert w.prefix(1) == CellWord((0,))


def test_children_and_projection(carpet):
    w = CellWord((2, 7))
    kids = carpet.partition.children(w)
    assert len(kids) == 8
    assert all(carpet.partition.pi(v) == w for v in kids)
    assert carpet.partition.pi_k(CellWord((2, 7, 1, 4)), 2) == w
    with pytest.raises(ValueError):
        carpet.partition.children(CellWord((8,)))


def test_refine_keeps_index_order(square):
    words = [CellWord((3,)), CellWord((1,))]
    refined = square.partition.refine(words, 2)
    assert len(refined) == 2 * 16
    idx = square.partition.indices(refined)
    assert np.all(np.diff(idx) > 0)
    assert {w.prefix(1) for w in refined} == set(words)


def test_level_graph_sizes(interval, carpet):
    g = interval.partition.level_graph(4)
    assert g.size == 16
    assert g.n_edges == 15
    c = carpet.partition.level_graph(1)
    assert c.size == 8
    # corners see two neighbors, side cells four
    assert sorted(c.degrees.tolist()) == [2, 2, 2, 2, 4, 4, 4, 4]


def test_adjacency_is_symmetric_and_level_bound(carpet):
    part = carpet.partition
    u, v = CellWord((0, 0)), CellWord((0, 1))
    assert part.adjacent(u, v) and part.adjacent(v, u)
    assert part.adjacent(u, u)
    with pytest.raises(ValueError):
        part.adjacent(u, CellWord((0,)))


def test_edge_mode_drops_diagonals():
    closure = PartitionService(builtin_scheme("square2"))
    edge = PartitionService(builtin_scheme("square2", "edge"))
    assert closure.certify_degree_bound(3) == 8
    assert edge.certify_degree_bound(3) == 4


@pytest.mark.parametrize("name", sorted(BUILTIN_SCHEMES))
def test_builtin_schemes_have_unit_mstar(name):
    part = PartitionService(builtin_scheme(name))
    assert part.certify_mstar(3) == 1


def test_degree_bounds():
    assert PartitionService(builtin_scheme("interval2")).certify_degree_bound(4) == 2
    assert PartitionService(builtin_scheme("square3")).certify_degree_bound(2) == 8


@pytest.mark.parametrize("name", sorted(BUILTIN_SCHEMES))
def test_neighborhood_contraction_holds(name):
    part = PartitionService(builtin_scheme(name))
    depth = 3 if name == "sierpinski-carpet" else 4
    check = part.verify_neighborhood_contraction(2, depth)
    assert check
    assert check.violation is None
    assert part.verify_projection_inclusion(2, depth)


def test_gamma_on_interval(interval):
    gamma = interval.partition.gamma(1, CellWord((0, 1)))
    assert [str(w) for w in gamma] == ["0.0", "0.1", "1.0"]
    assert interval.partition.gamma(0, CellWord((0, 1))) == [CellWord((0, 1))]


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_local_gamma_matches_full_graph(carpet, radius):
    part = carpet.partition
    for cells in ([0], [17], [100, 101], [511]):
        idx = np.array(cells)
        np.testing.assert_array_equal(
            part.local_gamma_indices(3, idx, radius), part.gamma_indices(3, idx, radius)
        )


def test_coords_to_indices_inverts_level_coords(carpet):
    coords = level_coords(carpet.scheme, 3)
    np.testing.assert_array_equal(
        carpet.partition.coords_to_indices(coords, 3), np.arange(coords.shape[0])
    )
    # the removed middle square and out-of-range boxes
    assert carpet.partition.coords_to_indices(np.array([[1, 1], [-1, 0], [27, 0]]), 3).tolist() == [
        -1,
        -1,
        -1,
    ]


def test_patch_graph_matches_induced_subgraph(carpet):
    part = carpet.partition
    coarse = np.array([0, 1, 4])
    patch, fine = part.patch_graph(1, coarse, 2)
    np.testing.assert_array_equal(fine, part.refine_indices(coarse, 2))
    li, lj = part.level_graph(3).induced_edges(fine)
    assert patch.n_edges == li.size
    assert set(zip(patch.edges_i.tolist(), patch.edges_j.tolist())) == set(
        zip(li.tolist(), lj.tolist())
    )


def test_scheme_validation():
    with pytest.raises(ValueError):
        SubdivisionScheme("gap", 3, ((0, 0), (2, 2)))
    with pytest.raises(ValueError):
        SubdivisionScheme("tiny", 1, ((0, 0),))
    with pytest.raises(ValueError):
        SubdivisionScheme("outside", 2, ((0, 0), (0, 2)))


def test_parse_scheme_matches_builtin():
    parsed = parse_scheme(CARPET_TEXT, name="carpet-file")
    builtin = builtin_scheme("sierpinski-carpet")
    assert parsed.kept == builtin.kept
    assert parsed.digest() == builtin.digest()
    assert parse_scheme(builtin_scheme("interval2").to_text()).kept == ((0,), (1,))


@pytest.mark.parametrize(
    "text",
    [
        "",
        "L=3\n111\n101\n111\n",
        "L=3 mode=diagonal\n111\n101\n111\n",
        "L=3 mode=closure\n111\n101\n",
        "L=3 mode=closure\n111\n1x1\n111\n",
        "L=3 mode=closure\n100\n000\n001\n",
    ],
)
def test_parse_scheme_rejects_malformed(text):
    with pytest.raises(SchemeParseError):
        parse_scheme(text)


def test_load_scheme_from_file(tmp_path):
    path = tmp_path / "carpet.txt"
    path.write_text(CARPET_TEXT, encoding="utf-8")
    scheme = load_scheme(str(path), "edge")
    assert scheme.name == "carpet"
    assert scheme.adjacency_mode == "edge"
    with pytest.raises(UsageError):
        load_scheme("no-such-scheme")


CARPET_SAMPLE = [CellWord((0, 0, 0)), CellWord((1, 4, 6)), CellWord((3, 3, 4)), CellWord((7, 7, 7))]


@pytest.mark.parametrize("a,b", [(0, 2), (1, 1), (1, 2), (2, 1)])
def test_gamma_composes(carpet, a, b):
    part = carpet.partition
    for w in CARPET_SAMPLE:
        assert part.gamma_of(part.gamma(b, w), a) == part.gamma(a + b, w)


def test_gamma_grows_with_radius(carpet):
    part = carpet.partition
    for w in CARPET_SAMPLE:
        sizes = []
        for M in range(4):
            inner, outer = set(part.gamma(M, w)), set(part.gamma(M + 1, w))
            assert inner <= outer
            sizes.append(len(inner))
        assert sizes[0] == 1


@pytest.mark.parametrize("name", ["interval2", "square2", "sierpinski-carpet"])
def test_parent_of_neighborhood_stays_in_parent_neighborhood(name):
    part = PartitionService(builtin_scheme(name))
    level = 4 if name == "interval2" else 3
    for i in range(0, part.level_size(level), 7):
        w = CellWord.from_index(i, level, part.branching)
        for M in range(3):
            assert {part.pi(v) for v in part.gamma(M, w)} <= set(part.gamma(M, part.pi(w)))
