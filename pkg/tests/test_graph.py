import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssip.graph import (GraphError, build_grid_graph, car_logdet, car_precision, from_edge_list,
                        neighbor_sum, read_edge_list, write_edge_list)


def test_grid_3x3_degrees():
    g = build_grid_graph(3, 3)
    assert g.n_regions == 9
    assert g.degrees[4] == 4
    assert [g.degrees[i] for i in (0, 2, 6, 8)] == [2, 2, 2, 2]
    assert [g.degrees[i] for i in (1, 3, 5, 7)] == [3, 3, 3, 3]


def test_grid_1x2():
    g = build_grid_graph(1, 2)
    assert g.n_regions == 2
    assert g.degrees.tolist() == [1, 1]


def test_grid_5x5_edge_count_by_enumeration():
    g = build_grid_graph(5, 5)
    # enumerate all unordered cell pairs at Manhattan distance one
    cells = [(r, c) for r in range(5) for c in range(5)]
    brute = sum(1 for a in range(25) for b in range(a + 1, 25)
                if abs(cells[a][0] - cells[b][0]) + abs(cells[a][1] - cells[b][1]) == 1)
    assert g.n_edges == brute == 40


@pytest.mark.parametrize("rows,cols", [(1, 1), (0, 3)])
def test_grid_rejects_tiny(rows, cols):
    with pytest.raises(GraphError):
        build_grid_graph(rows, cols)


def test_edge_list_examples():
    assert from_edge_list(2, [(0, 1)]).degrees.tolist() == [1, 1]
    assert from_edge_list(3, [(0, 1), (1, 2)]).degrees.tolist() == [1, 2, 1]
    with pytest.raises(GraphError, match="self-loop"):
        from_edge_list(3, [(0, 0)])
    with pytest.raises(GraphError, match="out of range"):
        from_edge_list(2, [(0, 2)])
    with pytest.raises(GraphError, match="isolated"):
        from_edge_list(3, [(0, 1)])


def test_edge_list_duplicate_orientations_collapse():
    g = from_edge_list(2, [(0, 1), (1, 0)])
    assert g.n_edges == 1


def test_edge_file_roundtrip(tmp_path):
    g = build_grid_graph(3, 4)
    path = tmp_path / "g.txt"
    write_edge_list(g, path)
    h = read_edge_list(path)
    assert h.n_regions == g.n_regions
    assert np.array_equal(h.edges(), g.edges())


def test_edge_file_comments(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# triangle\n0 1\n1 2  # trailing\n\n2 0\n")
    g = read_edge_list(path)
    assert g.degrees.tolist() == [2, 2, 2]


def test_car_precision_examples():
    g = from_edge_list(2, [(0, 1)])
    assert np.allclose(car_precision(g, 0.5).toarray(), [[1, -0.5], [-0.5, 1]])
    grid = build_grid_graph(3, 3)
    assert np.allclose(car_precision(grid, 0.0).toarray(), np.diag(grid.degrees))
    assert np.allclose(car_precision(grid, 1.0) @ np.ones(9), 0.0)


def test_car_precision_rejects_bad_rho():
    with pytest.raises(GraphError):
        car_precision(build_grid_graph(2, 2), 1.5)


def test_neighbor_sum_examples():
    g = build_grid_graph(3, 3)
    assert all(neighbor_sum(np.zeros(9), g, i) == 0 for i in range(9))
    path = from_edge_list(2, [(0, 1)])
    assert neighbor_sum([2.0, 5.0], path, 0) == 5.0
    # centre of a 3x3 grid: rook neighbours are 1, 3, 5, 7
    assert neighbor_sum(np.arange(9.0), g, 4) == 1 + 3 + 5 + 7


@st.composite
def random_graphs(draw, max_n=40):
    n = draw(st.integers(2, max_n))
    # a random spanning path guarantees no isolated region; extra edges on top
    perm = draw(st.permutations(range(n)))
    edges = list(zip(perm[:-1], perm[1:]))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges += [(i, k) for i, k in extra if i != k]
    return from_edge_list(n, edges)


@settings(max_examples=60, deadline=None)
@given(random_graphs(), st.floats(0.0, 0.999))
def test_car_precision_pd_and_matches_conditionals(g, rho):
    Q = car_precision(g, rho).toarray()
    np.linalg.cholesky(Q)
    assert np.allclose(Q, Q.T)
    assert np.allclose(np.diag(Q), g.degrees)
    for i, k in g.edges():
        # conditional mean weight rho / n_i on each neighbour
        assert np.isclose(-Q[i, k] / Q[i, i], rho / g.degrees[i])
        assert np.isclose(-Q[k, i] / Q[k, k], rho / g.degrees[k])


@settings(max_examples=40, deadline=None)
@given(random_graphs())
def test_graph_symmetry(g):
    for i, nb in enumerate(g.neighbors):
        assert i not in nb
        for k in nb:
            assert i in g.neighbors[k]
    assert np.array_equal(g.degrees, [len(nb) for nb in g.neighbors])


def test_large_random_graph_cholesky():
    rng = np.random.default_rng(3)
    n = 1000
    perm = rng.permutation(n)
    edges = list(zip(perm[:-1], perm[1:])) + [tuple(e) for e in rng.integers(0, n, (2000, 2)) if e[0] != e[1]]
    g = from_edge_list(n, edges)
    Q = car_precision(g, 0.99).toarray()
    np.linalg.cholesky(Q)


def test_logdet_matches_dense():
    g = build_grid_graph(4, 3)
    for rho in (0.0, 0.5, 0.95):
        sign, ld = np.linalg.slogdet(car_precision(g, rho).toarray())
        assert sign > 0
        assert np.isclose(car_logdet(g, rho), ld)
