import numpy as np
import pytest

from decalign.graph import (
    CommGraph,
    ConnectivityError,
    GraphStructureError,
    build_graph,
    fully_connected,
)


class TestBuildGraph:
    def test_triangle(self):
        g = build_graph(3, [(0, 1), (0, 2), (1, 2)])
        assert g.edges == ((0, 1), (0, 2), (1, 2))
        assert g.modalities == (0, 1, 2)

    def test_two_isolated_nodes(self):
        with pytest.raises(ConnectivityError, match="components"):
            build_graph(2, [])

    def test_path_graph(self):
        g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
        assert g.neighbors(1) == [0, 2]

    def test_self_loop_rejected(self):
        with pytest.raises(GraphStructureError, match="self-loop"):
            build_graph(3, [(0, 1), (1, 1), (1, 2)])

    def test_duplicate_rejected(self):
        with pytest.raises(GraphStructureError, match="duplicates"):
            build_graph(3, [(0, 1), (1, 0), (1, 2)])

    def test_out_of_range_rejected(self):
        with pytest.raises(GraphStructureError, match="outside"):
            build_graph(3, [(0, 9)])

    def test_disconnected_lists_components(self):
        with pytest.raises(ConnectivityError, match=r"\[0, 1\].*\[2, 3\]"):
            build_graph(4, [(0, 1), (2, 3)])

    def test_single_node(self):
        g = build_graph(1, [])
        assert g.directed_edges() == []

    def test_modalities_length_checked(self):
        with pytest.raises(GraphStructureError, match="modality"):
            build_graph(2, [(0, 1)], modalities=[0])


class TestNeighbors:
    def test_triangle_node0(self):
        g = build_graph(3, [(0, 1), (0, 2), (1, 2)])
        assert g.neighbors(0) == [1, 2]

    def test_path_endpoint(self):
        g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
        assert g.neighbors(3) == [2]

    def test_star_center(self):
        g = build_graph(5, [(0, i) for i in range(1, 5)])
        assert g.neighbors(0) == [1, 2, 3, 4]

    def test_out_of_range(self):
        g = build_graph(2, [(0, 1)])
        with pytest.raises(GraphStructureError):
            g.neighbors(5)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            edges = [(i, i + 1) for i in range(n - 1)]  # spanning path
            extra = [
                (int(rng.integers(n)), int(rng.integers(n))) for _ in range(n)
            ]
            edges += [e for e in extra if e[0] != e[1]]
            dedup = list({(min(a, b), max(a, b)) for a, b in edges})
            g = build_graph(n, dedup)
            for i in range(n):
                for j in g.neighbors(i):
                    assert i in g.neighbors(j)


class TestDirectedEdges:
    def test_single_edge(self):
        g = build_graph(2, [(0, 1)])
        assert g.directed_edges() == [(0, 1), (1, 0)]

    def test_triangle_count(self):
        g = build_graph(3, [(0, 1), (0, 2), (1, 2)])
        assert len(g.directed_edges()) == 6

    def test_twice_undirected_count(self):
        g = fully_connected(5)
        assert len(g.directed_edges()) == 2 * len(g.edges)

    def test_canonical_order(self):
        g = build_graph(3, [(2, 1), (1, 0)])
        assert g.directed_edges() == [(0, 1), (1, 0), (1, 2), (2, 1)]


def test_graph_is_immutable():
    g = fully_connected(3)
    with pytest.raises(AttributeError):
        g.node_count = 5
    assert isinstance(g, CommGraph)
