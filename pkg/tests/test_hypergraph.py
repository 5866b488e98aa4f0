import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupk.hypergraph import Hypergraph


def random_hypergraph(n, k, density, rng):
    g = Hypergraph(k, n)
    for e in itertools.combinations(range(n), k):
        if rng.random() < density:
            g.add_edge(e)
    return g


class TestAddEdge:
    def test_single_insertion(self):
        g = Hypergraph(3, 4)
        g.add_edge({0, 1, 2})
        assert g.n_edges == 1

    def test_canonicalization_and_idempotence(self):
        g = Hypergraph(3, 4)
        g.add_edge((2, 1, 0))
        g.add_edge((0, 1, 2))
        assert g.n_edges == 1
        assert g.edges() == {(0, 1, 2)}

    def test_arity_mismatch(self):
        g = Hypergraph(3, 4)
        with pytest.raises(ValueError):
            g.add_edge((0, 1))

    def test_out_of_range_vertex(self):
        g = Hypergraph(3, 4)
        with pytest.raises(ValueError):
            g.add_edge((0, 1, 4))

    def test_duplicate_vertices_rejected(self):
        g = Hypergraph(3, 4)
        with pytest.raises(ValueError):
            g.add_edge((0, 1, 1))


class TestNeighborhoodDegree:
    def test_single_edge(self):
        g = Hypergraph(3, 4, [(0, 1, 2)])
        assert g.neighborhood(0) == {1, 2}
        assert g.degree(0) == 2

    def test_complete_graph_symmetry(self):
        g = Hypergraph(3, 4, itertools.combinations(range(4), 3))
        assert all(len(g.neighborhood(v)) == 3 for v in range(4))

    def test_isolated_vertex(self):
        g = Hypergraph(3, 5, [(0, 1, 2)])
        assert g.degree(4) == 0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(0)
        g = random_hypergraph(10, 3, 0.18, rng)
        for v in range(10):
            brute = set()
            for e in g.edges():
                if v in e:
                    brute.update(e)
            brute.discard(v)
            assert g.neighborhood(v) == brute
            assert g.degree(v) == len(brute)

    def test_invalid_vertex(self):
        g = Hypergraph(3, 4)
        with pytest.raises(ValueError):
            g.neighborhood(4)


class TestVertexEdgeSet:
    def test_definition(self):
        g = Hypergraph(3, 4, [(0, 1, 2), (0, 1, 3)])
        assert g.vertex_edge_set(0).stubs == {(1, 2), (1, 3)}

    def test_empty(self):
        g = Hypergraph(3, 4, [(0, 1, 2)])
        assert len(g.vertex_edge_set(3)) == 0

    def test_round_trip_reconstruction(self):
        rng = np.random.default_rng(1)
        g = random_hypergraph(9, 3, 0.2, rng)
        for v in range(9):
            rebuilt = {tuple(sorted(s + (v,))) for s in g.stubs(v)}
            incident = {e for e in g.edges() if v in e}
            assert rebuilt == incident
            assert len(g.stubs(v)) == len(incident)


class TestIsClique:
    def test_complete(self):
        g = Hypergraph(3, 5, itertools.combinations(range(5), 3))
        assert g.is_clique(range(5))

    def test_missing_edge(self):
        edges = [e for e in itertools.combinations(range(4), 3) if e != (0, 1, 2)]
        g = Hypergraph(3, 4, edges)
        assert not g.is_clique({0, 1, 2, 3})

    def test_vacuous_below_k(self):
        g = Hypergraph(3, 4)
        assert g.is_clique({0, 1})

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = random_hypergraph(8, 3, float(rng.uniform(0.1, 0.5)), rng)
            for size in range(3, 6):
                subset = tuple(sorted(rng.choice(8, size=size, replace=False).tolist()))
                brute = all(c in g.edges() for c in itertools.combinations(subset, 3))
                assert g.is_clique(subset) == brute

    @given(st.sets(st.integers(0, 7), min_size=1, max_size=8), st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_monotone(self, subset, seed):
        rng = np.random.default_rng(seed)
        g = random_hypergraph(8, 3, 0.4, rng)
        if g.is_clique(subset):
            smaller = set(list(subset)[: max(0, len(subset) - 1)])
            assert g.is_clique(smaller)


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        g = random_hypergraph(12, 3, 0.15, rng)
        path = tmp_path / "graph.txt"
        g.write(str(path))
        loaded = Hypergraph.read(str(path))
        assert loaded.k == g.k and loaded.n_vertices == g.n_vertices
        assert loaded.edges() == g.edges()
        # bit-exact: rewriting produces identical bytes
        loaded.write(str(tmp_path / "again.txt"))
        assert (tmp_path / "graph.txt").read_bytes() == (tmp_path / "again.txt").read_bytes()

    def test_comments_and_trailing_newline(self):
        text = "# comment\n3 4\n0 1 2\n"
        g = Hypergraph.from_text(text)
        assert g.edges() == {(0, 1, 2)}
        assert g.to_text().endswith("\n")

    def test_k2_reduces_to_ordinary_graph(self):
        import networkx as nx

        rng = np.random.default_rng(4)
        g = random_hypergraph(12, 2, 0.3, rng)
        ref = nx.Graph()
        ref.add_nodes_from(range(12))
        ref.add_edges_from(g.edges())
        for v in range(12):
            assert g.neighborhood(v) == set(ref.neighbors(v))
            assert g.degree(v) == ref.degree(v)


class TestMutation:
    def test_add_vertices_extends_range(self):
        g = Hypergraph(3, 3, [(0, 1, 2)])
        g.neighborhood(0)  # build caches first, then grow
        g.add_vertices(2)
        g.add_edge((2, 3, 4))
        assert g.n_vertices == 5
        assert g.neighborhood(4) == {2, 3}

    def test_without_vertices(self):
        g = Hypergraph(3, 6, [(0, 1, 2), (3, 4, 5), (0, 4, 5)])
        h = g.without_vertices({0})
        assert h.edges() == {(3, 4, 5)}
        assert h.n_vertices == 6
        assert g.n_edges == 3  # original untouched
