"""k-uniform hypergraph storage with the derived quantities clique search needs.

Vertices are dense integers ``0..n-1`` assigned in insertion order; measurement
metadata lives outside this module.  Edges are canonical sorted tuples of ``k``
distinct vertices.  Neighborhoods ``N(v)``, degrees ``d(v)`` (= ``|N(v)|``) and
per-vertex edge sets ``E(v)`` (incident edges with ``v`` removed, "stubs") are
cached and maintained incrementally because the clique algorithms query them in
their innermost loops.

Thread safety: read-only queries are safe from many threads/processes once
construction is done.  ``add_edge``/``add_vertices`` are single-writer and must
not be interleaved with concurrent reads.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable
from dataclasses import dataclass


@dataclass(frozen=True)
class VertexEdgeSet:
    """Edge set E(v): the stubs left after removing ``owner`` from each incident edge."""

    owner: int
    stubs: frozenset[tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.stubs)


class Hypergraph:
    """A k-uniform hypergraph on vertices ``0..n_vertices-1``."""

    def __init__(self, k: int, n_vertices: int, edges: Iterable[Iterable[int]] = ()) -> None:
        if k < 2:
            raise ValueError(f"edge arity k must be >= 2, got {k}")
        if n_vertices < 0:
            raise ValueError(f"vertex count must be non-negative, got {n_vertices}")
        self._k = k
        self._n = n_vertices
        self._edges: set[tuple[int, ...]] = set()
        # Incidence caches, built lazily on first query and then kept in sync
        # by add_edge (the searches hit these constantly).
        self._neighborhoods: list[set[int]] | None = None
        self._stubs: list[set[tuple[int, ...]]] | None = None
        for e in edges:
            self.add_edge(e)

    # -- basic properties ---------------------------------------------------

    @property
    def k(self) -> int:
        return self._k

    @property
    def n_vertices(self) -> int:
        return self._n

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def edges(self) -> set[tuple[int, ...]]:
        """The edge set (copy) in canonical form."""
        return set(self._edges)

    def density(self) -> float:
        """|edges| / C(n, k); 0.0 for graphs too small to hold any edge."""
        total = math.comb(self._n, self._k)
        return len(self._edges) / total if total else 0.0

    # -- construction -------------------------------------------------------

    def _canonical(self, vertices: Iterable[int]) -> tuple[int, ...]:
        e = tuple(sorted(vertices))
        if len(e) != self._k:
            raise ValueError(f"edge {e} has arity {len(e)}, expected k={self._k}")
        if len(set(e)) != self._k:
            raise ValueError(f"edge {e} contains duplicate vertices")
        if e[0] < 0 or e[-1] >= self._n:
            raise ValueError(f"edge {e} has vertices outside [0, {self._n})")
        return e

    def add_edge(self, vertices: Iterable[int]) -> tuple[int, ...]:
        """Insert an edge (idempotent); returns the canonical tuple."""
        e = self._canonical(vertices)
        if e in self._edges:
            return e
        self._edges.add(e)
        if self._neighborhoods is not None:
            for v in e:
                self._neighborhoods[v].update(e)
                self._neighborhoods[v].discard(v)
        if self._stubs is not None:
            for i, v in enumerate(e):
                self._stubs[v].add(e[:i] + e[i + 1 :])
        return e

    def add_vertices(self, count: int) -> None:
        """Extend the vertex range by ``count`` new isolated vertices."""
        if count < 0:
            raise ValueError("cannot remove vertices")
        self._n += count
        if self._neighborhoods is not None:
            self._neighborhoods.extend(set() for _ in range(count))
        if self._stubs is not None:
            self._stubs.extend(set() for _ in range(count))

    def has_edge(self, vertices: Iterable[int]) -> bool:
        return tuple(sorted(vertices)) in self._edges

    # -- derived quantities ---------------------------------------------------

    def _check_vertex(self, v: int) -> None:
        if not 0 <= v < self._n:
            raise ValueError(f"vertex {v} outside [0, {self._n})")

    def build_caches(self) -> None:
        """Materialize neighborhoods and edge sets for every vertex.

        Called implicitly by the query methods; exposed so callers can time
        the data-structure build phase separately from search.
        """
        if self._neighborhoods is None:
            nbrs: list[set[int]] = [set() for _ in range(self._n)]
            for e in self._edges:
                for v in e:
                    nbrs[v].update(e)
            for v in range(self._n):
                nbrs[v].discard(v)
            self._neighborhoods = nbrs
        if self._stubs is None:
            stubs: list[set[tuple[int, ...]]] = [set() for _ in range(self._n)]
            for e in self._edges:
                for i, v in enumerate(e):
                    stubs[v].add(e[:i] + e[i + 1 :])
            self._stubs = stubs

    def neighborhood(self, v: int) -> set[int]:
        """N(v): vertices sharing at least one edge with v (never contains v)."""
        self._check_vertex(v)
        if self._neighborhoods is None:
            self.build_caches()
        assert self._neighborhoods is not None
        return self._neighborhoods[v]

    def degree(self, v: int) -> int:
        """d(v) = |N(v)| (the neighborhood size, not the incident-edge count)."""
        return len(self.neighborhood(v))

    def vertex_edge_set(self, v: int) -> VertexEdgeSet:
        """E(v) as a value object; see :meth:`stubs` for the raw set."""
        return VertexEdgeSet(owner=v, stubs=frozenset(self.stubs(v)))

    def stubs(self, v: int) -> set[tuple[int, ...]]:
        """E(v) as the internal (do-not-mutate) set of sorted (k-1)-tuples."""
        self._check_vertex(v)
        if self._stubs is None:
            self.build_caches()
        assert self._stubs is not None
        return self._stubs[v]

    def is_clique(self, vertices: Iterable[int]) -> bool:
        """True iff every k-subset of ``vertices`` is an edge (vacuously for |s| < k)."""
        vs = sorted(set(vertices))
        for v in vs:
            self._check_vertex(v)
        if len(vs) < self._k:
            return True
        return all(c in self._edges for c in itertools.combinations(vs, self._k))

    def without_vertices(self, dropped: Iterable[int]) -> "Hypergraph":
        """Copy with the given vertices isolated (their incident edges removed).

        Vertex ids are preserved; used by the disjoint-clique peeling loop.
        """
        drop = set(dropped)
        kept = (e for e in self._edges if not drop.intersection(e))
        return Hypergraph(self._k, self._n, kept)

    # -- text format ----------------------------------------------------------

    def to_text(self) -> str:
        """Serialize: header ``k n``, one edge per line, sorted, trailing newline."""
        lines = [f"{self._k} {self._n}"]
        lines.extend(" ".join(str(v) for v in e) for e in sorted(self._edges))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Hypergraph":
        """Parse the text format; ``#`` lines are comments."""
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise ValueError("empty hypergraph text")
        header = lines[0].split()
        if len(header) != 2:
            raise ValueError(f"bad header {lines[0]!r}, expected 'k n'")
        k, n = int(header[0]), int(header[1])
        g = cls(k, n)
        for ln in lines[1:]:
            g.add_edge(int(tok) for tok in ln.split())
        return g

    def write(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path: str) -> "Hypergraph":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_text(fh.read())

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Hypergraph(k={self._k}, n={self._n}, edges={len(self._edges)})"
