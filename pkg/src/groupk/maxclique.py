"""Exact and heuristic maximum-clique search on k-uniform hypergraphs.

The exact search is a branch-and-bound over candidate extensions: starting
from each vertex and each of its incident edges, it grows a clique ``S`` while
maintaining the required-stub set ``R`` (all (k-1)-subsets of ``S``) and the
candidate set ``U`` (vertices whose edge set contains every stub in ``R``).
Degree and cardinality bounds prune against the incumbent best clique.  The
heuristic replaces the exhaustive edge/vertex enumeration with a greedy choice
by connection counts within the start vertex's edge set.

The outer loop over start vertices is data-parallel: with ``threads > 1`` it
is partitioned into contiguous ranges evaluated by forked worker processes
that share the incumbent size (a monotone lower bound; stale reads only weaken
pruning, never correctness).  Returned clique *size* is invariant to the
thread count; the vertex set may differ between thread counts when ties exist.
"""

from __future__ import annotations

import itertools
import multiprocessing as mp
import time
from dataclasses import dataclass, field, replace
from typing import Literal

from .hypergraph import Hypergraph


@dataclass(frozen=True)
class Clique:
    """A vertex set in which every k-subset is an edge of its source graph."""

    vertices: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(sorted(self.vertices)))

    @property
    def size(self) -> int:
        return len(self.vertices)


@dataclass
class SearchConfig:
    mode: Literal["exact", "heuristic"] = "heuristic"
    threads: int = 1
    warm_start: Clique | None = None
    top_n: int = 1
    disjoint: bool = True
    # Diagnostics: disabling the incumbent-bound prunes must never change the
    # exact-mode result size (differential-tested).
    pruning: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("exact", "heuristic"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass
class SearchReport:
    """Wall-clock instrumentation: cache construction vs. clique search."""

    build_seconds: float = 0.0
    search_seconds: float = 0.0

    @property
    def total_seconds(self) -> float:
        return self.build_seconds + self.search_seconds


def combinations_of_size(vertices, size: int) -> set[tuple[int, ...]]:
    """All canonical ``size``-subsets of ``vertices`` as sorted tuples."""
    vs = sorted(vertices)
    if not 0 <= size <= len(vs):
        raise ValueError(f"subset size {size} out of range for {len(vs)} vertices")
    return set(itertools.combinations(vs, size))


# ---------------------------------------------------------------------------
# Incumbent: the only shared mutable state during a search.
# ---------------------------------------------------------------------------


class _Incumbent:
    """Tracks the best clique found locally plus an optional cross-process size.

    ``shared`` is a (RawValue, Lock) pair: bound reads are unlocked (a stale,
    smaller value only weakens pruning), updates re-check under the lock.
    """

    __slots__ = ("local_size", "local_vertices", "shared")

    def __init__(self, initial_size: int = 0, shared=None) -> None:
        self.local_size = initial_size
        self.local_vertices: tuple[int, ...] = ()
        self.shared = shared

    @property
    def size(self) -> int:
        if self.shared is not None:
            s = self.shared[0].value  # dirty read
            if s > self.local_size:
                return s
        return self.local_size

    def offer(self, vertices: tuple[int, ...]) -> None:
        n = len(vertices)
        if n > self.local_size:
            self.local_size = n
            self.local_vertices = vertices
        if self.shared is not None:
            raw, lock = self.shared
            if n > raw.value:
                with lock:
                    if n > raw.value:
                        raw.value = n


# ---------------------------------------------------------------------------
# Per-start-vertex search kernels.
# ---------------------------------------------------------------------------


def _exact_from_vertex(g: Hypergraph, i: int, inc: _Incumbent, prune: bool) -> None:
    k = g.k
    if prune and g.degree(i) + 1 < inc.size:
        return
    nbrs_i = sorted(g.neighborhood(i))
    for e in sorted(g.stubs(i)):
        s0 = tuple(sorted(e + (i,)))
        r0 = set(itertools.combinations(s0, k - 1))
        bound = inc.size
        u0 = [
            j
            for j in nbrs_i
            if j > i
            and (not prune or g.degree(j) + 1 >= bound)
            and r0 <= g.stubs(j)
        ]
        if not u0:
            inc.offer(s0)
            continue
        # Explicit stack replaces the recursion; each frame is a suspended
        # while-loop over U[idx:].  Children are pushed last so DFS order
        # matches the recursive formulation.
        stack: list[tuple[tuple[int, ...], set, list[int], int]] = [(s0, r0, u0, 0)]
        while stack:
            s, r, u, idx = stack.pop()
            remaining = len(u) - idx
            if remaining <= 0:
                continue
            if prune and len(s) + remaining <= inc.size:
                continue
            v = u[idx]
            if idx + 1 < len(u):
                stack.append((s, r, u, idx + 1))
            s_rec = tuple(sorted(s + (v,)))
            r_rec = r | {
                tuple(sorted(p + (v,))) for p in itertools.combinations(s, k - 2)
            }
            bound = inc.size
            nbrs_v = g.neighborhood(v)
            u_rec = [
                q
                for q in u[idx + 1 :]
                if q in nbrs_v
                and (not prune or g.degree(q) >= bound)
                and r_rec <= g.stubs(q)
            ]
            if not u_rec:
                inc.offer(s_rec)
            else:
                stack.append((s_rec, r_rec, u_rec, 0))


def _heuristic_from_vertex(g: Hypergraph, i: int, inc: _Incumbent, prune: bool) -> None:
    k = g.k
    if prune and g.degree(i) + 1 < inc.size:
        return
    stubs_i = g.stubs(i)
    if not stubs_i:
        return
    # Connection counts within E(v_i): for each neighbor, the number of stubs
    # of v_i it appears in.  Used both for the initial edge choice and the
    # greedy candidate choice; ties break to the lexicographically smallest.
    conn: dict[int, int] = {}
    for stub in stubs_i:
        for w in stub:
            conn[w] = conn.get(w, 0) + 1
    best_edge: tuple[int, ...] | None = None
    best_score = -1
    for e in sorted(stubs_i):
        score = sum(conn[w] for w in e)
        if score > best_score:
            best_edge, best_score = e, score
    assert best_edge is not None
    s = tuple(sorted(best_edge + (i,)))
    r = set(itertools.combinations(s, k - 1))
    bound = inc.size
    u = [
        j
        for j in sorted(g.neighborhood(i))
        if (not prune or g.degree(j) + 1 >= bound) and r <= g.stubs(j)
    ]
    if prune and len(s) + len(u) <= inc.size:
        return
    while True:
        if not u:
            inc.offer(s)
            return
        pick = -1
        pick_conn = -1
        for q in u:  # u is sorted, strict > keeps the smallest among ties
            c = conn.get(q, 0)
            if c > pick_conn:
                pick, pick_conn = q, c
        r |= {tuple(sorted(p + (pick,))) for p in itertools.combinations(s, k - 2)}
        s = tuple(sorted(s + (pick,)))
        bound = inc.size
        nbrs_pick = g.neighborhood(pick)
        u = [
            q
            for q in u
            if q != pick
            and q in nbrs_pick
            and (not prune or g.degree(q) >= bound)
            and r <= g.stubs(q)
        ]


_KERNELS = {"exact": _exact_from_vertex, "heuristic": _heuristic_from_vertex}


def _search_range(
    g: Hypergraph, mode: str, lo: int, hi: int, initial: int, shared, prune: bool
) -> tuple[int, tuple[int, ...]]:
    inc = _Incumbent(initial_size=initial, shared=shared)
    kernel = _KERNELS[mode]
    for i in range(lo, hi):
        kernel(g, i, inc, prune)
    return inc.local_size, inc.local_vertices


# ---------------------------------------------------------------------------
# Parallel dispatch (fork-based so workers inherit the built graph caches).
# ---------------------------------------------------------------------------

_WORK: dict | None = None  # set in the parent right before forking workers


def _pool_task(bounds: tuple[int, int]) -> tuple[int, tuple[int, ...]]:
    assert _WORK is not None
    return _search_range(
        _WORK["graph"],
        _WORK["mode"],
        bounds[0],
        bounds[1],
        _WORK["initial"],
        _WORK["shared"],
        _WORK["prune"],
    )


def _parallel_available() -> bool:
    if mp.current_process().daemon:
        return False  # pool workers cannot fork children; fall back to serial
    return "fork" in mp.get_all_start_methods()


def _run_search(g: Hypergraph, cfg: SearchConfig) -> Clique:
    warm = cfg.warm_start
    if warm is not None and not g.is_clique(warm.vertices):
        raise ValueError("warm_start is not a clique of the graph")
    if g.n_vertices == 0:
        return Clique(())
    if g.n_edges == 0:
        # One measurement alone is trivially consistent: report the best
        # (lowest-index) singleton rather than an empty set.
        single = Clique((0,))
        return warm if warm is not None and warm.size >= 1 else single

    g.build_caches()
    initial = warm.size if warm is not None else 0
    n = g.n_vertices
    threads = min(cfg.threads, n)
    if threads <= 1 or not _parallel_available():
        size, vertices = _search_range(g, cfg.mode, 0, n, initial, None, cfg.pruning)
        results = [(size, vertices)]
    else:
        ctx = mp.get_context("fork")
        shared = (ctx.RawValue("q", initial), ctx.Lock())
        step = (n + threads - 1) // threads
        ranges = [(lo, min(lo + step, n)) for lo in range(0, n, step)]
        global _WORK
        _WORK = {
            "graph": g,
            "mode": cfg.mode,
            "initial": initial,
            "shared": shared,
            "prune": cfg.pruning,
        }
        try:
            # Workers inherit _WORK through the fork: no graph pickling.
            with ctx.Pool(threads) as pool:
                results = pool.map(_pool_task, ranges)
        finally:
            _WORK = None
    best_size = max(r[0] for r in results)
    if warm is not None and warm.size >= best_size:
        return warm
    best_vertices = min(r[1] for r in results if r[0] == best_size)
    return Clique(best_vertices)


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------


def max_clique_exact(g: Hypergraph, cfg: SearchConfig | None = None) -> Clique:
    """Maximum-cardinality clique; the returned size is the true optimum."""
    cfg = replace(cfg, mode="exact") if cfg is not None else SearchConfig(mode="exact")
    return _run_search(g, cfg)


def max_clique_heuristic(g: Hypergraph, cfg: SearchConfig | None = None) -> Clique:
    """Greedy clique by connection counts; valid but not necessarily maximum."""
    cfg = replace(cfg, mode="heuristic") if cfg is not None else SearchConfig()
    return _run_search(g, cfg)


def search_with_report(g: Hypergraph, cfg: SearchConfig) -> tuple[Clique, SearchReport]:
    """Run the configured search, timing cache construction and search separately."""
    t0 = time.perf_counter()
    g.build_caches()
    t1 = time.perf_counter()
    clique = _run_search(g, cfg)
    t2 = time.perf_counter()
    return clique, SearchReport(build_seconds=t1 - t0, search_seconds=t2 - t1)


def top_n_disjoint_cliques(g: Hypergraph, cfg: SearchConfig) -> list[Clique]:
    """Up to ``cfg.top_n`` pairwise vertex-disjoint cliques, sizes non-increasing.

    Sequential peeling: find the best clique, isolate its vertices, repeat.
    The first clique therefore always equals the single-clique search result.
    """
    cliques: list[Clique] = []
    current = g
    active = set(range(g.n_vertices))
    single = replace(cfg, top_n=1, warm_start=None)
    for _ in range(cfg.top_n):
        if not active:
            break
        if current.n_edges == 0:
            clique = Clique((min(active),))
        else:
            clique = _run_search(current, single)
        if clique.size == 0:
            break
        cliques.append(clique)
        active.difference_update(clique.vertices)
        current = current.without_vertices(clique.vertices)
    return cliques


def incremental_search(
    g: Hypergraph, previous: Clique, new_vertices, cfg: SearchConfig
) -> Clique:
    """Grow ``previous`` after the graph gained vertices/edges.

    First greedily extends the previous clique using only the new vertices
    (cheap: one stub-subset test per candidate), then reruns the configured
    search warm-started at the current best so the incumbent bound prunes
    from the start.  The result is always at least as large as ``previous``.
    """
    if not g.is_clique(previous.vertices):
        raise ValueError("previous result is not a clique in the extended graph")
    k = g.k
    members = list(previous.vertices)
    member_set = set(members)
    g.build_caches()
    required: set[tuple[int, ...]] | None = None
    if len(members) >= k - 1:
        required = set(itertools.combinations(members, k - 1))
    for v in sorted(set(new_vertices)):
        if v in member_set:
            continue
        if required is None:
            accept = True  # |S| < k-1: any extension is vacuously a clique
        else:
            accept = required <= g.stubs(v)
        if accept:
            if required is not None:
                required |= {
                    tuple(sorted(p + (v,)))
                    for p in itertools.combinations(members, k - 2)
                }
            members.append(v)
            members.sort()
            member_set.add(v)
            if required is None and len(members) >= k - 1:
                required = set(itertools.combinations(members, k - 1))
    warm = Clique(tuple(members))
    result = _run_search(g, replace(cfg, warm_start=warm, top_n=1))
    return result if result.size >= warm.size else warm
