"""Build consistency hypergraphs from measurements and a group-k check.

A consistency function scores unordered k-tuples of measurements against a
shared read-only context; the graph gains an edge for every combination whose
score stays within the threshold.  Batch construction evaluates all C(m, k)
combinations, incremental construction only the C(m-1, k-1) combinations that
involve the newly appended measurement; the two always produce identical edge
sets.  Combinations are enumerated by colexicographic rank, which gives cheap
vectorized unranking and lets parallel builds split the rank space into
contiguous chunks whose results merge deterministically.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.stats import chi2

from . import geometry
from .geometry import RangeCheckContext, RangeMeasurement
from .hypergraph import Hypergraph


def gamma_from_confidence(confidence: float) -> float:
    """Chi-square quantile with 1 dof; e.g. 0.95 -> 3.84."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    return float(chi2.ppf(confidence, df=1))


@runtime_checkable
class ConsistencyFunction(Protocol):
    """Scores k measurements; accept means score <= gamma.

    The accept decision must not depend on the order of the measurements.
    Implementations may provide ``accept_batch`` (see the range checks below)
    to let the graph builder evaluate vectorized combination chunks.
    """

    k: int
    gamma: float

    def evaluate(self, measurements: Sequence[RangeMeasurement], context) -> float: ...


@dataclass
class Group4RangeCheck:
    """Group-4 range consistency (leave-one-out trilateration, max-aggregated)."""

    gamma: float
    k: int = 4

    def evaluate(self, measurements, context) -> float:
        return geometry.consistency_check_group4(measurements, context)

    def accept_batch(self, context, pose_idx, values, variances, gamma):
        return geometry.group4_accept_batch(context, pose_idx, values, variances, gamma)


@dataclass
class PairwiseRangeCheck:
    """Pairwise circle-intersection feasibility (the k=2 baseline)."""

    gamma: float
    k: int = 2

    def evaluate(self, measurements, context) -> float:
        a, b = measurements
        return geometry.pairwise_range_check(a, b, context)

    def accept_batch(self, context, pose_idx, values, variances, gamma):
        return geometry.pairwise_accept_batch(context, pose_idx, values, variances, gamma)


@dataclass
class ConsistencyProblem:
    """Measurement list + check + shared context.

    ``known_association`` skips combinations spanning different beacons
    without evaluating them (measurements to different beacons are known to
    be inconsistent); it requires every measurement to carry a beacon id.
    """

    measurements: list[RangeMeasurement]
    function: ConsistencyFunction
    context: RangeCheckContext
    known_association: bool = False

    def __post_init__(self) -> None:
        if self.known_association and any(
            m.beacon_id is None for m in self.measurements
        ):
            raise ValueError("known-association problems need beacon ids on all measurements")

    def groups(self) -> list[np.ndarray]:
        """Measurement index groups inside which combinations are enumerated."""
        if not self.known_association:
            return [np.arange(len(self.measurements))]
        by_beacon: dict[int, list[int]] = {}
        for i, m in enumerate(self.measurements):
            by_beacon.setdefault(m.beacon_id, []).append(i)
        return [np.array(v) for _, v in sorted(by_beacon.items())]


@dataclass
class BuildReport:
    checks_evaluated: int = 0
    checks_skipped: int = 0
    edges_added: int = 0
    degenerate_failures: int = 0
    wall_seconds: float = 0.0
    buffered: list[tuple[int, ...]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Colexicographic combination unranking.
# ---------------------------------------------------------------------------


def _binomial_table(m: int, k: int) -> np.ndarray:
    """tbl[j, i] = C(i, j) for 0 <= i <= m, 1 <= j <= k (float64 exact at desk scale)."""
    tbl = np.zeros((k + 1, m + 1))
    for j in range(1, k + 1):
        for i in range(m + 1):
            tbl[j, i] = math.comb(i, j)
    return tbl


def combinations_chunk(m: int, k: int, lo: int, hi: int) -> np.ndarray:
    """Rows lo..hi of all C(m, k) combinations in colexicographic order.

    Colex rank of a sorted combination (c_1 < ... < c_k) is sum C(c_j, j);
    unranking peels the largest element first with a binary search over the
    binomial column.
    """
    total = math.comb(m, k)
    if not 0 <= lo <= hi <= total:
        raise ValueError(f"rank range [{lo}, {hi}) outside [0, {total})")
    ranks = np.arange(lo, hi, dtype=np.int64)
    out = np.empty((len(ranks), k), dtype=np.int64)
    tbl = _binomial_table(m, k)
    rem = ranks.astype(np.float64)
    for j in range(k, 0, -1):
        col = tbl[j]
        c = np.searchsorted(col, rem, side="right") - 1
        rem = rem - col[c]
        out[:, j - 1] = c
    return out


# ---------------------------------------------------------------------------
# Graph building.
# ---------------------------------------------------------------------------

_CHUNK = 262144


def _measurement_arrays(problem: ConsistencyProblem):
    ms = problem.measurements
    pose = np.array([m.pose_id for m in ms], dtype=np.int64)
    value = np.array([m.value for m in ms])
    var = np.array([m.sigma for m in ms]) ** 2
    return pose, value, var


def _evaluate_combos(
    problem: ConsistencyProblem,
    combos: np.ndarray,
    gamma: float | None,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """(accepted mask, scores, evaluation-failure rows) for combination rows.

    Uses the function's vectorized batch path when available; rows the batch
    path cannot decide (degenerate geometry) and functions without a batch
    path go through the scalar ``evaluate``, so decisions always match it.
    Failure rows scored +inf with distinct poses are the all-degenerate
    combinations the buffering policy may record; combinations with repeated
    poses are structural rejections and never count as failures.
    """
    fn = problem.function
    ms = problem.measurements
    n = combos.shape[0]
    scores = np.empty(n)
    if hasattr(fn, "accept_batch"):
        pose, value, var = _measurement_arrays(problem)
        accept, needs_scalar, batch_scores = fn.accept_batch(
            problem.context, pose[combos], value[combos], var[combos], gamma
        )
        scores[:] = batch_scores
        rows = np.nonzero(needs_scalar)[0]
    else:
        accept = np.zeros(n, dtype=bool)
        rows = np.arange(n)
    failure_rows: list[int] = []
    for r in rows:
        members = [ms[i] for i in combos[r]]
        score = fn.evaluate(members, problem.context)
        scores[r] = score
        accept[r] = score <= (gamma if gamma is not None else fn.gamma)
        if math.isinf(score) and len({m.pose_id for m in members}) == len(members):
            failure_rows.append(int(r))
    return accept, scores, failure_rows


def _group_chunks(groups: list[np.ndarray], k: int):
    """Yield (group index array, lo, hi) covering every in-group combination."""
    for idx in groups:
        total = math.comb(len(idx), k)
        for lo in range(0, total, _CHUNK):
            yield idx, lo, min(lo + _CHUNK, total)


_BUILD_STATE: dict | None = None  # set in the parent right before forking workers


def _build_init(state: dict | None) -> None:
    global _BUILD_STATE
    _BUILD_STATE = state


def _build_task(task) -> tuple[list[tuple[int, ...]], int, int, list[tuple[int, ...]]]:
    idx, lo, hi = task
    assert _BUILD_STATE is not None
    problem: ConsistencyProblem = _BUILD_STATE["problem"]
    combos = idx[combinations_chunk(len(idx), problem.function.k, lo, hi)]
    accept, _, failure_rows = _evaluate_combos(problem, combos, problem.function.gamma)
    edges = [tuple(int(v) for v in row) for row in combos[accept]]
    buffered: list[tuple[int, ...]] = []
    if problem.context.policy == "buffer":
        buffered = [tuple(int(v) for v in combos[r]) for r in failure_rows]
    return edges, hi - lo, len(failure_rows), buffered


def build_graph_batch(
    problem: ConsistencyProblem, threads: int = 1
) -> tuple[Hypergraph, BuildReport]:
    """All-at-once consistency graph: one vertex per measurement, an edge per
    accepted combination.  Exactly C(m, k) checks run (per group under known
    association), minus nothing but the function's own short-circuits."""
    t0 = time.perf_counter()
    m = len(problem.measurements)
    k = problem.function.k
    graph = Hypergraph(k, m)
    report = BuildReport()
    problem.context.position_cov_table()  # warm before forking: workers share it
    tasks = list(_group_chunks(problem.groups(), k))
    total_space = math.comb(m, k)
    in_groups = sum(math.comb(len(g), k) for g in problem.groups())
    report.checks_skipped = total_space - in_groups
    if threads > 1 and len(tasks) > 1 and _fork_available():
        ctx = mp.get_context("fork")
        _build_init({"problem": problem})
        try:
            # Workers inherit the problem through the fork: no pickling.
            with ctx.Pool(min(threads, len(tasks))) as pool:
                results = pool.map(_build_task, tasks)
        finally:
            _build_init(None)
    else:
        _build_init({"problem": problem})
        try:
            results = [_build_task(t) for t in tasks]
        finally:
            _build_init(None)
    for edges, count, failures, buffered in results:
        for e in edges:
            graph.add_edge(e)
        report.checks_evaluated += count
        report.degenerate_failures += failures
        report.buffered.extend(buffered)
    report.edges_added = graph.n_edges
    report.wall_seconds = time.perf_counter() - t0
    return graph, report


def _fork_available() -> bool:
    return not mp.current_process().daemon and "fork" in mp.get_all_start_methods()


def build_graph_incremental(
    graph: Hypergraph, problem: ConsistencyProblem, new_index: int, threads: int = 1
) -> tuple[Hypergraph, BuildReport]:
    """Extend the graph with measurement ``new_index`` (appended last).

    Evaluates the C(m-1, k-1) combinations pairing the new measurement with
    the existing ones; the resulting edge set matches a batch rebuild.
    """
    t0 = time.perf_counter()
    k = problem.function.k
    if graph.n_vertices != new_index:
        raise ValueError(
            f"graph has {graph.n_vertices} vertices; expected {new_index} before appending"
        )
    if len(problem.measurements) <= new_index:
        raise ValueError("problem does not contain the new measurement")
    graph.add_vertices(1)
    report = BuildReport()
    candidates = None
    for idx in problem.groups():
        if new_index in idx:
            candidates = idx[idx != new_index]
            break
    if candidates is None:  # new measurement outside every group: nothing to test
        report.checks_skipped = math.comb(new_index, k - 1)
        report.wall_seconds = time.perf_counter() - t0
        return graph, report
    report.checks_skipped = math.comb(new_index, k - 1) - math.comb(len(candidates), k - 1)
    total = math.comb(len(candidates), k - 1)
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        part = candidates[combinations_chunk(len(candidates), k - 1, lo, hi)]
        combos = np.concatenate(
            [part, np.full((part.shape[0], 1), new_index, dtype=np.int64)], axis=1
        )
        accept, _, failure_rows = _evaluate_combos(problem, combos, problem.function.gamma)
        for row in combos[accept]:
            graph.add_edge(tuple(int(v) for v in row))
        report.checks_evaluated += hi - lo
        report.degenerate_failures += len(failure_rows)
        if problem.context.policy == "buffer":
            report.buffered.extend(tuple(int(v) for v in combos[r]) for r in failure_rows)
    report.edges_added = graph.n_edges
    report.wall_seconds = time.perf_counter() - t0
    return graph, report


def score_all_combinations(problem: ConsistencyProblem) -> tuple[np.ndarray, np.ndarray]:
    """Scores for every in-group combination (combos array, score array).

    The per-combination score does not depend on the threshold, so sweeping
    gamma only needs one scoring pass followed by cheap thresholding (see
    :func:`graph_from_scores`).
    """
    k = problem.function.k
    all_combos: list[np.ndarray] = []
    all_scores: list[np.ndarray] = []
    for idx, lo, hi in _group_chunks(problem.groups(), k):
        combos = idx[combinations_chunk(len(idx), k, lo, hi)]
        _, scores, _ = _evaluate_combos(problem, combos, None)
        all_combos.append(combos)
        all_scores.append(scores)
    if not all_combos:
        return np.empty((0, k), dtype=np.int64), np.empty(0)
    return np.concatenate(all_combos), np.concatenate(all_scores)


def graph_from_scores(
    problem: ConsistencyProblem, combos: np.ndarray, scores: np.ndarray, gamma: float
) -> Hypergraph:
    graph = Hypergraph(problem.function.k, len(problem.measurements))
    for row in combos[scores <= gamma]:
        graph.add_edge(tuple(int(v) for v in row))
    return graph
