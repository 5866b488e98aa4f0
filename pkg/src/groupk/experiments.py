"""Experiment harnesses: selection benchmarks, Monte Carlo studies and sweeps.

Every experiment is a pure function of its parameters plus a seed: per-trial
seeds derive from the root seed, method comparisons share world seeds (paired
trials), and result files contain only deterministic quantities.  Wall-clock
measurements go to a separate timing file because they can never be
bit-reproducible.  Trials run in a fork worker pool when ``workers > 1``;
inside pool workers the clique search falls back to serial automatically.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .consistency import (
    ConsistencyProblem,
    Group4RangeCheck,
    PairwiseRangeCheck,
    build_graph_batch,
    build_graph_incremental,
    gamma_from_confidence,
    graph_from_scores,
    score_all_combinations,
)
from .estimation import (
    FactorGraph,
    SolveReport,
    Values,
    build_selection_context,
    gauss_newton_solve,
    initialize_beacon,
    metrics,
    selection_rates,
)
from .geometry import Pose2, RangeCheckContext, RangeMeasurement
from .hypergraph import Hypergraph
from .maxclique import (
    Clique,
    SearchConfig,
    incremental_search,
    max_clique_exact,
    max_clique_heuristic,
    search_with_report,
    top_n_disjoint_cliques,
)
from .simulation import (
    Dataset,
    PlantedGraphConfig,
    WorldConfig,
    generate_planted_hypergraph,
    generate_world,
)

PRIOR_COVARIANCE = np.eye(3) * 1e-6  # gauge prior on pose 0 at the true origin


def derive_seed(root: int, *indices: int) -> int:
    """Deterministic per-trial seed from a root seed and index path."""
    seq = np.random.SeedSequence(entropy=root, spawn_key=tuple(indices))
    return int(seq.generate_state(1, dtype=np.uint64)[0] % (2**63))


def _check_function(method: str, gamma: float):
    if method == "gkcm":
        return Group4RangeCheck(gamma=gamma)
    if method == "pcm":
        return PairwiseRangeCheck(gamma=gamma)
    raise ValueError(f"unknown method {method!r}")


def methods_for(method: str) -> list[str]:
    if method == "both":
        return ["gkcm", "pcm"]
    if method in ("gkcm", "pcm"):
        return [method]
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Single-trial pipeline.
# ---------------------------------------------------------------------------


@dataclass
class SelectionOutcome:
    selected: list[int]
    cliques: list[Clique]
    graph: Hypergraph
    context: RangeCheckContext
    edges: int
    checks: int
    build_seconds: float
    search_seconds: float


def select_measurements(
    dataset: Dataset,
    method: str = "gkcm",
    confidence: float = 0.95,
    threads: int = 1,
    hidden: bool = False,
    top_n: int = 1,
    search_mode: str = "heuristic",
) -> SelectionOutcome:
    """Dead-reckon, build the consistency graph, search for the clique(s)."""
    gamma = gamma_from_confidence(confidence)
    context = build_selection_context(dataset.odometry)
    fn = _check_function(method, gamma)
    known = dataset.config.known_association and not hidden
    problem = ConsistencyProblem(dataset.ranges, fn, context, known_association=known)
    graph, report = build_graph_batch(problem, threads=threads)
    t0 = time.perf_counter()
    cfg = SearchConfig(mode=search_mode, threads=threads, top_n=top_n)
    if top_n > 1:
        cliques = top_n_disjoint_cliques(graph, cfg)
    elif search_mode == "exact":
        cliques = [max_clique_exact(graph, cfg)]
    else:
        cliques = [max_clique_heuristic(graph, cfg)]
    search_seconds = time.perf_counter() - t0
    selected = sorted(v for c in cliques for v in c.vertices)
    return SelectionOutcome(
        selected=selected,
        cliques=cliques,
        graph=graph,
        context=context,
        edges=graph.n_edges,
        checks=report.checks_evaluated,
        build_seconds=report.wall_seconds,
        search_seconds=search_seconds,
    )


def solve_dataset(
    dataset: Dataset,
    selected: list[int],
    context: RangeCheckContext,
    beacon_of_clique: list[list[int]] | None = None,
):
    """Gauss-Newton solve over odometry plus the selected range measurements.

    With ``beacon_of_clique`` (data association), each clique gets its own
    beacon variable; otherwise measurements keep their dataset beacon ids.
    Returns (estimate, report, beacon order) where beacon order maps solver
    beacon index -> dataset beacon id (or clique index when hidden).
    """
    graph = FactorGraph()
    graph.add_prior(0, Pose2(), PRIOR_COVARIANCE)
    for o in dataset.odometry:
        graph.add_odometry(o)
    n_poses = len(dataset.poses)
    init_poses = [context.pose(i) for i in range(n_poses)]
    beacons_init: list[np.ndarray] = []
    if beacon_of_clique is None:
        used = sorted({dataset.ranges[i].beacon_id for i in selected})
        remap = {b: j for j, b in enumerate(used)}
        for i in selected:
            m = dataset.ranges[i]
            graph.add_range(RangeMeasurement(m.pose_id, remap[m.beacon_id], m.value, m.sigma))
        for b in used:
            members = [i for i in selected if dataset.ranges[i].beacon_id == b]
            beacons_init.append(initialize_beacon(context, dataset.ranges, members))
        order = list(used)
    else:
        order = []
        for j, members in enumerate(beacon_of_clique):
            for i in members:
                m = dataset.ranges[i]
                graph.add_range(RangeMeasurement(m.pose_id, j, m.value, m.sigma))
            beacons_init.append(initialize_beacon(context, dataset.ranges, members))
            order.append(j)
    init = Values(init_poses, beacons_init)
    estimate, report = gauss_newton_solve(graph, init)
    return estimate, report, order


def run_selection_trial(
    world: WorldConfig, method: str, confidence: float, threads: int = 1
) -> dict:
    """One full trial: simulate, select, solve, score (known association)."""
    dataset = generate_world(world)
    outcome = select_measurements(dataset, method, confidence, threads=threads)
    t0 = time.perf_counter()
    estimate, report, order = solve_dataset(dataset, outcome.selected, outcome.context)
    solve_seconds = time.perf_counter() - t0
    truth_beacons = [dataset.beacons[b].position.copy() for b in order]
    truth = Values(dataset.poses, truth_beacons)
    result = metrics(estimate, truth, outcome.selected, dataset.inlier_mask, report)
    result.build_seconds = outcome.build_seconds
    result.search_seconds = outcome.search_seconds
    result.solve_seconds = solve_seconds
    row = asdict(result)
    row.update(
        method=method,
        seed=world.seed,
        clique_size=outcome.cliques[0].size,
        edges=outcome.edges,
        checks=outcome.checks,
    )
    return row


# ---------------------------------------------------------------------------
# Worker pool plumbing (fork; trial closures re-derive everything from seeds).
# ---------------------------------------------------------------------------

_POOL_FN = None


def _pool_call(arg):
    assert _POOL_FN is not None
    return _POOL_FN(arg)


def _map_trials(fn, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1 or mp.current_process().daemon:
        return [fn(a) for a in args]
    global _POOL_FN
    _POOL_FN = fn
    try:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, len(args))) as pool:
            return pool.map(_pool_call, args)
    finally:
        _POOL_FN = None


# ---------------------------------------------------------------------------
# Output writing.
# ---------------------------------------------------------------------------


def _write_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    columns = list(rows[0].keys())
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


_TIMING_KEYS = ("build_seconds", "search_seconds", "solve_seconds", "wall_seconds")


def write_outputs(out_prefix: str | None, name: str, rows: list[dict], summary: dict) -> None:
    """results csv (deterministic) + timing csv (volatile) + json summary."""
    if not out_prefix:
        return
    det_rows = [
        {k: v for k, v in row.items() if k not in _TIMING_KEYS} for row in rows
    ]
    tim_rows = [
        {k: v for k, v in row.items() if k in _TIMING_KEYS or k in ("method", "seed", "trial")}
        for row in rows
    ]
    _write_csv(f"{out_prefix}_{name}_results.csv", det_rows)
    _write_csv(f"{out_prefix}_{name}_timing.csv", tim_rows)
    _write_json(f"{out_prefix}_{name}_summary.json", summary)


def _aggregate(rows: list[dict], keys: list[str]) -> dict:
    agg = {}
    for key in keys:
        vals = np.array([r[key] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            agg[key] = {"mean": math.nan, "std": math.nan, "median": math.nan}
        else:
            agg[key] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
                "median": float(np.median(vals)),
            }
    return agg


_METRIC_KEYS = [
    "translation_rmse",
    "rotation_rmse",
    "beacon_error",
    "residual",
    "chi2_normalized",
    "tpr",
    "fpr",
]


# ---------------------------------------------------------------------------
# Monte Carlo outlier rejection (known association).
# ---------------------------------------------------------------------------


def montecarlo_world(seed: int, pose_count: int = 100, outlier_fraction: float = 0.8) -> WorldConfig:
    return WorldConfig(
        trajectory_kind="manhattan",
        pose_count=pose_count,
        beacon_count=1,
        outlier_fraction=outlier_fraction,
        seed=seed,
    )


def run_montecarlo(
    trials: int = 30,
    seed: int = 0,
    method: str = "both",
    confidence: float = 0.95,
    pose_count: int = 100,
    outlier_fraction: float = 0.8,
    workers: int = 1,
    threads: int = 1,
    out: str | None = None,
) -> dict:
    def one(arg):
        t, meth = arg
        world = montecarlo_world(derive_seed(seed, t), pose_count, outlier_fraction)
        row = run_selection_trial(world, meth, confidence, threads=threads)
        row["trial"] = t
        return row

    args = [(t, m) for t in range(trials) for m in methods_for(method)]
    rows = _map_trials(one, args, workers)
    summary = {
        "experiment": "montecarlo",
        "config": {
            "trials": trials,
            "seed": seed,
            "confidence": confidence,
            "pose_count": pose_count,
            "outlier_fraction": outlier_fraction,
            "method": method,
        },
        "methods": {
            m: _aggregate([r for r in rows if r["method"] == m], _METRIC_KEYS)
            for m in methods_for(method)
        },
    }
    write_outputs(out, "montecarlo", rows, summary)
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# Outlier-ratio sweep.
# ---------------------------------------------------------------------------


def run_outlier_sweep(
    fractions: list[float] | None = None,
    trials: int = 10,
    seed: int = 0,
    method: str = "both",
    confidence: float = 0.95,
    pose_count: int = 50,
    workers: int = 1,
    out: str | None = None,
) -> dict:
    if fractions is None:
        fractions = [round(0.10 + 0.05 * i, 2) for i in range(17)]  # 0.10 .. 0.90

    def one(arg):
        fi, t, meth = arg
        world = montecarlo_world(derive_seed(seed, t), pose_count, fractions[fi])
        row = run_selection_trial(world, meth, confidence)
        row["trial"] = t
        row["outlier_fraction"] = fractions[fi]
        return row

    args = [
        (fi, t, m)
        for fi in range(len(fractions))
        for t in range(trials)
        for m in methods_for(method)
    ]
    rows = _map_trials(one, args, workers)
    curves = []
    for f in fractions:
        for m in methods_for(method):
            sel = [r for r in rows if r["method"] == m and r["outlier_fraction"] == f]
            curves.append(
                {
                    "outlier_fraction": f,
                    "method": m,
                    "tpr_mean": float(np.mean([r["tpr"] for r in sel])),
                    "fpr_mean": float(np.mean([r["fpr"] for r in sel])),
                }
            )
    summary = {
        "experiment": "outlier-sweep",
        "config": {
            "fractions": fractions,
            "trials": trials,
            "seed": seed,
            "pose_count": pose_count,
            "confidence": confidence,
        },
        "curves": curves,
    }
    write_outputs(out, "outlier_sweep", rows, summary)
    return {"rows": rows, "curves": curves, "summary": summary}


# ---------------------------------------------------------------------------
# Threshold (confidence) sweep.
# ---------------------------------------------------------------------------

DEFAULT_CONFIDENCES = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99]


def run_gamma_sweep(
    confidences: list[float] | None = None,
    trials: int = 8,
    seed: int = 0,
    method: str = "both",
    pose_count: int = 50,
    outlier_fraction: float = 0.8,
    workers: int = 1,
    out: str | None = None,
) -> dict:
    """Scores are computed once per trial and re-thresholded per confidence."""
    confidences = confidences or DEFAULT_CONFIDENCES

    def one(arg):
        t, meth = arg
        world = montecarlo_world(derive_seed(seed, t), pose_count, outlier_fraction)
        dataset = generate_world(world)
        context = build_selection_context(dataset.odometry)
        fn = _check_function(meth, gamma_from_confidence(0.5))
        problem = ConsistencyProblem(dataset.ranges, fn, context, known_association=True)
        combos, scores = score_all_combinations(problem)
        out_rows = []
        for conf in confidences:
            gamma = gamma_from_confidence(conf)
            graph = graph_from_scores(problem, combos, scores, gamma)
            clique = max_clique_heuristic(graph)
            selected = list(clique.vertices)
            estimate, report, order = solve_dataset(dataset, selected, context)
            truth = Values(dataset.poses, [dataset.beacons[b].position.copy() for b in order])
            res = metrics(estimate, truth, selected, dataset.inlier_mask, report)
            out_rows.append(
                {
                    "method": meth,
                    "trial": t,
                    "seed": world.seed,
                    "confidence": conf,
                    "gamma": gamma,
                    "clique_size": clique.size,
                    "tpr": res.tpr,
                    "fpr": res.fpr,
                    "chi2_normalized": res.chi2_normalized,
                }
            )
        return out_rows

    args = [(t, m) for t in range(trials) for m in methods_for(method)]
    rows = [r for batch in _map_trials(one, args, workers) for r in batch]
    curves = []
    for conf in confidences:
        for m in methods_for(method):
            sel = [r for r in rows if r["method"] == m and r["confidence"] == conf]
            chi = np.array([r["chi2_normalized"] for r in sel], dtype=float)
            chi = chi[np.isfinite(chi)]
            curves.append(
                {
                    "confidence": conf,
                    "method": m,
                    "tpr_mean": float(np.mean([r["tpr"] for r in sel])),
                    "fpr_mean": float(np.mean([r["fpr"] for r in sel])),
                    "chi2_mean": float(np.mean(chi)) if len(chi) else math.nan,
                }
            )
    summary = {
        "experiment": "gamma-sweep",
        "config": {
            "confidences": confidences,
            "trials": trials,
            "seed": seed,
            "pose_count": pose_count,
            "outlier_fraction": outlier_fraction,
        },
        "curves": curves,
    }
    write_outputs(out, "gamma_sweep", rows, summary)
    return {"rows": rows, "curves": curves, "summary": summary}


# ---------------------------------------------------------------------------
# Data association (hidden beacon identities, n disjoint cliques).
# ---------------------------------------------------------------------------


def run_data_association(
    trials: int = 20,
    seed: int = 0,
    method: str = "both",
    confidence: float = 0.95,
    pose_count: int = 30,
    beacon_count: int = 5,
    outlier_fraction: float = 0.25,
    workers: int = 1,
    out: str | None = None,
) -> dict:
    def one(arg):
        t, meth = arg
        world = WorldConfig(
            trajectory_kind="manhattan",
            pose_count=pose_count,
            beacon_count=beacon_count,
            outlier_fraction=outlier_fraction,
            seed=derive_seed(seed, t),
            known_association=False,
        )
        dataset = generate_world(world)
        outcome = select_measurements(
            dataset, meth, confidence, hidden=True, top_n=beacon_count
        )
        cliques = [list(c.vertices) for c in outcome.cliques]
        # Map each clique to a beacon by majority true label (scoring only).
        majority = []
        for members in cliques:
            labels = [dataset.ranges[i].beacon_id for i in members]
            majority.append(max(set(labels), key=labels.count))
        disjoint = len({v for c in cliques for v in c}) == sum(len(c) for c in cliques)
        estimate, report, _ = solve_dataset(
            dataset, outcome.selected, outcome.context, beacon_of_clique=cliques
        )
        truth = Values(dataset.poses, [dataset.beacons[b].position.copy() for b in majority])
        res = metrics(estimate, truth, outcome.selected, dataset.inlier_mask, report)
        return {
            "method": meth,
            "trial": t,
            "seed": world.seed,
            "clique_sizes": " ".join(str(len(c)) for c in cliques),
            "n_cliques": len(cliques),
            "distinct_beacons": len(set(majority)),
            "disjoint": disjoint,
            "tpr": res.tpr,
            "fpr": res.fpr,
            "chi2_normalized": res.chi2_normalized,
            "translation_rmse": res.translation_rmse,
            "rotation_rmse": res.rotation_rmse,
            "beacon_error": res.beacon_error,
            "residual": res.residual,
            "build_seconds": outcome.build_seconds,
            "search_seconds": outcome.search_seconds,
        }

    args = [(t, m) for t in range(trials) for m in methods_for(method)]
    rows = _map_trials(one, args, workers)
    summary = {
        "experiment": "data-association",
        "config": {
            "trials": trials,
            "seed": seed,
            "pose_count": pose_count,
            "beacon_count": beacon_count,
            "outlier_fraction": outlier_fraction,
            "confidence": confidence,
        },
        "methods": {
            m: _aggregate(
                [r for r in rows if r["method"] == m],
                ["tpr", "fpr", "chi2_normalized", "translation_rmse", "beacon_error"],
            )
            for m in methods_for(method)
        },
    }
    write_outputs(out, "data_association", rows, summary)
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# Incremental vs batch streaming comparison.
# ---------------------------------------------------------------------------


def run_incremental_timing(
    seed: int = 0,
    confidence: float = 0.95,
    pose_count: int = 100,
    outlier_fraction: float = 0.8,
    threads: int = 1,
    out: str | None = None,
) -> dict:
    """Stream one world; at each step run incremental and batch updates.

    Updates include the consistency checks and the clique search.  Incremental
    edge sets are asserted equal to the batch build's at every step.
    """
    world = montecarlo_world(derive_seed(seed, 0), pose_count, outlier_fraction)
    dataset = generate_world(world)
    context = build_selection_context(dataset.odometry)
    gamma = gamma_from_confidence(confidence)
    m = dataset.measurement_count
    k = 4
    inc_graph = Hypergraph(k, 0)
    inc_clique = Clique(())
    rows = []
    for step in range(m):
        prefix = dataset.ranges[: step + 1]
        problem = ConsistencyProblem(
            prefix, Group4RangeCheck(gamma), context, known_association=True
        )
        t0 = time.perf_counter()
        inc_graph, inc_rep = build_graph_incremental(inc_graph, problem, step, threads=threads)
        if step + 1 >= k:
            inc_clique = incremental_search(
                inc_graph, inc_clique, {step}, SearchConfig(mode="heuristic", threads=threads)
            )
        inc_seconds = time.perf_counter() - t0
        t0 = time.perf_counter()
        batch_graph, batch_rep = build_graph_batch(problem, threads=threads)
        batch_clique = max_clique_heuristic(
            batch_graph, SearchConfig(mode="heuristic", threads=threads)
        )
        batch_seconds = time.perf_counter() - t0
        if batch_graph.edges() != inc_graph.edges():
            raise AssertionError(f"incremental/batch edge sets diverged at step {step}")
        rows.append(
            {
                "step": step + 1,
                "incremental_size": inc_clique.size,
                "batch_size": batch_clique.size,
                "incremental_checks": inc_rep.checks_evaluated,
                "batch_checks": batch_rep.checks_evaluated,
                "incremental_seconds": inc_seconds,
                "batch_seconds": batch_seconds,
            }
        )
    total_inc = sum(r["incremental_seconds"] for r in rows)
    total_batch = sum(r["batch_seconds"] for r in rows)
    sizes_equal = all(r["incremental_size"] == r["batch_size"] for r in rows)
    summary = {
        "experiment": "incremental-timing",
        "config": {
            "seed": seed,
            "pose_count": pose_count,
            "outlier_fraction": outlier_fraction,
            "confidence": confidence,
        },
        "total_incremental_seconds": total_inc,
        "total_batch_seconds": total_batch,
        "speedup": total_batch / total_inc if total_inc > 0 else math.inf,
        "sizes_equal_at_every_step": sizes_equal,
    }
    if out:
        det = [
            {k2: v for k2, v in r.items() if not k2.endswith("seconds")} for r in rows
        ]
        _write_csv(f"{out}_incremental_results.csv", det)
        _write_csv(
            f"{out}_incremental_timing.csv",
            [
                {"step": r["step"], "incremental_seconds": r["incremental_seconds"], "batch_seconds": r["batch_seconds"]}
                for r in rows
            ],
        )
        _write_json(f"{out}_incremental_summary.json", summary)
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# Clique benchmarks on planted hypergraphs.
# ---------------------------------------------------------------------------


def run_bench_timing(
    node_counts: list[int] | None = None,
    thread_counts: list[int] | None = None,
    trials: int = 5,
    seed: int = 0,
    k: int = 3,
    density: float = 0.1,
    planted: int = 10,
    exact_max_nodes: int = 100,
    out: str | None = None,
) -> dict:
    """Average build+search wall time on random planted hypergraphs.

    Exact mode runs only up to ``exact_max_nodes`` vertices (exponential
    worst case); the heuristic runs everywhere.
    """
    node_counts = node_counts or [25, 50, 100, 150, 200, 250, 300]
    thread_counts = thread_counts or [1, 2, 4, 8]
    rows = []
    for n in node_counts:
        for trial in range(trials):
            cfg = PlantedGraphConfig(
                k=k, n=n, density=density, planted_clique_size=min(planted, n),
                seed=derive_seed(seed, n, trial),
            )
            graph = generate_planted_hypergraph(cfg)
            for mode in ("heuristic", "exact"):
                if mode == "exact" and n > exact_max_nodes:
                    continue
                for threads in thread_counts:
                    fresh = Hypergraph(k, n, graph.edges())  # cold caches per run
                    clique, rep = search_with_report(
                        fresh, SearchConfig(mode=mode, threads=threads)
                    )
                    rows.append(
                        {
                            "nodes": n,
                            "mode": mode,
                            "threads": threads,
                            "trial": trial,
                            "clique_size": clique.size,
                            "build_seconds": rep.build_seconds,
                            "search_seconds": rep.search_seconds,
                        }
                    )
    table = []
    for n in node_counts:
        for mode in ("heuristic", "exact"):
            for threads in thread_counts:
                sel = [
                    r
                    for r in rows
                    if r["nodes"] == n and r["mode"] == mode and r["threads"] == threads
                ]
                if not sel:
                    continue
                table.append(
                    {
                        "nodes": n,
                        "mode": mode,
                        "threads": threads,
                        "mean_build_seconds": float(np.mean([r["build_seconds"] for r in sel])),
                        "mean_search_seconds": float(np.mean([r["search_seconds"] for r in sel])),
                        "mean_total_seconds": float(
                            np.mean([r["build_seconds"] + r["search_seconds"] for r in sel])
                        ),
                    }
                )
    summary = {
        "experiment": "bench-timing",
        "config": {
            "node_counts": node_counts,
            "thread_counts": thread_counts,
            "trials": trials,
            "seed": seed,
            "k": k,
            "density": density,
            "planted": planted,
        },
        "table": table,
    }
    write_outputs(out, "bench_timing", rows, summary)
    return {"rows": rows, "table": table, "summary": summary}


def run_bench_heuristic(
    planted_sizes: list[int] | None = None,
    densities: list[float] | None = None,
    trials: int = 50,
    n: int = 100,
    k: int = 3,
    seed: int = 0,
    workers: int = 1,
    out: str | None = None,
) -> dict:
    """Heuristic success rate per (planted size, density) cell.

    Success means the returned clique has exactly the planted cardinality;
    trials returning a larger clique are dropped from the denominator.
    """
    planted_sizes = planted_sizes or [5, 8, 11, 14, 17, 20, 23, 26, 29]
    densities = densities or [0.1, 0.2, 0.3]

    def one(arg):
        size, density, trial = arg
        cfg = PlantedGraphConfig(
            k=k, n=n, density=density, planted_clique_size=size,
            seed=derive_seed(seed, size, int(density * 1000), trial),
        )
        graph = generate_planted_hypergraph(cfg)
        clique = max_clique_heuristic(graph)
        return {
            "planted": size,
            "density": density,
            "trial": trial,
            "found": clique.size,
        }

    args = [(s, d, t) for s in planted_sizes for d in densities for t in range(trials)]
    rows = _map_trials(one, args, workers)
    cells = []
    for s in planted_sizes:
        for d in densities:
            sel = [r for r in rows if r["planted"] == s and r["density"] == d]
            dropped = sum(1 for r in sel if r["found"] > s)
            counted = [r for r in sel if r["found"] <= s]
            success = sum(1 for r in counted if r["found"] == s)
            cells.append(
                {
                    "planted": s,
                    "density": d,
                    "trials": len(sel),
                    "dropped": dropped,
                    "success_rate": success / len(counted) if counted else math.nan,
                }
            )
    summary = {
        "experiment": "bench-heuristic",
        "config": {
            "planted_sizes": planted_sizes,
            "densities": densities,
            "trials": trials,
            "n": n,
            "k": k,
            "seed": seed,
        },
        "cells": cells,
    }
    write_outputs(out, "bench_heuristic", rows, summary)
    return {"rows": rows, "cells": cells, "summary": summary}
