"""Command-line entry point wiring the library into runnable experiments.

Subcommands map one-to-one onto the experiment harnesses plus three
primitives (simulate / select / solve) for ad-hoc pipelines.  Results land in
``<out>_<experiment>_results.csv`` (deterministic), ``..._timing.csv``
(wall-clock) and ``..._summary.json`` (resolved config + aggregates).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments
from .consistency import gamma_from_confidence
from .estimation import Values, metrics
from .hypergraph import Hypergraph
from .simulation import WorldConfig, generate_world, load_dataset, save_dataset


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="clique-search / build threads")
    p.add_argument("--workers", type=int, default=1, help="parallel trials")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--method", choices=["gkcm", "pcm", "both"], default="both")
    p.add_argument("--k", type=int, default=4, help="consistency group size (gkcm)")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--out", type=str, default=None, help="output path prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupk",
        description="Group-k consistent measurement selection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench-timing", help="clique run-time benchmark on random hypergraphs")
    _add_common(p)
    p.add_argument("--nodes", type=int, nargs="+", default=[25, 50, 100, 150, 200, 250, 300])
    p.add_argument("--thread-counts", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--planted", type=int, default=10)

    p = sub.add_parser("bench-heuristic", help="heuristic success rate vs planted size/density")
    _add_common(p)
    p.add_argument("--planted-sizes", type=int, nargs="+", default=[5, 8, 11, 14, 17, 20, 23, 26, 29])
    p.add_argument("--densities", type=float, nargs="+", default=[0.1, 0.2, 0.3])
    p.add_argument("--nodes", type=int, default=100)

    p = sub.add_parser("simulate", help="generate a dataset file")
    _add_common(p)
    p.add_argument("--poses", type=int, default=100)
    p.add_argument("--beacons", type=int, default=1)
    p.add_argument("--trajectory", choices=["manhattan", "circle", "line"], default="manhattan")
    p.add_argument("--outlier-fraction", type=float, default=0.8)
    p.add_argument("--range-sigma", type=float, default=WorldConfig.range_sigma)
    p.add_argument("dataset", help="output dataset path")

    p = sub.add_parser("select", help="select consistent measurements from a dataset")
    _add_common(p)
    p.add_argument("--hidden", action="store_true", help="ignore beacon identities")
    p.add_argument("--top-n", type=int, default=1)
    p.add_argument("--graph-out", type=str, default=None, help="write the consistency graph")
    p.add_argument("--selection-out", type=str, default=None, help="write selection JSON")
    p.add_argument("dataset")

    p = sub.add_parser("solve", help="solve a dataset with a selection file")
    _add_common(p)
    p.add_argument("dataset")
    p.add_argument("selection", help="selection JSON from `select`")

    p = sub.add_parser("montecarlo", help="outlier-rejection Monte Carlo study")
    _add_common(p)
    p.add_argument("--poses", type=int, default=100)
    p.add_argument("--outlier-fraction", type=float, default=0.8)

    p = sub.add_parser("outlier-sweep", help="TPR/FPR vs outlier fraction")
    _add_common(p)
    p.add_argument("--poses", type=int, default=50)
    p.add_argument("--fractions", type=float, nargs="+", default=None)

    p = sub.add_parser("gamma-sweep", help="metrics vs consistency confidence")
    _add_common(p)
    p.add_argument("--poses", type=int, default=50)
    p.add_argument("--outlier-fraction", type=float, default=0.8)
    p.add_argument("--confidences", type=float, nargs="+", default=None)

    p = sub.add_parser("data-association", help="hidden-association n-clique experiment")
    _add_common(p)
    p.add_argument("--poses", type=int, default=30)
    p.add_argument("--beacons", type=int, default=5)
    p.add_argument("--outlier-fraction", type=float, default=0.25)

    p = sub.add_parser("incremental-timing", help="incremental vs batch streaming updates")
    _add_common(p)
    p.add_argument("--poses", type=int, default=100)
    p.add_argument("--outlier-fraction", type=float, default=0.8)
    return parser


def _cmd_simulate(args) -> int:
    cfg = WorldConfig(
        trajectory_kind=args.trajectory,
        pose_count=args.poses,
        beacon_count=args.beacons,
        outlier_fraction=args.outlier_fraction,
        range_sigma=args.range_sigma,
        seed=args.seed,
    )
    save_dataset(generate_world(cfg), args.dataset)
    print(f"wrote {args.dataset}")
    return 0


def _cmd_select(args) -> int:
    dataset = load_dataset(args.dataset)
    method = args.method if args.method != "both" else "gkcm"
    if args.k == 2:
        method = "pcm"
    outcome = experiments.select_measurements(
        dataset,
        method=method,
        confidence=args.confidence,
        threads=args.threads,
        hidden=args.hidden,
        top_n=args.top_n,
    )
    if args.graph_out:
        outcome.graph.write(args.graph_out)
    if args.selection_out:
        doc = {
            "method": method,
            "confidence": args.confidence,
            "cliques": [list(c.vertices) for c in outcome.cliques],
            "selected": outcome.selected,
            "edges": outcome.edges,
            "checks": outcome.checks,
            "build_seconds": outcome.build_seconds,
            "search_seconds": outcome.search_seconds,
        }
        with open(args.selection_out, "w", encoding="ascii") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(" ".join(str(v) for v in outcome.cliques[0].vertices))
    return 0


def _cmd_solve(args) -> int:
    dataset = load_dataset(args.dataset)
    with open(args.selection, "r", encoding="ascii") as fh:
        sel_doc = json.load(fh)
    selected = list(sel_doc["selected"])
    context = experiments.build_selection_context(dataset.odometry)
    hidden_cliques = None
    if len(sel_doc["cliques"]) > 1:
        hidden_cliques = [list(c) for c in sel_doc["cliques"]]
    estimate, report, order = experiments.solve_dataset(
        dataset, selected, context, beacon_of_clique=hidden_cliques
    )
    if hidden_cliques is None:
        truth = Values(dataset.poses, [dataset.beacons[b].position.copy() for b in order])
    else:
        majority = []
        for members in hidden_cliques:
            labels = [dataset.ranges[i].beacon_id for i in members]
            majority.append(max(set(labels), key=labels.count))
        truth = Values(dataset.poses, [dataset.beacons[b].position.copy() for b in majority])
    result = metrics(estimate, truth, selected, dataset.inlier_mask, report)
    doc = {
        "converged": report.converged,
        "iterations": report.iterations,
        "final_cost": report.final_cost,
        "chi2_normalized": report.chi2_normalized,
        "translation_rmse": result.translation_rmse,
        "rotation_rmse": result.rotation_rmse,
        "beacon_error": result.beacon_error,
        "tpr": result.tpr,
        "fpr": result.fpr,
    }
    text = json.dumps(doc, indent=1, sort_keys=True)
    print(text)
    if args.out:
        with open(f"{args.out}_solve.json", "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    trials = args.trials
    try:
        if args.command == "bench-timing":
            res = experiments.run_bench_timing(
                node_counts=args.nodes,
                thread_counts=args.thread_counts,
                trials=trials or 5,
                seed=args.seed,
                density=args.density,
                planted=args.planted,
                out=args.out,
            )
            for row in res["table"]:
                print(
                    f"n={row['nodes']:4d} {row['mode']:9s} threads={row['threads']} "
                    f"build {row['mean_build_seconds']:.3f}s search {row['mean_search_seconds']:.3f}s"
                )
        elif args.command == "bench-heuristic":
            res = experiments.run_bench_heuristic(
                planted_sizes=args.planted_sizes,
                densities=args.densities,
                trials=trials or 50,
                n=args.nodes,
                seed=args.seed,
                workers=args.workers,
                out=args.out,
            )
            for cell in res["cells"]:
                print(
                    f"planted={cell['planted']:2d} density={cell['density']:.2f} "
                    f"success={cell['success_rate']:.3f} dropped={cell['dropped']}"
                )
        elif args.command == "simulate":
            return _cmd_simulate(args)
        elif args.command == "select":
            return _cmd_select(args)
        elif args.command == "solve":
            return _cmd_solve(args)
        elif args.command == "montecarlo":
            res = experiments.run_montecarlo(
                trials=trials or 30,
                seed=args.seed,
                method=args.method,
                confidence=args.confidence,
                pose_count=args.poses,
                outlier_fraction=args.outlier_fraction,
                workers=args.workers,
                threads=args.threads,
                out=args.out,
            )
            for m, agg in res["summary"]["methods"].items():
                print(
                    f"{m}: TPR {agg['tpr']['mean']:.3f} FPR {agg['fpr']['mean']:.4f} "
                    f"chi2 med {agg['chi2_normalized']['median']:.2f}"
                )
        elif args.command == "outlier-sweep":
            res = experiments.run_outlier_sweep(
                fractions=args.fractions,
                trials=trials or 10,
                seed=args.seed,
                method=args.method,
                confidence=args.confidence,
                pose_count=args.poses,
                workers=args.workers,
                out=args.out,
            )
            for c in res["curves"]:
                print(
                    f"fraction {c['outlier_fraction']:.2f} {c['method']}: "
                    f"TPR {c['tpr_mean']:.3f} FPR {c['fpr_mean']:.3f}"
                )
        elif args.command == "gamma-sweep":
            res = experiments.run_gamma_sweep(
                confidences=args.confidences,
                trials=trials or 8,
                seed=args.seed,
                method=args.method,
                pose_count=args.poses,
                outlier_fraction=args.outlier_fraction,
                workers=args.workers,
                out=args.out,
            )
            for c in res["curves"]:
                print(
                    f"confidence {c['confidence']:.2f} {c['method']}: TPR {c['tpr_mean']:.3f} "
                    f"FPR {c['fpr_mean']:.3f} chi2 {c['chi2_mean']:.2f}"
                )
        elif args.command == "data-association":
            res = experiments.run_data_association(
                trials=trials or 20,
                seed=args.seed,
                method=args.method,
                confidence=args.confidence,
                pose_count=args.poses,
                beacon_count=args.beacons,
                outlier_fraction=args.outlier_fraction,
                workers=args.workers,
                out=args.out,
            )
            for m, agg in res["summary"]["methods"].items():
                print(f"{m}: TPR {agg['tpr']['mean']:.3f} FPR {agg['fpr']['mean']:.4f}")
        elif args.command == "incremental-timing":
            res = experiments.run_incremental_timing(
                seed=args.seed,
                confidence=args.confidence,
                pose_count=args.poses,
                outlier_fraction=args.outlier_fraction,
                threads=args.threads,
                out=args.out,
            )
            s = res["summary"]
            print(
                f"incremental {s['total_incremental_seconds']:.1f}s vs batch "
                f"{s['total_batch_seconds']:.1f}s (speedup {s['speedup']:.1f}x), "
                f"sizes equal: {s['sizes_equal_at_every_step']}"
            )
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
