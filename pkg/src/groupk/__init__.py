"""Group-k consistent measurement selection via generalized maximum cliques.

Measurements become vertices of a k-uniform hypergraph whose edges mark
internally consistent k-tuples; the largest internally consistent measurement
set is the maximum clique of that graph.  The package bundles the hypergraph
store, exact and heuristic clique search, pluggable consistency-graph
construction, the planar range-SLAM group-4 instantiation, a small
Gauss-Newton solver, and seeded simulation plus experiment harnesses.
"""

from .hypergraph import Hypergraph, VertexEdgeSet
from .maxclique import (
    Clique,
    SearchConfig,
    SearchReport,
    combinations_of_size,
    incremental_search,
    max_clique_exact,
    max_clique_heuristic,
    search_with_report,
    top_n_disjoint_cliques,
)
from .consistency import (
    BuildReport,
    ConsistencyProblem,
    Group4RangeCheck,
    PairwiseRangeCheck,
    build_graph_batch,
    build_graph_incremental,
    gamma_from_confidence,
    graph_from_scores,
    score_all_combinations,
)
from .geometry import (
    Beacon,
    OdometryMeasurement,
    Pose2,
    RangeCheckContext,
    RangeMeasurement,
    TrilaterationResult,
    between,
    circle_intersections,
    compose,
    consistency_check_group4,
    measurement_model_h,
    pairwise_range_check,
    propagate_covariance,
    trilaterate_2d,
    wrap_angle,
)
from .estimation import (
    FactorGraph,
    SolveReport,
    TrialResult,
    Values,
    build_selection_context,
    dead_reckon,
    dead_reckon_covariances,
    gauss_newton_solve,
    joint_covariance,
    metrics,
)
from .simulation import (
    Dataset,
    PlantedGraphConfig,
    WorldConfig,
    generate_planted_hypergraph,
    generate_world,
    load_dataset,
    planted_vertices,
    save_dataset,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
