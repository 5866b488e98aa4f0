"""Dense nonlinear least-squares for the planar range-SLAM problem.

Variables are robot poses (3 dof) followed by beacon positions (2 dof);
factors are pose priors, relative-pose odometry and pose-beacon ranges, all
whitened by their covariances.  Problems here are desk scale (up to a few
hundred poses), so the solver forms dense Jacobians and normal equations.
Also provides dead reckoning with first-order covariance compounding, which
is the trajectory context the consistency checks run against, and the metric
bookkeeping for experiment trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    OdometryMeasurement,
    Pose2,
    RangeCheckContext,
    RangeMeasurement,
    ROT90,
    between,
    compose,
    trilaterate_2d,
    wrap_angle,
)

VariableKey = tuple[str, int]  # ("x", pose_id) or ("l", beacon_id)


# ---------------------------------------------------------------------------
# Dead reckoning.
# ---------------------------------------------------------------------------


def dead_reckon(odometry: list[OdometryMeasurement], origin: Pose2 = Pose2()) -> list[Pose2]:
    """Compose the odometry chain from the origin; validates consecutive ids."""
    poses = [origin]
    for i, odo in enumerate(odometry):
        if odo.from_id != i or odo.to_id != i + 1:
            raise ValueError(
                f"broken odometry chain at position {i}: {odo.from_id}->{odo.to_id}"
            )
        poses.append(compose(poses[-1], odo.delta))
    return poses


def dead_reckon_covariances(
    odometry: list[OdometryMeasurement],
    poses: list[Pose2],
    origin_cov: np.ndarray | None = None,
) -> np.ndarray:
    """World-frame covariance of each dead-reckoned pose, (n, 3, 3).

    First-order compounding at the dead-reckoned linearization point:
    ``S_{i+1} = F S_i F^T + G Q_i G^T`` with ``F = [[I, J dp],[0, 1]]`` and
    ``G = blockdiag(R(theta_i), 1)``.
    """
    n = len(poses)
    covs = np.zeros((n, 3, 3))
    covs[0] = origin_cov if origin_cov is not None else np.zeros((3, 3))
    for i, odo in enumerate(odometry):
        f = np.eye(3)
        f[:2, 2] = ROT90 @ (poses[i + 1].position - poses[i].position)
        g = np.eye(3)
        g[:2, :2] = poses[i].rotation()
        covs[i + 1] = f @ covs[i] @ f.T + g @ odo.covariance @ g.T
    return covs


def build_selection_context(
    odometry: list[OdometryMeasurement],
    origin: Pose2 = Pose2(),
    origin_cov: np.ndarray | None = None,
    policy: str = "reject",
) -> RangeCheckContext:
    """Dead-reckoned trajectory context for the consistency checks."""
    poses = dead_reckon(odometry, origin)
    covs = dead_reckon_covariances(odometry, poses, origin_cov)
    return RangeCheckContext(
        positions=np.array([[p.x, p.y] for p in poses]),
        thetas=np.array([p.theta for p in poses]),
        cov_pp=covs[:, :2, :2],
        cov_ptheta=covs[:, :2, 2],
        theta_var=covs[:, 2, 2],
        policy=policy,
    )


# ---------------------------------------------------------------------------
# Factor graph.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorFactor:
    pose_id: int
    mean: Pose2
    covariance: np.ndarray


@dataclass
class Values:
    """Estimates: pose list plus beacon position list."""

    poses: list[Pose2]
    beacons: list[np.ndarray]

    def copy(self) -> "Values":
        return Values(list(self.poses), [b.copy() for b in self.beacons])


@dataclass
class FactorGraph:
    priors: list[PriorFactor] = field(default_factory=list)
    odometry: list[OdometryMeasurement] = field(default_factory=list)
    ranges: list[RangeMeasurement] = field(default_factory=list)

    def add_prior(self, pose_id: int, mean: Pose2, covariance) -> None:
        cov = np.asarray(covariance, dtype=float)
        if cov.shape != (3, 3):
            raise ValueError("prior covariance must be 3x3")
        self.priors.append(PriorFactor(pose_id, mean, cov))

    def add_odometry(self, factor: OdometryMeasurement) -> None:
        self.odometry.append(factor)

    def add_range(self, factor: RangeMeasurement) -> None:
        if factor.beacon_id is None:
            raise ValueError("range factors need a beacon id")
        self.ranges.append(factor)

    def residual_count(self) -> int:
        return 3 * len(self.priors) + 3 * len(self.odometry) + len(self.ranges)

    def _validate(self, values: Values) -> None:
        n, b = len(values.poses), len(values.beacons)
        for p in self.priors:
            if not 0 <= p.pose_id < n:
                raise ValueError(f"prior references missing pose {p.pose_id}")
        for o in self.odometry:
            if not (0 <= o.from_id < n and 0 <= o.to_id < n):
                raise ValueError(f"odometry references missing pose {o.from_id}->{o.to_id}")
        for r in self.ranges:
            if not (0 <= r.pose_id < n and r.beacon_id is not None and 0 <= r.beacon_id < b):
                raise ValueError(f"range references missing variable ({r.pose_id}, {r.beacon_id})")
        if not self.priors:
            raise ValueError("graph is gauge-free: add at least one prior factor")


def _whitener(cov: np.ndarray) -> np.ndarray:
    """inv(L) for cov = L L^T; left-multiplying whitens residuals/Jacobians."""
    return np.linalg.inv(np.linalg.cholesky(cov))


def _linearize(graph: FactorGraph, values: Values) -> tuple[np.ndarray, np.ndarray]:
    """Whitened Jacobian and residual stack at the current values."""
    npose, nbeacon = len(values.poses), len(values.beacons)
    cols = 3 * npose + 2 * nbeacon
    rows = graph.residual_count()
    jac = np.zeros((rows, cols))
    res = np.zeros(rows)
    row = 0
    for fac in graph.priors:
        pose = values.poses[fac.pose_id]
        w = _whitener(fac.covariance)
        raw = np.array(
            [pose.x - fac.mean.x, pose.y - fac.mean.y, wrap_angle(pose.theta - fac.mean.theta)]
        )
        res[row : row + 3] = w @ raw
        jac[row : row + 3, 3 * fac.pose_id : 3 * fac.pose_id + 3] = w
        row += 3
    for fac in graph.odometry:
        xi, xj = values.poses[fac.from_id], values.poses[fac.to_id]
        rot_i = xi.rotation()
        dp = xj.position - xi.position
        rel_t = rot_i.T @ dp
        raw = np.array(
            [
                rel_t[0] - fac.delta.x,
                rel_t[1] - fac.delta.y,
                wrap_angle(xj.theta - xi.theta - fac.delta.theta),
            ]
        )
        j_i = np.zeros((3, 3))
        j_i[:2, :2] = -rot_i.T
        j_i[:2, 2] = -rot_i.T @ (ROT90 @ dp)
        j_i[2, 2] = -1.0
        j_j = np.zeros((3, 3))
        j_j[:2, :2] = rot_i.T
        j_j[2, 2] = 1.0
        w = _whitener(fac.covariance)
        res[row : row + 3] = w @ raw
        jac[row : row + 3, 3 * fac.from_id : 3 * fac.from_id + 3] = w @ j_i
        jac[row : row + 3, 3 * fac.to_id : 3 * fac.to_id + 3] = w @ j_j
        row += 3
    for fac in graph.ranges:
        pose = values.poses[fac.pose_id]
        beacon = values.beacons[fac.beacon_id]
        diff = beacon - pose.position
        dist = float(np.linalg.norm(diff))
        u = diff / dist if dist > 1e-12 else np.array([1.0, 0.0])
        res[row] = (dist - fac.value) / fac.sigma
        jac[row, 3 * fac.pose_id : 3 * fac.pose_id + 2] = -u / fac.sigma
        col = 3 * npose + 2 * fac.beacon_id
        jac[row, col : col + 2] = u / fac.sigma
        row += 1
    return jac, res


def _apply_step(values: Values, step: np.ndarray) -> Values:
    npose = len(values.poses)
    poses = [
        Pose2(
            p.x + step[3 * i],
            p.y + step[3 * i + 1],
            p.theta + step[3 * i + 2],
        )
        for i, p in enumerate(values.poses)
    ]
    beacons = [
        b + step[3 * npose + 2 * i : 3 * npose + 2 * i + 2]
        for i, b in enumerate(values.beacons)
    ]
    return Values(poses, beacons)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_cost: float
    chi2_normalized: float
    dof: int


def gauss_newton_solve(
    graph: FactorGraph,
    init: Values,
    max_iterations: int = 100,
    rel_tol: float = 1e-9,
    max_retries: int = 5,
) -> tuple[Values, SolveReport]:
    """Damped Gauss-Newton: halve the step on cost increase, up to 5 retries.

    Divergence (no acceptable step) is reported, not raised; the best values
    seen are returned.
    """
    graph._validate(init)
    values = init.copy()
    jac, res = _linearize(graph, values)
    cost = float(res @ res)
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        improved = False
        scale = 1.0
        for _ in range(max_retries + 1):
            candidate = _apply_step(values, scale * step)
            jac_new, res_new = _linearize(graph, candidate)
            cost_new = float(res_new @ res_new)
            acceptable = (
                cost_new <= cost
                or cost_new < 1e-12  # both effectively at zero cost
                or math.isclose(cost_new, cost, rel_tol=1e-12)
            )
            if acceptable:
                values, jac, res = candidate, jac_new, res_new
                improved = True
                break
            scale *= 0.5
        if not improved:
            break  # diverged: every damped retry increased the cost
        if cost - cost_new < rel_tol * max(cost, 1.0):
            cost = cost_new
            converged = True
            break
        cost = cost_new
    dof = graph.residual_count() - (3 * len(values.poses) + 2 * len(values.beacons))
    chi2 = cost / dof if dof > 0 else math.nan
    return values, SolveReport(converged, iterations, cost, chi2, dof)


def joint_covariance(
    graph: FactorGraph, values: Values, query: list[VariableKey]
) -> np.ndarray:
    """Marginal joint covariance of the queried variables from (J^T J)^-1.

    The Jacobian is whitened, so the information matrix is J^T J at the given
    linearization point.  Raises on an under-constrained (singular) system.
    """
    graph._validate(values)
    jac, _ = _linearize(graph, values)
    info = jac.T @ jac
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular information matrix: graph under-constrained") from exc
    full = np.linalg.inv(chol.T) @ np.linalg.inv(chol)
    npose = len(values.poses)
    idx: list[int] = []
    for kind, i in query:
        if kind == "x":
            idx.extend(range(3 * i, 3 * i + 3))
        elif kind == "l":
            idx.extend(range(3 * npose + 2 * i, 3 * npose + 2 * i + 2))
        else:
            raise ValueError(f"unknown variable kind {kind!r}")
    sel = np.array(idx)
    return full[np.ix_(sel, sel)]


def group_joint_covariance(
    context: RangeCheckContext,
    pose_ids,
    loc_slots,
    measurements: list[RangeMeasurement],
    beacon: np.ndarray,
) -> np.ndarray:
    """Reference 14x14 joint covariance of four poses plus the beacon.

    Builds the small factor graph the covariance propagation is defined
    against: a prior on the first pose carrying its dead-reckoned marginal,
    between-factors over the compounded odometry of consecutive selected
    poses, and the three localizing range factors, all linearized at the
    dead-reckoned poses and the trilaterated beacon.  This is the slow
    independent route; the closed form in the geometry module must agree.
    """
    ids = list(pose_ids)
    if sorted(ids) != ids or len(ids) != 4:
        raise ValueError("pose ids must be four sorted indices")
    graph = FactorGraph()
    poses = [context.pose(i) for i in ids]
    graph.add_prior(0, poses[0], _regularized(context.pose_marginal(ids[0])))
    for a in range(3):
        i, j = ids[a], ids[a + 1]
        delta = between(context.pose(i), context.pose(j))
        fw = np.eye(3)
        fw[:2, 2] = ROT90 @ (context.positions[j] - context.positions[i])
        noise_world = (
            _pose_marginal_full(context, j) - fw @ _pose_marginal_full(context, i) @ fw.T
        )
        g = np.eye(3)
        g[:2, :2] = context.pose(i).rotation()
        cov_body = g.T @ noise_world @ g
        graph.add_odometry(
            OdometryMeasurement(a, a + 1, delta, _regularized(cov_body))
        )
    values = Values(poses, [np.asarray(beacon, dtype=float).copy()])
    for slot in loc_slots:
        m = measurements[slot]
        local = ids.index(m.pose_id)
        graph.add_range(
            RangeMeasurement(pose_id=local, beacon_id=0, value=m.value, sigma=m.sigma)
        )
    return joint_covariance(graph, values, [("x", 0), ("x", 1), ("x", 2), ("x", 3), ("l", 0)])


def _pose_marginal_full(context: RangeCheckContext, i: int) -> np.ndarray:
    return context.pose_marginal(i)


def _regularized(cov: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetrize and clamp eigenvalues so Cholesky factorizations succeed."""
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


# ---------------------------------------------------------------------------
# Trial metrics.
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    translation_rmse: float
    rotation_rmse: float
    beacon_error: float
    residual: float
    chi2_normalized: float
    tpr: float
    fpr: float
    selected_count: int
    converged: bool = True
    build_seconds: float = 0.0
    search_seconds: float = 0.0
    solve_seconds: float = 0.0


def selection_rates(selected, inlier_mask) -> tuple[float, float]:
    """TPR = TP/(TP+FN), FPR = FP/(FP+TN); empty denominators report 0."""
    chosen = set(selected)
    tp = fp = fn = tn = 0
    for i, is_inlier in enumerate(inlier_mask):
        picked = i in chosen
        if is_inlier:
            tp += picked
            fn += not picked
        else:
            fp += picked
            tn += not picked
    tpr = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return tpr, fpr


def metrics(
    estimate: Values,
    truth: Values,
    selected,
    inlier_mask,
    report: SolveReport,
) -> TrialResult:
    if len(estimate.poses) != len(truth.poses) or len(estimate.beacons) != len(truth.beacons):
        raise ValueError("estimate and ground truth must align variable-for-variable")
    pos_err = np.array(
        [
            [e.x - t.x, e.y - t.y]
            for e, t in zip(estimate.poses, truth.poses)
        ]
    )
    rot_err = np.array(
        [wrap_angle(e.theta - t.theta) for e, t in zip(estimate.poses, truth.poses)]
    )
    trans_rmse = float(np.sqrt(np.mean(np.sum(pos_err**2, axis=1))))
    rot_rmse = float(np.sqrt(np.mean(rot_err**2)))
    beacon_err = (
        float(np.mean([np.linalg.norm(e - t) for e, t in zip(estimate.beacons, truth.beacons)]))
        if estimate.beacons
        else 0.0
    )
    tpr, fpr = selection_rates(selected, inlier_mask)
    return TrialResult(
        translation_rmse=trans_rmse,
        rotation_rmse=rot_rmse,
        beacon_error=beacon_err,
        residual=report.final_cost,
        chi2_normalized=report.chi2_normalized,
        tpr=tpr,
        fpr=fpr,
        selected_count=len(set(selected)),
        converged=report.converged,
    )


def initialize_beacon(
    context: RangeCheckContext, measurements: list[RangeMeasurement], selected
) -> np.ndarray:
    """Beacon initial guess: trilaterate the three selected measurements with
    the smallest pose indices; fall back to offsetting the first pose by its
    measured range when the geometry is degenerate."""
    chosen = sorted(selected, key=lambda i: measurements[i].pose_id)
    for a in range(max(1, len(chosen) - 2)):
        trio = chosen[a : a + 3]
        if len(trio) < 3:
            break
        ids = [measurements[i].pose_id for i in trio]
        if len(set(ids)) < 3:
            continue
        tri = trilaterate_2d(
            context.positions[np.array(ids)],
            np.array([measurements[i].value for i in trio]),
        )
        if tri.ok:
            return tri.position
    first = measurements[chosen[0]]
    return context.positions[first.pose_id] + np.array([first.value, 0.0])
