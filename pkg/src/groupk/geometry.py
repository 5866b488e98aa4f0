"""Planar range-measurement geometry: the group-4 consistency instantiation.

Contains the SE(2) pose algebra, a closed-form three-circle trilateration with
degeneracy detection, the beacon measurement model, first-order covariance
propagation of the group residual, and the group-4 / pairwise consistency
scores used to build consistency graphs.

Covariance model.  Checks run against a dead-reckoned trajectory estimate
whose per-pose world-frame covariances follow the compounding recursion
``S_{i+1} = F S_i F^T + G Q G^T`` with ``F = [[I, J(p_{i+1}-p_i)],[0,1]]`` and
``G = blockdiag(R(theta_i), 1)``.  Because the per-step transition Jacobians
telescope, the position cross-covariance between any two poses has the closed
form implemented by :meth:`RangeCheckContext.position_cov`, and the joint
covariance of four poses plus the trilaterated beacon reduces (via a Woodbury
identity that marginalizes the pose chain through the three range factors) to
2x2/3x3 blocks.  The same quantity computed the long way, through a dense
factor-graph information matrix, is available in the estimation module; tests
verify the two routes agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])

# Degeneracy thresholds: positions closer than EPS_POSITION are coincident;
# triangles whose cross product is below COLLINEAR_REL times the squared scene
# scale are collinear.  Guards exact constructions only; odometry noise keeps
# real estimates away from these (the checks stay quiet for perturbations well
# above the thresholds).
EPS_POSITION = 1e-6
COLLINEAR_REL = 1e-9


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = theta % TWO_PI
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose2:
    """Planar pose; theta is normalized to (-pi, pi] on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])


def compose(a: Pose2, b: Pose2) -> Pose2:
    """a (+) b: apply b in a's frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose d with compose(a, d) == b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


@dataclass(frozen=True)
class Beacon:
    id: int
    position: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)):
            raise ValueError(f"beacon position must be a finite 2-vector, got {pos}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class RangeMeasurement:
    """Range from a pose to a beacon; beacon_id is None when association is hidden."""

    pose_id: int
    beacon_id: int | None
    value: float
    sigma: float

    def __post_init__(self) -> None:
        if self.value <= 0:
            raise ValueError(f"range must be positive, got {self.value}")
        if self.sigma <= 0:
            raise ValueError(f"range sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class OdometryMeasurement:
    """Relative transform between consecutive poses with 3x3 covariance."""

    from_id: int
    to_id: int
    delta: Pose2
    covariance: np.ndarray

    def __post_init__(self) -> None:
        if self.to_id != self.from_id + 1:
            raise ValueError("odometry must connect consecutive pose ids")
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (3, 3) or not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("odometry covariance must be symmetric 3x3")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("odometry covariance must be positive-definite")
        object.__setattr__(self, "covariance", cov)


# ---------------------------------------------------------------------------
# Trilateration.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrilaterationResult:
    position: np.ndarray | None
    residual: float
    degenerate: str | None = None  # None | "collinear" | "coincident" | "singular"

    @property
    def ok(self) -> bool:
        return self.degenerate is None


def _classify_degenerate(positions: np.ndarray) -> str | None:
    d01 = positions[1] - positions[0]
    d02 = positions[2] - positions[0]
    d12 = positions[2] - positions[1]
    sq = np.array([d01 @ d01, d02 @ d02, d12 @ d12])
    if np.min(sq) < EPS_POSITION**2:
        return "coincident"
    cross = d01[0] * d02[1] - d01[1] * d02[0]
    if abs(cross) < COLLINEAR_REL * np.max(sq):
        return "collinear"
    return None


REFINE_STEPS = 4


def _refine_beacon(
    p: np.ndarray, r: np.ndarray, beacon: np.ndarray, weights: np.ndarray | None, steps: int
) -> np.ndarray:
    """Batched Gauss-Newton polish of beacon estimates on the circle residuals.

    ``p`` is (B, 3, 2), ``r`` (B, 3), ``beacon`` (B, 2).  With noisy ranges the
    linear difference-of-circles solution is not the least-squares circle
    intersection; a couple of closed-form 2x2 Gauss-Newton steps move it there
    (exact solutions are fixed points and stay put).  Rows whose normal matrix
    is near singular are left unrefined.
    """
    w = np.ones_like(r) if weights is None else weights
    out = beacon.copy()
    for _ in range(steps):
        diff = out[:, None, :] - p
        dist = np.linalg.norm(diff, axis=2)
        safe = np.where(dist > 1e-12, dist, 1.0)
        jac = diff / safe[:, :, None] * w[:, :, None]
        res = (dist - r) * w
        jtj = np.einsum("bri,brj->bij", jac, jac)
        jtr = np.einsum("bri,br->bi", jac, res)
        det = jtj[:, 0, 0] * jtj[:, 1, 1] - jtj[:, 0, 1] * jtj[:, 1, 0]
        ok = (np.abs(det) > 1e-12) & np.all(dist > 1e-12, axis=1)
        safe_det = np.where(ok, det, 1.0)
        dx = -(jtj[:, 1, 1] * jtr[:, 0] - jtj[:, 0, 1] * jtr[:, 1]) / safe_det
        dy = -(-jtj[:, 1, 0] * jtr[:, 0] + jtj[:, 0, 0] * jtr[:, 1]) / safe_det
        out = out + np.where(ok[:, None], np.stack([dx, dy], axis=1), 0.0)
    return out


def trilaterate_2d(positions, ranges, refine_steps: int = REFINE_STEPS) -> TrilaterationResult:
    """Closed-form intersection of three circles.

    Subtracting the circle equation at the first position from the other two
    gives a 2x2 linear system in the beacon location; ``refine_steps``
    Gauss-Newton polish steps then move the solution to the least-squares
    circle intersection (a no-op for consistent ranges), matching what an
    iterative solver would return without needing an initial guess.  The
    residual reports the worst absolute circle mismatch at the solution.
    Degenerate pose configurations (collinear or coincident centers) are
    flagged, never silently solved.
    """
    p = np.asarray(positions, dtype=float).reshape(3, 2)
    r = np.asarray(ranges, dtype=float).reshape(3)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
        raise ValueError("positions and ranges must be finite")
    reason = _classify_degenerate(p)
    if reason is not None:
        return TrilaterationResult(None, math.inf, reason)
    a = 2.0 * np.array([p[1] - p[0], p[2] - p[0]])
    norms = np.sum(p * p, axis=1)
    b = np.array(
        [
            r[0] ** 2 - r[1] ** 2 + norms[1] - norms[0],
            r[0] ** 2 - r[2] ** 2 + norms[2] - norms[0],
        ]
    )
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if det == 0.0:  # passed the relative tests yet exactly singular
        return TrilaterationResult(None, math.inf, "singular")
    beacon = np.array(
        [
            (a[1, 1] * b[0] - a[0, 1] * b[1]) / det,
            (-a[1, 0] * b[0] + a[0, 0] * b[1]) / det,
        ]
    )
    if refine_steps:
        beacon = _refine_beacon(p[None], r[None], beacon[None], None, refine_steps)[0]
    residual = float(np.max(np.abs(np.linalg.norm(p - beacon, axis=1) - r)))
    return TrilaterationResult(beacon, residual, None)


def circle_intersections(c0, r0: float, c1, r1: float) -> list[np.ndarray]:
    """Intersection points of two circles (0, 1 or 2 points)."""
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    d = float(np.linalg.norm(c1 - c0))
    if d < EPS_POSITION:  # concentric: either no solution or infinitely many
        return []
    if d > r0 + r1 or d < abs(r0 - r1):
        return []
    along = (r0**2 - r1**2 + d**2) / (2.0 * d)
    perp_sq = r0**2 - along**2
    axis = (c1 - c0) / d
    base = c0 + along * axis
    if perp_sq <= 0.0:
        return [base]
    perp = math.sqrt(perp_sq) * (ROT90 @ axis)
    return [base + perp, base - perp]


def measurement_model_h(positions, ranges, probe_position) -> tuple[float, TrilaterationResult]:
    """Distance from the trilaterated beacon to the probe pose position.

    Returns ``(h, trilateration)``; ``h`` is NaN when trilateration is
    degenerate (the flag propagates through the result).
    """
    tri = trilaterate_2d(positions, ranges)
    if not tri.ok:
        return math.nan, tri
    probe = np.asarray(probe_position, dtype=float).reshape(2)
    return float(np.linalg.norm(tri.position - probe)), tri


# ---------------------------------------------------------------------------
# Covariance propagation of the group residual g = ||l - p_probe|| - r_probe.
# ---------------------------------------------------------------------------


def residual_jacobian(beacon, probe_position, probe_slot: int) -> np.ndarray:
    """Analytic H = dg/d(x_a..x_d, l, r_probe), a 15-vector.

    The beacon estimate enters as a free variable (its uncertainty lives in
    the joint covariance), so the only nonzero blocks are the probe position
    (-u), the beacon (+u) and the probe range (-1), with u the unit vector
    from the probe position to the beacon.
    """
    if not 0 <= probe_slot < 4:
        raise ValueError("probe_slot must identify one of the four poses")
    beacon = np.asarray(beacon, dtype=float).reshape(2)
    probe = np.asarray(probe_position, dtype=float).reshape(2)
    diff = beacon - probe
    dist = float(np.linalg.norm(diff))
    if dist < 1e-12:
        raise ValueError("probe position coincides with the beacon estimate")
    u = diff / dist
    h = np.zeros(15)
    h[3 * probe_slot : 3 * probe_slot + 2] = -u
    h[12:14] = u
    h[14] = -1.0
    return h


def propagate_covariance(
    sigma_joint: np.ndarray,
    beacon,
    probe_position,
    probe_slot: int,
    range_sigma: float,
) -> float:
    """Scalar variance of the group residual, Var = H blockdiag(S_j, s_r^2) H^T.

    ``sigma_joint`` is the 14x14 joint covariance of the four poses (3 dof
    each, in index order) and the beacon (2 dof), e.g. from
    ``estimation.joint_covariance``.  Rejects non-positive-definite input.
    """
    sj = np.asarray(sigma_joint, dtype=float)
    if sj.shape != (14, 14):
        raise ValueError(f"expected 14x14 joint covariance, got {sj.shape}")
    if not np.allclose(sj, sj.T, atol=1e-9):
        raise ValueError("joint covariance must be symmetric")
    scale = max(float(np.max(np.abs(sj))), 1.0)
    if np.min(np.linalg.eigvalsh(sj)) < -1e-9 * scale:
        raise ValueError("joint covariance must be positive semi-definite")
    if range_sigma <= 0:
        raise ValueError("range sigma must be positive")
    h = residual_jacobian(beacon, probe_position, probe_slot)
    full = np.zeros((15, 15))
    full[:14, :14] = sj
    full[14, 14] = range_sigma**2
    return float(h @ full @ h)


# ---------------------------------------------------------------------------
# Check context: dead-reckoned trajectory plus its covariance structure.
# ---------------------------------------------------------------------------


@dataclass
class RangeCheckContext:
    """Read-only trajectory context shared by all consistency checks.

    ``cov_pp``/``cov_ptheta`` are the position block and position-heading
    column of each pose's world-frame dead-reckoned covariance.  ``policy``
    selects what happens when a check fails to produce any beacon estimate:
    ``"reject"`` scores the combination inconsistent, ``"buffer"`` does the
    same but lets the graph builder record the combination for post-hoc
    testing.
    """

    positions: np.ndarray  # (n, 2)
    thetas: np.ndarray  # (n,)
    cov_pp: np.ndarray  # (n, 2, 2)
    cov_ptheta: np.ndarray  # (n, 2)
    theta_var: np.ndarray  # (n,)
    policy: str = "reject"

    def __post_init__(self) -> None:
        if self.policy not in ("reject", "buffer"):
            raise ValueError(f"unknown degeneracy policy {self.policy!r}")
        self.positions = np.asarray(self.positions, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.cov_pp = np.asarray(self.cov_pp, dtype=float)
        self.cov_ptheta = np.asarray(self.cov_ptheta, dtype=float)
        self.theta_var = np.asarray(self.theta_var, dtype=float)
        self._cov_table: np.ndarray | None = None

    @property
    def n_poses(self) -> int:
        return self.positions.shape[0]

    def pose(self, i: int) -> Pose2:
        return Pose2(self.positions[i, 0], self.positions[i, 1], self.thetas[i])

    def position_cov(self, i: int, j: int) -> np.ndarray:
        """Closed-form Cov(p_i, p_j) of the dead-reckoned chain (2x2)."""
        m = min(i, j)
        di = ROT90 @ (self.positions[i] - self.positions[m])
        dj = ROT90 @ (self.positions[j] - self.positions[m])
        s = self.cov_ptheta[m]
        return self.cov_pp[m] + np.outer(di, s) + np.outer(s, dj)

    def position_cov_table(self) -> np.ndarray:
        """All Cov(p_i, p_j) blocks as an (n, n, 2, 2) table (cached).

        Build this before handing the context to forked workers so they
        share the parent's copy.
        """
        if self._cov_table is None:
            idx = np.arange(self.n_poses)
            self._cov_table = _batch_position_cov(self, idx[:, None], idx[None, :])
        return self._cov_table

    def pose_marginal(self, i: int) -> np.ndarray:
        """Full 3x3 world-frame covariance of pose i."""
        cov = np.zeros((3, 3))
        cov[:2, :2] = self.cov_pp[i]
        cov[:2, 2] = self.cov_ptheta[i]
        cov[2, :2] = self.cov_ptheta[i]
        cov[2, 2] = self.theta_var[i]
        return cov


def _batch_position_cov(ctx: RangeCheckContext, idx_i: np.ndarray, idx_j: np.ndarray) -> np.ndarray:
    """Vectorized Cov(p_i, p_j); idx arrays broadcast to a common shape."""
    idx_i, idx_j = np.broadcast_arrays(idx_i, idx_j)
    m = np.minimum(idx_i, idx_j)
    pos = ctx.positions
    di = (pos[idx_i] - pos[m]) @ ROT90.T  # row-vector form of ROT90 @ d
    dj = (pos[idx_j] - pos[m]) @ ROT90.T
    s = ctx.cov_ptheta[m]
    return (
        ctx.cov_pp[m]
        + di[..., :, None] * s[..., None, :]
        + s[..., :, None] * dj[..., None, :]
    )


def _inv3(m: np.ndarray) -> np.ndarray:
    """Closed-form batched inverse of symmetric (B, 3, 3) matrices."""
    a, b, c = m[:, 0, 0], m[:, 0, 1], m[:, 0, 2]
    e, f, i = m[:, 1, 1], m[:, 1, 2], m[:, 2, 2]
    co00 = e * i - f * f
    co01 = c * f - b * i
    co02 = b * f - c * e
    det = a * co00 + b * co01 + c * co02
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    out = np.empty_like(m)
    out[:, 0, 0] = co00
    out[:, 0, 1] = out[:, 1, 0] = co01
    out[:, 0, 2] = out[:, 2, 0] = co02
    out[:, 1, 1] = a * i - c * c
    out[:, 1, 2] = out[:, 2, 1] = b * c - a * f
    out[:, 2, 2] = a * e - b * b
    out /= det[:, None, None]
    return out


def _group_variance_batch(
    ctx: RangeCheckContext,
    loc_idx: np.ndarray,  # (B, 3) pose indices of the localizers, ascending per row
    u_loc: np.ndarray,  # (B, 3, 2) unit vectors pose -> beacon estimate
    loc_var: np.ndarray,  # (B, 3) range variances of the localizers
    probe_idx: np.ndarray,  # (B,)
    u_probe: np.ndarray,  # (B, 2)
    probe_var: np.ndarray,  # (B,)
) -> np.ndarray:
    """Var(g) via the marginalized closed form (see module docstring).

    With P the joint position covariance of the involved poses, D the
    effective range-measurement covariance D = diag(loc_var) + Hx P Hx^T, the
    beacon marginal is S_ll = (Hl^T D^-1 Hl)^-1 and the probe-beacon blocks
    follow from the standard Gaussian block inverse.  All operations are
    batched 2x2/3x3 algebra; the per-row ascending index order makes every
    min(i, j) in the chain cross-covariance formula static.
    """
    pos = ctx.positions[loc_idx]  # (B,3,2)
    spp = ctx.cov_pp[loc_idx]  # (B,3,2,2)
    spt = ctx.cov_ptheta[loc_idx]  # (B,3,2)
    ju = u_loc @ ROT90.T  # rows: ROT90 @ u_s
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # Upper triangle of A'[r,s] = u_r^T Cov(p_ir, p_is) u_s with m = r <= s:
        # Cov = Spp(i_r) + s_pth(i_r) (J (pos_s - pos_r))^T.
        m1 = np.einsum("bri,brij,bsj->brs", u_loc, spp, u_loc)
        us = np.einsum("bri,bri->br", u_loc, spt)  # u_r . s_pth(i_r)
        # jd[b,r,s] = (J (pos_s - pos_r)) . u_s = (pos_r - pos_s) . (J u_s)
        jd = np.einsum("bri,bsi->brs", pos, ju) - np.einsum("bsi,bsi->bs", pos, ju)[:, None, :]
        upper = m1 + us[:, :, None] * jd
        a = np.triu(upper, 0) + np.swapaxes(np.triu(upper, 1), 1, 2)
        d = a
        d[:, 0, 0] += loc_var[:, 0]
        d[:, 1, 1] += loc_var[:, 1]
        d[:, 2, 2] += loc_var[:, 2]
        d_inv = _inv3(d)
        # Beacon marginal: S_ll = inv(Hl^T D^-1 Hl), Hl rows are +u_loc.
        info_ll = np.einsum("bri,brs,bsj->bij", u_loc, d_inv, u_loc)
        det = info_ll[:, 0, 0] * info_ll[:, 1, 1] - info_ll[:, 0, 1] * info_ll[:, 1, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        sigma_ll = np.empty_like(info_ll)
        sigma_ll[:, 0, 0] = info_ll[:, 1, 1]
        sigma_ll[:, 1, 1] = info_ll[:, 0, 0]
        sigma_ll[:, 0, 1] = -info_ll[:, 0, 1]
        sigma_ll[:, 1, 0] = -info_ll[:, 1, 0]
        sigma_ll /= det[:, None, None]
        # V[:, s] = -Cov(p_probe, p_is) u_s (rows of P Hx^T at the probe rows).
        cov_ql = ctx.position_cov_table()[probe_idx[:, None], loc_idx]  # (B,3,2,2)
        v = -np.einsum("bsij,bsj->bis", cov_ql, u_loc)  # (B,2,3)
        vdi = np.einsum("bis,bst->bit", v, d_inv)  # V D^-1
        vdihl = np.einsum("bis,bsj->bij", vdi, u_loc)  # V D^-1 Hl (B,2,2)
        # Posterior probe-position block and probe-beacon cross block.
        p_qq = ctx.cov_pp[probe_idx]
        m_qq = p_qq - np.einsum("bis,bjs->bij", vdi, v)
        sigma_qq = m_qq + vdihl @ sigma_ll @ np.swapaxes(vdihl, 1, 2)
        sigma_ql = -vdihl @ sigma_ll
        combined = sigma_qq + sigma_ll - sigma_ql - np.swapaxes(sigma_ql, 1, 2)
        var = np.einsum("bi,bij,bj->b", u_probe, combined, u_probe) + probe_var
    # A numerically blown-up variance means the beacon is unobservable along
    # the residual direction: the check honestly cannot reject there.
    var = np.where(np.isfinite(var), var, np.inf)
    return np.maximum(var, 1e-300)


def _group_variance_single(
    ctx: RangeCheckContext,
    loc_ids,
    beacon: np.ndarray,
    loc_sigmas,
    probe_id: int,
    probe_sigma: float,
) -> float:
    loc_idx = np.asarray(loc_ids, dtype=int).reshape(1, 3)
    p_loc = ctx.positions[loc_idx[0]]
    diff = beacon[None, :] - p_loc
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < 1e-12):
        raise ValueError("beacon estimate coincides with a localizing pose")
    u_loc = (diff / dist[:, None])[None]
    p_probe = ctx.positions[probe_id]
    dprobe = beacon - p_probe
    hdist = float(np.linalg.norm(dprobe))
    if hdist < 1e-12:
        raise ValueError("beacon estimate coincides with the probe pose")
    u_probe = (dprobe / hdist)[None]
    var = _group_variance_batch(
        ctx,
        loc_idx,
        u_loc,
        np.asarray(loc_sigmas, dtype=float).reshape(1, 3) ** 2,
        np.array([probe_id]),
        u_probe,
        np.array([probe_sigma**2]),
    )
    return float(var[0])


# ---------------------------------------------------------------------------
# Consistency scores.
# ---------------------------------------------------------------------------


def _degenerate_subcheck_score(
    ctx: RangeCheckContext,
    loc_ids,
    loc_positions: np.ndarray,
    loc_ranges: np.ndarray,
    loc_sigmas: np.ndarray,
    probe_id: int,
    probe_range: float,
    probe_sigma: float,
) -> float | None:
    """Fallback for degenerate trilateration: try mirror-candidate solutions.

    Collinear centers give two mirror beacon estimates from any intersecting
    circle pair; the sub-check passes if either is consistent.  Candidates are
    additionally charged with the worst whitened circle mismatch so an
    estimate from two circles cannot ignore the third.  Returns None when no
    candidate exists at all (the evaluation failure handled by the policy).
    """
    candidates: list[np.ndarray] = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for pt in circle_intersections(
            loc_positions[i], loc_ranges[i], loc_positions[j], loc_ranges[j]
        ):
            if all(np.linalg.norm(pt - c) > 1e-9 for c in candidates):
                candidates.append(pt)
    best: float | None = None
    for pt in candidates:
        dists = np.linalg.norm(loc_positions - pt, axis=1)
        if np.any(dists < 1e-12) or np.linalg.norm(pt - ctx.positions[probe_id]) < 1e-12:
            continue
        mismatch = np.max(np.abs(dists - loc_ranges) / loc_sigmas)
        var = _group_variance_single(ctx, loc_ids, pt, loc_sigmas, probe_id, probe_sigma)
        g = float(np.linalg.norm(pt - ctx.positions[probe_id])) - probe_range
        score = max(g * g / var, float(mismatch) ** 2)
        if best is None or score < best:
            best = score
    return best


def consistency_check_group4(measurements, context: RangeCheckContext) -> float:
    """Group-4 consistency score for four range measurements (Mahalanobis^2).

    Each of the four leave-one-out triples localizes the beacon and the
    squared whitened gap between the predicted and measured fourth range is
    computed; the score is the maximum, so the accept decision requires all
    four sub-checks to pass and is invariant to the input order.  Returns
    +inf when no sub-check can produce a beacon estimate (degeneracy policy:
    the caller records the combination when the context asks for buffering).
    """
    ms = list(measurements)
    if len(ms) != 4:
        raise ValueError("group-4 check needs exactly four measurements")
    ms.sort(key=lambda m: m.pose_id)
    pose_ids = [m.pose_id for m in ms]
    if len(set(pose_ids)) < 4:
        return math.inf  # coincident poses by construction; never bufferable
    pose_idx = np.array([pose_ids])
    values = np.array([[m.value for m in ms]])
    variances = np.array([[m.sigma**2 for m in ms]])
    scores: list[float] = []
    for probe_slot in range(4):
        score, bad = group4_subcheck_batch(
            context, pose_idx, values, variances, probe_slot, gamma=None
        )
        if not bad[0]:
            scores.append(float(score[0]))
            continue
        loc = [ms[t] for t in range(4) if t != probe_slot]
        probe = ms[probe_slot]
        loc_ids = [m.pose_id for m in loc]
        fallback = _degenerate_subcheck_score(
            context,
            loc_ids,
            context.positions[np.array(loc_ids)],
            np.array([m.value for m in loc]),
            np.array([m.sigma for m in loc]),
            probe.pose_id,
            probe.value,
            probe.sigma,
        )
        if fallback is not None:
            scores.append(fallback)
    if not scores:
        return math.inf
    return float(max(scores))


def pairwise_range_check(m_a: RangeMeasurement, m_b: RangeMeasurement, context) -> float:
    """Pairwise circle-intersection feasibility score (the k=2 baseline).

    Zero when the two range circles intersect; otherwise the squared whitened
    violation of the triangle inequality gap, with variance from both range
    sigmas plus the relative position covariance projected on the baseline.
    """
    pa = context.positions[m_a.pose_id]
    pb = context.positions[m_b.pose_id]
    diff = pb - pa
    d = float(np.linalg.norm(diff))
    gap = max(0.0, d - (m_a.value + m_b.value), abs(m_a.value - m_b.value) - d)
    if gap == 0.0:
        return 0.0
    var = m_a.sigma**2 + m_b.sigma**2
    if d > 1e-12:
        u = diff / d
        rel = (
            context.position_cov(m_a.pose_id, m_a.pose_id)
            + context.position_cov(m_b.pose_id, m_b.pose_id)
            - context.position_cov(m_a.pose_id, m_b.pose_id)
            - context.position_cov(m_b.pose_id, m_a.pose_id)
        )
        var += float(u @ rel @ u)
    return gap * gap / max(var, 1e-300)


# ---------------------------------------------------------------------------
# Batched group-4 evaluation (decision-identical to the scalar path).
# ---------------------------------------------------------------------------


# Below this collinearity ratio (|cross| over the squared scene scale) the
# mirrored solution across the dominant center axis is also tested: flat
# triangles admit two nearly-valid circle intersections and the check passes
# if either is consistent.
MIRROR_RATIO = 0.5


def _trilaterate_rows(p: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch trilateration: p (B,3,2), r (B,3) -> (beacon, ok, collinearity ratio)."""
    d01 = p[:, 1] - p[:, 0]
    d02 = p[:, 2] - p[:, 0]
    d12 = p[:, 2] - p[:, 1]
    sq = np.stack(
        [np.sum(d01 * d01, axis=1), np.sum(d02 * d02, axis=1), np.sum(d12 * d12, axis=1)],
        axis=1,
    )
    cross = d01[:, 0] * d02[:, 1] - d01[:, 1] * d02[:, 0]
    max_sq = np.max(sq, axis=1)
    ok = (np.min(sq, axis=1) >= EPS_POSITION**2) & (
        np.abs(cross) >= COLLINEAR_REL * max_sq
    )
    ratio = np.abs(cross) / np.where(max_sq > 0, max_sq, 1.0)
    det = 4.0 * cross
    safe_det = np.where(ok, det, 1.0)
    norms = np.sum(p * p, axis=2)
    b0 = r[:, 0] ** 2 - r[:, 1] ** 2 + norms[:, 1] - norms[:, 0]
    b1 = r[:, 0] ** 2 - r[:, 2] ** 2 + norms[:, 2] - norms[:, 0]
    # Inverse of [[2 d01];[2 d02]] applied to (b0, b1).
    lx = (2.0 * d02[:, 1] * b0 - 2.0 * d01[:, 1] * b1) / safe_det
    ly = (-2.0 * d02[:, 0] * b0 + 2.0 * d01[:, 0] * b1) / safe_det
    return np.stack([lx, ly], axis=1), ok, ratio


def _mirror_rows(p: np.ndarray, beacon: np.ndarray) -> np.ndarray:
    """Reflect beacon estimates across the line through the two farthest centers."""
    sq = np.stack(
        [
            np.sum((p[:, 1] - p[:, 0]) ** 2, axis=1),
            np.sum((p[:, 2] - p[:, 0]) ** 2, axis=1),
            np.sum((p[:, 2] - p[:, 1]) ** 2, axis=1),
        ],
        axis=1,
    )
    pair = np.array([[0, 1], [0, 2], [1, 2]])[np.argmax(sq, axis=1)]
    rows = np.arange(p.shape[0])
    a = p[rows, pair[:, 0]]
    b = p[rows, pair[:, 1]]
    axis = b - a
    norm = np.linalg.norm(axis, axis=1)
    axis = axis / np.where(norm > 1e-12, norm, 1.0)[:, None]
    v = beacon - a
    along = np.einsum("bi,bi->b", v, axis)
    return a + 2.0 * along[:, None] * axis - v


def _score_beacon_rows(
    ctx: RangeCheckContext,
    loc_idx: np.ndarray,
    p_loc: np.ndarray,
    loc_var: np.ndarray,
    probe_pose: np.ndarray,
    probe_value: np.ndarray,
    probe_var: np.ndarray,
    beacon: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Whitened squared gap of the probe range at given beacon estimates.

    Returns (score, invalid); invalid rows have the estimate sitting on a
    pose, where no direction (and hence no sub-check) exists.
    """
    diff = beacon[:, None, :] - p_loc
    dist = np.linalg.norm(diff, axis=2)
    p_probe = ctx.positions[probe_pose]
    dprobe = beacon - p_probe
    h = np.linalg.norm(dprobe, axis=1)
    invalid = (np.min(dist, axis=1) <= 1e-12) | (h <= 1e-12)
    safe_dist = np.where(dist > 1e-12, dist, 1.0)
    u_loc = diff / safe_dist[:, :, None]
    safe_h = np.where(h > 1e-12, h, 1.0)
    u_probe = dprobe / safe_h[:, None]
    var = _group_variance_batch(
        ctx, loc_idx, u_loc, loc_var, probe_pose, u_probe, probe_var
    )
    g = h - probe_value
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        score = np.where(~invalid, g * g / var, np.inf)
    return score, invalid


def group4_subcheck_batch(
    ctx: RangeCheckContext,
    pose_idx: np.ndarray,  # (B, 4), rows ascending
    values: np.ndarray,  # (B, 4)
    variances: np.ndarray,  # (B, 4)
    probe_slot: int,
    gamma: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One leave-one-out sub-check for a batch of combinations.

    Flat localizer triangles (collinearity ratio below MIRROR_RATIO) also get
    the mirrored beacon estimate scored, and the sub-check keeps the smaller
    value; with ``gamma`` given the mirror is only computed for rows whose
    primary estimate fails (the min is unchanged for accepted rows, so accept
    decisions are identical).  Returns ``(score, bad)``: ``bad`` rows hit a
    degenerate configuration and must be re-evaluated through the scalar
    fallback; their scores are meaningless.
    """
    keep = [t for t in range(4) if t != probe_slot]
    loc_idx = pose_idx[:, keep]
    p_loc = ctx.positions[loc_idx]
    r_loc = values[:, keep]
    loc_var = variances[:, keep]
    weights = 1.0 / np.sqrt(loc_var)
    beacon, ok, ratio = _trilaterate_rows(p_loc, r_loc)
    with np.errstate(all="ignore"):  # junk rows are masked by ok below
        beacon = np.where(
            ok[:, None],
            _refine_beacon(p_loc, r_loc, beacon, weights, REFINE_STEPS),
            beacon,
        )
    probe_pose = pose_idx[:, probe_slot]
    probe_value = values[:, probe_slot]
    probe_var = variances[:, probe_slot]
    score, invalid = _score_beacon_rows(
        ctx, loc_idx, p_loc, loc_var, probe_pose, probe_value, probe_var, beacon
    )
    bad = ~ok | invalid
    score = np.where(bad, np.inf, score)
    want_mirror = ~bad & (ratio < MIRROR_RATIO)
    if gamma is not None:
        want_mirror &= score > gamma
    rows = np.nonzero(want_mirror)[0]
    if rows.size:
        sub_p = p_loc[rows]
        mirrored = _mirror_rows(sub_p, beacon[rows])
        mirrored = _refine_beacon(sub_p, r_loc[rows], mirrored, weights[rows], REFINE_STEPS)
        m_score, m_invalid = _score_beacon_rows(
            ctx,
            loc_idx[rows],
            sub_p,
            loc_var[rows],
            probe_pose[rows],
            probe_value[rows],
            probe_var[rows],
            mirrored,
        )
        m_score = np.where(m_invalid, np.inf, m_score)
        score[rows] = np.minimum(score[rows], m_score)
    return score, bad


def group4_accept_batch(
    ctx: RangeCheckContext,
    pose_idx: np.ndarray,
    values: np.ndarray,
    variances: np.ndarray,
    gamma: float | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate a combination batch.

    With ``gamma`` given, returns ``(accept, needs_scalar, scores_unused)``
    and short-circuits rows after their first failing sub-check (the accept
    set matches the exhaustive evaluation exactly; only the score magnitude
    of rejected rows is skipped).  With ``gamma=None``, evaluates all four
    sub-checks and returns the max score per row.  Rows flagged
    ``needs_scalar`` (degenerate geometry or repeated poses) carry no verdict.
    """
    n = pose_idx.shape[0]
    # Row-ascending pose order: the scalar check sorts the same way, and the
    # variance kernel relies on it to keep chain cross-covariances static.
    order = np.argsort(pose_idx, axis=1, kind="stable")
    pose_idx = np.take_along_axis(pose_idx, order, axis=1)
    values = np.take_along_axis(values, order, axis=1)
    variances = np.take_along_axis(variances, order, axis=1)
    distinct = np.all(np.diff(pose_idx, axis=1) > 0, axis=1)
    needs_scalar = np.zeros(n, dtype=bool)
    scores = np.zeros(n)
    alive = distinct.copy()
    reject = ~distinct  # repeated poses: structurally inconsistent, no edge
    idx_all = np.arange(n)
    for probe_slot in range(4):
        rows = idx_all[alive]
        if rows.size == 0:
            break
        sub, bad = group4_subcheck_batch(
            ctx, pose_idx[rows], values[rows], variances[rows], probe_slot, gamma
        )
        bad_rows = rows[bad]
        needs_scalar[bad_rows] = True
        alive[bad_rows] = False
        good = rows[~bad]
        scores[good] = np.maximum(scores[good], sub[~bad])
        if gamma is not None:
            fail = good[scores[good] > gamma]
            alive[fail] = False
            reject[fail] = True
    accept = distinct & ~needs_scalar & ~reject
    if gamma is not None:
        accept &= scores <= gamma
    scores[~distinct] = np.inf
    return accept, needs_scalar, scores


def pairwise_accept_batch(
    ctx: RangeCheckContext,
    pose_idx: np.ndarray,  # (B, 2)
    values: np.ndarray,
    variances: np.ndarray,
    gamma: float | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pairwise circle-intersection score (no degenerate path)."""
    pa = ctx.positions[pose_idx[:, 0]]
    pb = ctx.positions[pose_idx[:, 1]]
    diff = pb - pa
    d = np.linalg.norm(diff, axis=1)
    ra, rb = values[:, 0], values[:, 1]
    gap = np.maximum(0.0, np.maximum(d - (ra + rb), np.abs(ra - rb) - d))
    var = variances[:, 0] + variances[:, 1]
    far = d > 1e-12
    safe_d = np.where(far, d, 1.0)
    u = diff / safe_d[:, None]
    table = ctx.position_cov_table()
    ia, ib = pose_idx[:, 0], pose_idx[:, 1]
    rel = table[ia, ia] + table[ib, ib] - table[ia, ib] - table[ib, ia]
    var = var + np.where(far, np.einsum("bi,bij,bj->b", u, rel, u), 0.0)
    scores = np.where(gap > 0.0, gap * gap / np.maximum(var, 1e-300), 0.0)
    needs_scalar = np.zeros(pose_idx.shape[0], dtype=bool)
    accept = scores <= gamma if gamma is not None else np.ones_like(needs_scalar)
    return accept, needs_scalar, scores
