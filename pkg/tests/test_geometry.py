import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupk import estimation, simulation
from groupk.consistency import gamma_from_confidence
from groupk.geometry import (
    Pose2,
    RangeCheckContext,
    RangeMeasurement,
    between,
    circle_intersections,
    compose,
    consistency_check_group4,
    measurement_model_h,
    pairwise_range_check,
    propagate_covariance,
    residual_jacobian,
    trilaterate_2d,
    wrap_angle,
)

angles = st.floats(-10.0, 10.0)
coords = st.floats(-100.0, 100.0)


def zero_noise_context(positions, jitter=1e-12):
    """Context with (nearly) exactly known poses for pure-geometry fixtures."""
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    return RangeCheckContext(
        positions=positions,
        thetas=np.zeros(n),
        cov_pp=np.tile(np.eye(2) * jitter, (n, 1, 1)),
        cov_ptheta=np.zeros((n, 2)),
        theta_var=np.full(n, jitter),
    )


class TestPoseAlgebra:
    def test_identity(self):
        p = Pose2(1.3, -2.0, 0.7)
        q = compose(Pose2(), p)
        assert (q.x, q.y, q.theta) == pytest.approx((p.x, p.y, p.theta))

    def test_between_self_is_identity(self):
        p = Pose2(4.0, 5.0, -2.1)
        d = between(p, p)
        assert (d.x, d.y, d.theta) == pytest.approx((0, 0, 0), abs=1e-12)

    @given(coords, coords, angles, coords, coords, angles)
    @settings(max_examples=60, deadline=None)
    def test_compose_between_round_trip(self, ax, ay, at, bx, by, bt):
        a, b = Pose2(ax, ay, at), Pose2(bx, by, bt)
        c = compose(a, between(a, b))
        assert c.x == pytest.approx(b.x, abs=1e-9)
        assert c.y == pytest.approx(b.y, abs=1e-9)
        assert wrap_angle(c.theta - b.theta) == pytest.approx(0, abs=1e-12)

    @given(angles)
    @settings(max_examples=60, deadline=None)
    def test_wrap_angle_range(self, t):
        w = wrap_angle(t)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(t), abs_tol=1e-12)


class TestTrilateration:
    def test_symmetric_exact(self):
        res = trilaterate_2d([(1, 0), (0, 1), (-1, 0)], (1, 1, 1))
        assert res.ok
        assert res.position == pytest.approx([0, 0], abs=1e-12)
        assert res.residual == pytest.approx(0, abs=1e-12)

    def test_forward_model_inversion(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            beacon = rng.uniform(-20, 20, 2)
            while True:
                pos = rng.uniform(-20, 20, (3, 2))
                d01 = pos[1] - pos[0]
                d02 = pos[2] - pos[0]
                if abs(d01[0] * d02[1] - d01[1] * d02[0]) > 1.0:
                    break
            ranges = np.linalg.norm(pos - beacon, axis=1)
            if np.min(ranges) < 1e-3:
                continue
            res = trilaterate_2d(pos, ranges)
            assert res.ok
            assert np.linalg.norm(res.position - beacon) < 1e-9

    def test_collinear_flagged(self):
        res = trilaterate_2d([(0, 0), (1, 0), (2, 0)], (1.0, 1.0, 1.5))
        assert res.degenerate == "collinear"
        assert res.position is None

    def test_coincident_flagged(self):
        res = trilaterate_2d([(0, 0), (0, 0), (2, 0)], (1.0, 1.0, 1.5))
        assert res.degenerate == "coincident"

    def test_near_degenerate_not_flagged(self):
        # perturbations far above the thresholds never raise the flag
        res = trilaterate_2d([(0, 0), (1, 1e-6), (2, 0)], (1.0, 1.0, 1.1))
        assert res.ok

    def test_refinement_reduces_circle_mismatch(self):
        rng = np.random.default_rng(1)
        raw_tot = ref_tot = 0.0
        for _ in range(100):
            beacon = rng.uniform(-5, 5, 2)
            pos = rng.uniform(-10, 10, (3, 2))
            d01, d02 = pos[1] - pos[0], pos[2] - pos[0]
            if abs(d01[0] * d02[1] - d01[1] * d02[0]) < 2.0:
                continue
            ranges = np.linalg.norm(pos - beacon, axis=1) + rng.normal(0, 0.3, 3)
            if np.min(ranges) <= 0.1:
                continue
            raw = trilaterate_2d(pos, ranges, refine_steps=0)
            ref = trilaterate_2d(pos, ranges)
            raw_tot += raw.residual**2
            ref_tot += ref.residual**2
        assert ref_tot < raw_tot


class TestCircleIntersections:
    def test_two_points(self):
        pts = circle_intersections((0, 0), 1.0, (1, 0), 1.0)
        assert len(pts) == 2
        for p in pts:
            assert np.linalg.norm(p) == pytest.approx(1.0)
            assert np.linalg.norm(p - [1, 0]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert circle_intersections((0, 0), 1.0, (5, 0), 1.0) == []

    def test_tangent(self):
        pts = circle_intersections((0, 0), 1.0, (2, 0), 1.0)
        assert len(pts) == 1
        assert pts[0] == pytest.approx([1, 0])


class TestMeasurementModel:
    def test_three_four_five(self):
        h, tri = measurement_model_h([(1, 0), (0, 1), (-1, 0)], (1, 1, 1), (3, 4))
        assert tri.ok
        assert h == pytest.approx(5.0, abs=1e-9)

    def test_noiseless_forward_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            beacon = rng.uniform(-10, 10, 2)
            pos = rng.uniform(-10, 10, (4, 2))
            d01, d02 = pos[1] - pos[0], pos[2] - pos[0]
            if abs(d01[0] * d02[1] - d01[1] * d02[0]) < 1.0:
                continue
            ranges = np.linalg.norm(pos - beacon, axis=1)
            if np.min(ranges) < 1e-2:
                continue
            h, tri = measurement_model_h(pos[:3], ranges[:3], pos[3])
            assert abs(h - ranges[3]) < 1e-9

    def test_degeneracy_propagates(self):
        h, tri = measurement_model_h([(0, 0), (1, 0), (2, 0)], (1, 1, 1), (3, 4))
        assert math.isnan(h)
        assert tri.degenerate == "collinear"


class TestCovariancePropagation:
    def test_only_range_noise(self):
        sj = np.zeros((14, 14))
        var = propagate_covariance(sj, (0.0, 0.0), (3.0, 4.0), 3, 0.1)
        assert var == pytest.approx(0.01)

    def test_rejects_asymmetric(self):
        sj = np.zeros((14, 14))
        sj[0, 1] = 1.0
        with pytest.raises(ValueError):
            propagate_covariance(sj, (0, 0), (1, 1), 0, 0.1)

    def test_rejects_indefinite(self):
        sj = -np.eye(14)
        with pytest.raises(ValueError):
            propagate_covariance(sj, (0, 0), (1, 1), 0, 0.1)

    def test_monotone_in_range_sigma(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(14, 14))
        sj = a @ a.T
        v1 = propagate_covariance(sj, (0, 0), (3, 4), 1, 0.1)
        v2 = propagate_covariance(sj, (0, 0), (3, 4), 1, 0.3)
        assert v2 > v1

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            beacon = rng.uniform(-10, 10, 2)
            probe = rng.uniform(-10, 10, 2)
            if np.linalg.norm(beacon - probe) < 0.5:
                continue
            slot = int(rng.integers(4))
            r_probe = float(rng.uniform(0.5, 20))
            h = residual_jacobian(beacon, probe, slot)

            def g_of(x):
                poses = x[:12].reshape(4, 3)
                l = x[12:14]
                rd = x[14]
                return np.linalg.norm(l - poses[slot, :2]) - rd

            x0 = np.zeros(15)
            x0[3 * slot : 3 * slot + 2] = probe
            x0[12:14] = beacon
            x0[14] = r_probe
            eps = 1e-6
            fd = np.zeros(15)
            for i in range(15):
                xp, xm = x0.copy(), x0.copy()
                xp[i] += eps
                xm[i] -= eps
                fd[i] = (g_of(xp) - g_of(xm)) / (2 * eps)
            assert np.allclose(h, fd, rtol=1e-5, atol=1e-7)


class TestGroup4Check:
    def test_noiseless_inliers_score_zero(self):
        positions = [(0, 0), (3, 1), (1, 4), (5, 5)]
        beacon = np.array([2.0, 2.0])
        ctx = zero_noise_context(positions)
        ms = [
            RangeMeasurement(i, 0, float(np.linalg.norm(np.array(p) - beacon)), 0.1)
            for i, p in enumerate(positions)
        ]
        assert consistency_check_group4(ms, ctx) < 1e-6

    def test_gross_outlier_rejected(self):
        positions = [(0, 0), (3, 1), (1, 4), (5, 5)]
        beacon = np.array([2.0, 2.0])
        ctx = zero_noise_context(positions)
        ms = [
            RangeMeasurement(i, 0, float(np.linalg.norm(np.array(p) - beacon)), 0.1)
            for i, p in enumerate(positions)
        ]
        bad = RangeMeasurement(3, 0, ms[3].value + 50 * 0.1, 0.1)
        score = consistency_check_group4(ms[:3] + [bad], ctx)
        assert score > gamma_from_confidence(0.95)

    def test_order_invariance(self):
        rng = np.random.default_rng(5)
        positions = rng.uniform(-5, 5, (4, 2))
        ctx = zero_noise_context(positions, jitter=1e-6)
        ms = [
            RangeMeasurement(i, 0, float(rng.uniform(1, 8)), 0.2) for i in range(4)
        ]
        base = consistency_check_group4(ms, ctx)
        for perm in ((1, 0, 3, 2), (3, 2, 1, 0), (2, 0, 3, 1)):
            permuted = [ms[i] for i in perm]
            assert consistency_check_group4(permuted, ctx) == pytest.approx(base)

    def test_score_monotone_in_offset(self):
        positions = [(0, 0), (4, 0), (0, 4), (4, 4)]
        beacon = np.array([1.5, 2.5])
        ctx = zero_noise_context(positions)
        base = [
            RangeMeasurement(i, 0, float(np.linalg.norm(np.array(p) - beacon)), 0.1)
            for i, p in enumerate(positions)
        ]
        scores = []
        for offset in (0.5, 1.0, 2.0, 4.0):
            bad = RangeMeasurement(3, 0, base[3].value + offset, 0.1)
            scores.append(consistency_check_group4(base[:3] + [bad], ctx))
        assert all(a < b for a, b in zip(scores, scores[1:]))

    def test_repeated_pose_rejected(self):
        ctx = zero_noise_context([(0, 0), (1, 0), (2, 1)])
        ms = [
            RangeMeasurement(0, 0, 1.0, 0.1),
            RangeMeasurement(0, 0, 1.2, 0.1),
            RangeMeasurement(1, 0, 1.0, 0.1),
            RangeMeasurement(2, 0, 1.0, 0.1),
        ]
        assert math.isinf(consistency_check_group4(ms, ctx))

    def test_all_degenerate_without_solutions_is_failure(self):
        # collinear poses with ranges that cannot intersect at all
        ctx = zero_noise_context([(0, 0), (1, 0), (2, 0), (3, 0)])
        ms = [
            RangeMeasurement(0, 0, 0.1, 0.05),
            RangeMeasurement(1, 0, 0.1, 0.05),
            RangeMeasurement(2, 0, 0.1, 0.05),
            RangeMeasurement(3, 0, 0.1, 0.05),
        ]
        assert math.isinf(consistency_check_group4(ms, ctx))

    def test_collinear_mirror_solutions_accept_inliers(self):
        # poses on a line, beacon off the line: mirror ambiguity must not reject
        positions = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]
        beacon = np.array([1.2, 2.0])
        ctx = zero_noise_context(positions)
        ms = [
            RangeMeasurement(i, 0, float(np.linalg.norm(np.array(p) - beacon)), 0.1)
            for i, p in enumerate(positions)
        ]
        assert consistency_check_group4(ms, ctx) < gamma_from_confidence(0.95)


class TestPairwiseVsGroupSeparation:
    def test_motivating_fixture(self):
        """Circles that intersect pairwise but share no common point must pass
        all six pairwise checks and fail the group-4 check."""
        positions = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]
        ctx = zero_noise_context(positions)
        ms = [RangeMeasurement(i, 0, 3.0, 0.01) for i in range(4)]
        gamma = gamma_from_confidence(0.95)
        for i in range(4):
            for j in range(i + 1, 4):
                assert pairwise_range_check(ms[i], ms[j], ctx) <= gamma
        assert consistency_check_group4(ms, ctx) > gamma


class TestPairwiseCheck:
    def test_intersecting_circles_score_zero(self):
        ctx = zero_noise_context([(0, 0), (2, 0)])
        a = RangeMeasurement(0, 0, 1.5, 0.1)
        b = RangeMeasurement(1, 0, 1.5, 0.1)
        assert pairwise_range_check(a, b, ctx) == 0.0

    def test_disjoint_circles_fail(self):
        ctx = zero_noise_context([(0, 0), (10, 0)])
        a = RangeMeasurement(0, 0, 1.0, 0.1)  # gap = 8 m at sigma ~0.14
        b = RangeMeasurement(1, 0, 1.0, 0.1)
        assert pairwise_range_check(a, b, ctx) > gamma_from_confidence(0.95)

    def test_contained_circle_fails(self):
        ctx = zero_noise_context([(0, 0), (1, 0)])
        a = RangeMeasurement(0, 0, 10.0, 0.1)
        b = RangeMeasurement(1, 0, 1.0, 0.1)
        assert pairwise_range_check(a, b, ctx) > gamma_from_confidence(0.95)

    def test_noiseless_inliers_complete(self):
        cfg = simulation.WorldConfig(
            pose_count=8,
            beacon_count=1,
            range_sigma=0.0,
            odom_sigma=(0.0, 0.0, 0.0),
            outlier_fraction=0.0,
            seed=9,
        )
        ds = simulation.generate_world(cfg)
        ctx = estimation.build_selection_context(ds.odometry)
        for i in range(8):
            for j in range(i + 1, 8):
                assert pairwise_range_check(ds.ranges[i], ds.ranges[j], ctx) == 0.0
