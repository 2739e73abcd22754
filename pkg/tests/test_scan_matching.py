import math

import numpy as np
import pytest

from radioslam.geometry import Pose2D, compose, inverse, poses_close, transform_points
from radioslam.scan_matching import (
    IcpConfig,
    IcpResult,
    Scan,
    icp,
    is_valid_match,
    nearest_neighbors_within,
)


def corner_scan(n=200, t=0.0):
    """Dense L-shaped synthetic scan: two perpendicular wall segments."""
    xs = np.linspace(0.0, 4.0, n // 2)
    wall_a = np.column_stack((xs, np.full(n // 2, 2.0)))
    ys = np.linspace(-2.0, 2.0, n - n // 2)
    wall_b = np.column_stack((np.full(n - n // 2, 4.0), ys))
    return Scan(t, np.vstack((wall_a, wall_b)))


def room_scan(n=360, t=0.0):
    """Simulated rectangular room viewed from an off-center pose."""
    angles = np.linspace(-math.pi, math.pi, n, endpoint=False)
    pts = []
    for a in angles:
        # ray from (0.7, -0.4) inside the box [-3,5] x [-2,3]
        dx, dy = math.cos(a), math.sin(a)
        ts = []
        for wall_x in (-3.0, 5.0):
            if abs(dx) > 1e-12:
                t_hit = (wall_x - 0.7) / dx
                if t_hit > 0:
                    y = -0.4 + t_hit * dy
                    if -2.0 <= y <= 3.0:
                        ts.append(t_hit)
        for wall_y in (-2.0, 3.0):
            if abs(dy) > 1e-12:
                t_hit = (wall_y + 0.4) / dy
                if t_hit > 0:
                    x = 0.7 + t_hit * dx
                    if -3.0 <= x <= 5.0:
                        ts.append(t_hit)
        r = min(ts)
        pts.append((r * dx, r * dy))
    return Scan(t, np.array(pts))


class TestScanConstruction:
    def test_from_ranges_drops_invalid(self):
        ranges = [1.0, None, float("nan"), float("inf"), 0.0, -1.0, 30.0, 2.0]
        scan = Scan.from_ranges(0.0, 0.0, math.pi / 4, ranges, max_range=30.0)
        assert len(scan) == 2  # only 1.0 and 2.0 survive

    def test_from_ranges_geometry(self):
        scan = Scan.from_ranges(0.0, 0.0, math.pi / 2, [2.0, 3.0], max_range=10.0)
        assert np.allclose(scan.points[0], [2.0, 0.0])
        assert np.allclose(scan.points[1], [0.0, 3.0], atol=1e-12)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            Scan(0.0, np.zeros((3, 3)))


class TestNearestNeighbors:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            src = rng.uniform(-5, 5, size=(40, 2))
            tgt = rng.uniform(-5, 5, size=(60, 2))
            gate = 1.2
            si, ti, d2 = nearest_neighbors_within(src, tgt, gate)
            got = {int(a): (int(b), float(d)) for a, b, d in zip(si, ti, d2)}
            for k in range(len(src)):
                dists = np.sum((tgt - src[k]) ** 2, axis=1)
                j = int(np.argmin(dists))
                if dists[j] <= gate * gate:
                    assert k in got
                    assert got[k][1] == pytest.approx(float(dists[j]), abs=1e-12)
                    assert dists[got[k][0]] == pytest.approx(float(dists[j]), abs=1e-12)
                else:
                    assert k not in got

    def test_empty_when_out_of_gate(self):
        si, ti, d2 = nearest_neighbors_within(
            np.array([[0.0, 0.0]]), np.array([[10.0, 10.0]]), 0.5
        )
        assert si.size == 0


class TestIcp:
    def test_self_registration(self):
        scan = corner_scan()
        result = icp(scan, scan, Pose2D())
        assert result.converged
        assert poses_close(result.transform, Pose2D(), 1e-12, 1e-12)
        assert result.fitness <= 1e-20  # zero at double precision
        assert result.matched_points == len(scan)

    def test_translation_recovery(self):
        # Dense closed scan with four corners: recovery is exact. Open-ended
        # two-wall scans stall at the sampling pitch (see sliding test below).
        source = room_scan()
        truth = Pose2D(0.3, -0.1, 0.0)
        target = Scan(0.0, transform_points(truth, source.points))
        result = icp(source, target, Pose2D())
        assert result.converged
        assert poses_close(result.transform, truth, 1e-6, 1e-6)

    def test_rotation_recovery_with_offset_guess(self):
        source = room_scan()
        truth = Pose2D(0.0, 0.0, 0.2)
        target = Scan(0.0, transform_points(truth, source.points))
        result = icp(source, target, Pose2D(0.0, 0.0, 0.15))
        assert result.converged
        assert poses_close(result.transform, truth, 1e-6, 1e-6)

    def test_open_wall_sliding_bounded_by_sampling_pitch(self):
        # With free wall ends, point-to-point ICP parks within the point
        # spacing of the truth; the error shrinks as density grows.
        truth = Pose2D(0.3, -0.1, 0.0)
        errs = []
        for n in (200, 2000):
            source = corner_scan(n)
            spacing = 4.0 / (n // 2)
            target = Scan(0.0, transform_points(truth, source.points))
            result = icp(source, target, Pose2D())
            err = math.hypot(result.transform.x - truth.x, result.transform.y - truth.y)
            assert err < spacing
            errs.append(err)
        assert errs[1] < errs[0]

    def test_too_few_points_rejected(self):
        tiny = Scan(0.0, np.random.default_rng(0).uniform(0, 1, size=(5, 2)))
        with pytest.raises(ValueError):
            icp(tiny, corner_scan(), Pose2D())

    def test_no_correspondences_flags_failure(self):
        source = corner_scan()
        target = Scan(0.0, source.points + np.array([100.0, 100.0]))
        result = icp(source, target, Pose2D())
        assert not result.converged
        assert math.isinf(result.fitness)

    def test_equivariance_under_rotation(self):
        source = room_scan()
        truth = Pose2D(0.25, -0.15, 0.1)
        target = Scan(0.0, transform_points(truth, source.points))
        base = icp(source, target, Pose2D()).transform

        rot = Pose2D(0.0, 0.0, 0.7)
        source_r = Scan(0.0, transform_points(rot, source.points))
        target_r = Scan(0.0, transform_points(rot, target.points))
        guess = compose(rot, compose(Pose2D(), inverse(rot)))
        result = icp(source_r, target_r, guess).transform
        expected = compose(rot, compose(base, inverse(rot)))
        assert poses_close(result, expected, 1e-8, 1e-8)

    def test_fitness_trace_non_increasing_on_convergent_run(self):
        source = room_scan()
        truth = Pose2D(0.2, 0.1, 0.05)
        target = Scan(0.0, transform_points(truth, source.points))
        result = icp(source, target, Pose2D())
        assert result.converged
        trace = result.fitness_trace
        assert all(a >= b - 1e-12 for a, b in zip(trace, trace[1:]))

    def test_matched_points_bounded(self):
        source = corner_scan(100)
        target = corner_scan(150)
        result = icp(source, target, Pose2D())
        assert result.matched_points <= min(len(source), len(target))


class TestMatchValidity:
    def dummy(self, fitness, matched, converged=True):
        return IcpResult(Pose2D(), fitness, matched, converged)

    def scan_of(self, n):
        return Scan(0.0, np.zeros((n, 2)))

    def test_good_match_accepted(self):
        # 400 matched > 300 = half the average of 600/600; fitness under 0.1
        assert is_valid_match(self.dummy(0.05, 400), self.scan_of(600), self.scan_of(600))

    def test_high_fitness_rejected(self):
        assert not is_valid_match(self.dummy(0.2, 600), self.scan_of(600), self.scan_of(600))

    def test_low_match_count_rejected(self):
        assert not is_valid_match(self.dummy(0.01, 200), self.scan_of(600), self.scan_of(600))

    def test_unconverged_rejected(self):
        assert not is_valid_match(
            self.dummy(0.01, 500, converged=False), self.scan_of(600), self.scan_of(600)
        )
