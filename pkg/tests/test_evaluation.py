import math

import numpy as np
import pytest

from radioslam.evaluation import associate, ate
from radioslam.geometry import Pose2D, compose


def traj(points, t0=0.0, dt=1.0):
    return [(t0 + k * dt, Pose2D(x, y, th)) for k, (x, y, th) in enumerate(points)]


def random_traj(rng, n=40):
    pts = np.cumsum(rng.uniform(-1, 1, size=(n, 2)), axis=0)
    return traj([(float(x), float(y), 0.0) for x, y in pts])


class TestAssociate:
    def test_identical_timestamps_full_pairing(self):
        a = traj([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
        pairs = associate(a, a)
        assert pairs == [(0, 0), (1, 1), (2, 2)]

    def test_double_rate_reference(self):
        est = traj([(0, 0, 0), (1, 0, 0)], dt=1.0)
        ref = traj([(k * 0.5, 0, 0) for k in range(5)], dt=0.5)
        pairs = associate(est, ref)
        assert pairs == [(0, 0), (1, 2)]

    def test_disjoint_ranges_error(self):
        a = traj([(0, 0, 0), (1, 0, 0)], t0=0.0)
        b = traj([(0, 0, 0), (1, 0, 0)], t0=100.0)
        with pytest.raises(ValueError):
            associate(a, b)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            associate([], traj([(0, 0, 0)]))


class TestAte:
    def test_identical_trajectories(self):
        a = traj([(0, 0, 0), (1, 0, 0), (2, 1, 0.3)])
        report = ate(a, a)
        assert report.mean_error == 0.0
        assert report.std_error == 0.0

    def test_constant_offset_absorbed_by_anchor(self):
        ref = traj([(0, 0, 0), (1, 0, 0), (2, 1, 0)])
        est = [(t, Pose2D(p.x + 1.0, p.y, p.theta)) for t, p in ref]
        report = ate(est, ref, alignment="anchor_first")
        assert report.mean_error == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset_visible_without_alignment(self):
        ref = traj([(0, 0, 0), (1, 0, 0), (2, 1, 0)])
        est = [(t, Pose2D(p.x + 1.0, p.y, p.theta)) for t, p in ref]
        report = ate(est, ref, alignment="none")
        assert report.mean_error == pytest.approx(1.0, abs=1e-12)
        assert report.std_error == pytest.approx(0.0, abs=1e-12)

    def test_population_std(self):
        ref = traj([(0, 0, 0), (1, 0, 0)])
        est = [(0.0, Pose2D(0, 0, 0)), (1.0, Pose2D(1, 2, 0))]
        report = ate(est, ref, alignment="none")
        # errors are (0, 2): mean 1, population std 1
        assert report.mean_error == pytest.approx(1.0)
        assert report.std_error == pytest.approx(1.0)

    def test_unknown_alignment_rejected(self):
        a = traj([(0, 0, 0), (1, 0, 0)])
        with pytest.raises(ValueError):
            ate(a, a, alignment="scale")

    def test_rigid_never_beats_anchor_on_rms(self):
        # rigid_2d minimizes the sum of squared errors globally, so its RMS
        # can never exceed anchor_first's on the same pairs.
        rng = np.random.default_rng(8)
        for _ in range(20):
            ref = random_traj(rng)
            est = [
                (t, Pose2D(p.x + rng.normal(0, 0.3), p.y + rng.normal(0, 0.3), p.theta))
                for t, p in ref
            ]
            r_anchor = ate(est, ref, alignment="anchor_first")
            r_rigid = ate(est, ref, alignment="rigid_2d")
            rms = lambda r: math.sqrt(np.mean(np.square(r.per_pose_errors)))
            assert rms(r_rigid) <= rms(r_anchor) + 1e-12

    def test_rigid_mean_not_worse_on_frozen_seeds(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            ref = random_traj(rng)
            est = [
                (t, Pose2D(p.x + rng.normal(0, 0.2), p.y + rng.normal(0, 0.2), p.theta))
                for t, p in ref
            ]
            r_anchor = ate(est, ref, alignment="anchor_first")
            r_rigid = ate(est, ref, alignment="rigid_2d")
            assert r_rigid.mean_error <= r_anchor.mean_error + 1e-12

    def test_rigid_invariant_under_common_rigid_motion(self):
        rng = np.random.default_rng(5)
        ref = random_traj(rng)
        est = [
            (t, Pose2D(p.x + rng.normal(0, 0.5), p.y + rng.normal(0, 0.5), p.theta))
            for t, p in ref
        ]
        base = ate(est, ref, alignment="rigid_2d")
        motion = Pose2D(3.0, -7.0, 1.1)
        ref_m = [(t, compose(motion, p)) for t, p in ref]
        est_m = [(t, compose(motion, p)) for t, p in est]
        moved = ate(est_m, ref_m, alignment="rigid_2d")
        assert moved.mean_error == pytest.approx(base.mean_error, abs=1e-9)
        assert moved.std_error == pytest.approx(base.std_error, abs=1e-9)
