"""Absolute trajectory error between an estimated and a reference trajectory.

Poses are paired by nearest timestamp; per-pose error is the 2D Euclidean
distance after alignment. ``anchor_first`` pins the first paired estimated
pose onto its reference counterpart (all our pipelines share the dataset's
start frame); ``rigid_2d`` applies least-squares rigid alignment without
scale; ``none`` compares raw coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose2D, best_rigid_transform, compose, inverse, transform_points

__all__ = ["AteReport", "associate", "ate", "ALIGNMENT_MODES"]

ALIGNMENT_MODES = ("anchor_first", "rigid_2d", "none")
DEFAULT_MAX_DT = 0.1  # s

TimedPose = tuple[float, Pose2D]


@dataclass(frozen=True)
class AteReport:
    mean_error: float
    std_error: float  # population standard deviation
    per_pose_errors: tuple[float, ...]
    alignment_used: str

    def to_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "num_pairs": len(self.per_pose_errors),
            "alignment": self.alignment_used,
        }


def associate(
    estimated: Sequence[TimedPose],
    reference: Sequence[TimedPose],
    max_dt: float = DEFAULT_MAX_DT,
) -> list[tuple[int, int]]:
    """Nearest-timestamp pairing; pairs farther apart than ``max_dt`` are dropped."""
    if not estimated or not reference:
        raise ValueError("both trajectories must be non-empty")
    ref_t = np.array([t for t, _ in reference])
    pairs: list[tuple[int, int]] = []
    for i, (t, _) in enumerate(estimated):
        k = int(np.searchsorted(ref_t, t))
        best_j, best_dt = -1, math.inf
        for j in (k - 1, k):
            if 0 <= j < len(ref_t):
                dt = abs(ref_t[j] - t)
                if dt < best_dt:
                    best_j, best_dt = j, dt
        if best_j >= 0 and best_dt <= max_dt:
            pairs.append((i, best_j))
    if not pairs:
        raise ValueError(f"no timestamp pairs within {max_dt} s; trajectories may not overlap")
    return pairs


def ate(
    estimated: Sequence[TimedPose],
    reference: Sequence[TimedPose],
    alignment: str = "anchor_first",
    max_dt: float = DEFAULT_MAX_DT,
) -> AteReport:
    """Mean/std 2D position error over associated pose pairs after alignment."""
    if alignment not in ALIGNMENT_MODES:
        raise ValueError(f"alignment must be one of {ALIGNMENT_MODES}, got {alignment!r}")
    pairs = associate(estimated, reference, max_dt)
    est_pts = np.array([[estimated[i][1].x, estimated[i][1].y] for i, _ in pairs])
    ref_pts = np.array([[reference[j][1].x, reference[j][1].y] for _, j in pairs])

    if alignment == "anchor_first":
        i0, j0 = pairs[0]
        anchor = compose(reference[j0][1], inverse(estimated[i0][1]))
        est_pts = transform_points(anchor, est_pts)
    elif alignment == "rigid_2d":
        transform = best_rigid_transform(est_pts, ref_pts)
        est_pts = transform_points(transform, est_pts)

    errors = np.hypot(est_pts[:, 0] - ref_pts[:, 0], est_pts[:, 1] - ref_pts[:, 1])
    return AteReport(
        mean_error=float(errors.mean()),
        std_error=float(errors.std()),
        per_pose_errors=tuple(float(e) for e in errors),
        alignment_used=alignment,
    )
