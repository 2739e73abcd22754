"""SE(2) pose algebra shared by every residual computation in the toolkit.

Angles are stored as plain radian scalars and renormalized to the half-open
interval (-pi, pi] after every operation, so angular residuals handed to the
solver never jump by 2*pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose2D",
    "normalize_angle",
    "identity",
    "compose",
    "inverse",
    "between",
    "translation_distance",
    "poses_close",
    "transform_points",
    "best_rigid_transform",
]

_TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap a finite angle into (-pi, pi], preserving its value modulo 2*pi."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    r = a % _TWO_PI  # [0, 2*pi)
    if r > math.pi:
        r -= _TWO_PI
    return r


@dataclass(frozen=True, slots=True)
class Pose2D:
    """Planar rigid-body pose; theta is normalized on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        """Return ``[x, y, theta]`` as a float array."""
        return np.array([self.x, self.y, self.theta], dtype=float)


def identity() -> Pose2D:
    return Pose2D(0.0, 0.0, 0.0)


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Group operation a + b: apply b inside the frame of a."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2D(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)


def between(a: Pose2D, b: Pose2D) -> Pose2D:
    """Relative transform inv(a) + b, i.e. b expressed in the frame of a."""
    return compose(inverse(a), b)


def translation_distance(a: Pose2D, b: Pose2D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def poses_close(a: Pose2D, b: Pose2D, tol_xy: float = 1e-9, tol_theta: float = 1e-9) -> bool:
    """Componentwise comparison; the angular gap is wrapped before testing."""
    return (
        abs(a.x - b.x) <= tol_xy
        and abs(a.y - b.y) <= tol_xy
        and abs(normalize_angle(a.theta - b.theta)) <= tol_theta
    )


def transform_points(pose: Pose2D, points: np.ndarray) -> np.ndarray:
    """Map (N, 2) points from the pose's local frame into its parent frame."""
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.array([pose.x, pose.y])


def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> Pose2D:
    """Least-squares rigid transform T minimizing sum |T(src_k) - dst_k|^2.

    Closed-form 2D Procrustes via SVD of the cross-covariance (no scaling).
    Requires at least two point pairs.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("point sets must both have shape (N, 2)")
    if src.shape[0] < 2:
        raise ValueError("need at least 2 point pairs")
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, d]) @ u.T
    theta = math.atan2(rot[1, 0], rot[0, 0])
    tx, ty = dc - rot @ sc
    return Pose2D(float(tx), float(ty), theta)
