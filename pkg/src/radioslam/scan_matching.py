"""2D point-to-point ICP with grid-hashed nearest-neighbor search.

Scans are small (a few hundred points), so correspondences are found by
bucketing the target cloud on a grid whose cell equals the correspondence
gate: any neighbor within the gate lies in the 3x3 cell neighborhood. The
alignment step is closed-form rigid Procrustes over the matched pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, best_rigid_transform, between, transform_points

__all__ = [
    "Scan",
    "IcpConfig",
    "IcpResult",
    "icp",
    "is_valid_match",
    "nearest_neighbors_within",
]

MIN_SCAN_POINTS = 10
MIN_CORRESPONDENCES = 3

_NEIGHBOR_OFFSETS = np.array(
    [[dx, dy] for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class Scan:
    """2D point cloud in the sensor frame at one timestamp."""

    timestamp: float
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("scan points must have shape (N, 2)")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_ranges(
        cls,
        timestamp: float,
        angle_min: float,
        angle_increment: float,
        ranges,
        max_range: float,
    ) -> "Scan":
        """Convert a polar range array to points, dropping invalid returns.

        Non-finite entries (missing echoes may be encoded as None/NaN/inf),
        nonpositive ranges, and ranges at or beyond ``max_range`` are dropped.
        """
        r = np.array(
            [float("nan") if v is None else float(v) for v in ranges], dtype=float
        )
        keep = np.isfinite(r) & (r > 0.0) & (r < max_range)
        angles = angle_min + angle_increment * np.arange(len(r))
        pts = np.column_stack((r[keep] * np.cos(angles[keep]), r[keep] * np.sin(angles[keep])))
        return cls(timestamp, pts)


@dataclass
class IcpConfig:
    max_correspondence_distance: float = 0.5
    max_iterations: int = 50
    transform_tolerance: float = 1e-6


@dataclass(frozen=True)
class IcpResult:
    transform: Pose2D
    fitness: float  # mean squared distance over final accepted correspondences
    matched_points: int
    converged: bool
    iterations: int = 0
    fitness_trace: tuple[float, ...] = field(default_factory=tuple)


def nearest_neighbors_within(
    src: np.ndarray, tgt: np.ndarray, gate: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact nearest target neighbor within ``gate`` for each source point.

    Returns (source indices, target indices, squared distances) for source
    points that have at least one target point inside the gate.
    """
    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0))
    if len(src) == 0 or len(tgt) == 0:
        return empty
    inv = 1.0 / gate
    tcell = np.floor(tgt * inv).astype(np.int64)
    tmin = tcell.min(axis=0)
    tidx = tcell - tmin
    dims = tidx.max(axis=0) + 1
    ncell = int(dims[0] * dims[1])
    key = tidx[:, 0] * dims[1] + tidx[:, 1]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    cell_ids = np.arange(ncell)
    starts = np.searchsorted(skey, cell_ids, side="left")
    counts = np.searchsorted(skey, cell_ids, side="right") - starts

    scell = np.floor(src * inv).astype(np.int64) - tmin
    neigh = scell[:, None, :] + _NEIGHBOR_OFFSETS[None, :, :]
    valid = (neigh >= 0).all(axis=2) & (neigh < dims).all(axis=2)
    nkey = np.where(valid, neigh[:, :, 0] * dims[1] + neigh[:, :, 1], 0)
    slot_counts = np.where(valid, counts[nkey], 0).ravel()
    slot_starts = starts[nkey].ravel()
    total = int(slot_counts.sum())
    if total == 0:
        return empty

    excl = np.cumsum(slot_counts) - slot_counts
    within = np.arange(total) - np.repeat(excl, slot_counts)
    cand_pos = np.repeat(slot_starts, slot_counts) + within
    ti = order[cand_pos]
    src_of_slot = np.repeat(np.arange(len(src)), 9)
    si = np.repeat(src_of_slot, slot_counts)
    diff = src[si] - tgt[ti]
    d2 = diff[:, 0] ** 2 + diff[:, 1] ** 2
    ok = d2 <= gate * gate
    si, ti, d2 = si[ok], ti[ok], d2[ok]
    if si.size == 0:
        return empty
    by_src = np.lexsort((d2, si))
    _, first = np.unique(si[by_src], return_index=True)
    sel = by_src[first]
    return si[sel], ti[sel], d2[sel]


def icp(
    source: Scan,
    target: Scan,
    initial_guess: Pose2D = Pose2D(),
    config: IcpConfig | None = None,
) -> IcpResult:
    """Register ``source`` onto ``target``; the result maps source-frame
    points into the target frame.

    Alternates gated nearest-neighbor correspondence with a closed-form rigid
    re-fit of the original source points until the transform change drops
    below tolerance. Fewer than 3 correspondences at any iteration aborts with
    ``converged=False`` and infinite fitness.
    """
    if config is None:
        config = IcpConfig()
    if len(source) < MIN_SCAN_POINTS or len(target) < MIN_SCAN_POINTS:
        raise ValueError(
            f"ICP needs at least {MIN_SCAN_POINTS} points per scan, "
            f"got {len(source)} and {len(target)}"
        )
    gate = config.max_correspondence_distance
    transform = initial_guess
    trace: list[float] = []
    converged = False
    iterations = 0
    for it in range(config.max_iterations):
        iterations = it + 1
        moved = transform_points(transform, source.points)
        si, ti, _ = nearest_neighbors_within(moved, target.points, gate)
        if si.size < MIN_CORRESPONDENCES:
            return IcpResult(
                transform, math.inf, int(si.size), False, iterations, tuple(trace)
            )
        new_transform = best_rigid_transform(source.points[si], target.points[ti])
        refit = transform_points(new_transform, source.points[si]) - target.points[ti]
        trace.append(float(np.mean(refit[:, 0] ** 2 + refit[:, 1] ** 2)))
        delta = between(transform, new_transform)
        change = max(abs(delta.x), abs(delta.y), abs(delta.theta))
        transform = new_transform
        if change < config.transform_tolerance:
            converged = True
            break

    moved = transform_points(transform, source.points)
    si, ti, d2 = nearest_neighbors_within(moved, target.points, gate)
    if si.size < MIN_CORRESPONDENCES:
        return IcpResult(transform, math.inf, int(si.size), False, iterations, tuple(trace))
    return IcpResult(
        transform,
        float(d2.mean()),
        int(si.size),
        converged,
        iterations,
        tuple(trace),
    )


def is_valid_match(
    result: IcpResult,
    source: Scan,
    target: Scan,
    fitness_max: float = 0.1,
    min_match_fraction: float = 0.5,
) -> bool:
    """Accept a registration iff it converged with low fitness and the matched
    count exceeds ``min_match_fraction`` of the average scan size."""
    threshold = min_match_fraction * (len(source) + len(target)) / 2.0
    return bool(
        result.converged
        and result.fitness < fitness_max
        and result.matched_points > threshold
    )
