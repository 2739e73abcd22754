"""Synthetic world generator with exact ground truth.

Produces datasets for desk-scale verification: a waypoint path traversed at
constant speed inside a walled world, with drifting odometry (noise variance
growing linearly with distance travelled), log-distance path-loss radio
fingerprints, and LiDAR scans from exact ray-segment intersection. Every
stream is driven by an independent substream of the world seed, so e.g. the
odometry noise does not change when the transmitter count does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .geometry import Pose2D, between, compose

__all__ = [
    "Transmitter",
    "LidarSpec",
    "WorldConfig",
    "DatasetRecords",
    "simulate_rss",
    "simulate_records",
    "simulate_dataset",
    "loop_scenario",
    "corridor_scenario",
    "figure_eight_scenario",
    "SCENARIOS",
]

RSS_REFERENCE_DISTANCE = 1.0  # m
RSS_DISTANCE_FLOOR = 0.1  # m, avoids the log singularity at the transmitter


@dataclass(frozen=True)
class Transmitter:
    id: str
    x: float
    y: float
    tx_power: float = -40.0  # dBm at the reference distance
    path_loss_exponent: float = 2.5


@dataclass(frozen=True)
class LidarSpec:
    max_range: float = 30.0
    beam_count: int = 240
    range_noise_sigma: float = 0.01
    period: float = 0.5  # s between scans
    angle_min: float = -math.pi

    @property
    def angle_increment(self) -> float:
        return 2.0 * math.pi / self.beam_count


@dataclass
class WorldConfig:
    """World geometry, sensors, and noise magnitudes for one simulation."""

    walls: tuple[tuple[float, float, float, float], ...] = ()
    transmitters: tuple[Transmitter, ...] = ()
    rss_noise_sigma: float = 2.0  # dB
    detection_floor: float = -70.0  # dBm
    lidar: LidarSpec = field(default_factory=LidarSpec)
    odom_trans_noise_density: float = 0.02  # m / sqrt(m)
    odom_rot_noise_density: float = 0.004  # rad / sqrt(m)
    # Systematic heading-rate error (rad per meter travelled), the classic
    # wheel-calibration mismatch; produces a coherent curl on top of the
    # random-walk densities. Zero by default.
    odom_rot_bias: float = 0.0
    seed: int = 0
    speed: float = 0.4  # m/s
    odometry_rate: float = 10.0  # Hz
    fingerprint_period: float = 1.0  # s

    def __post_init__(self) -> None:
        for tx in self.transmitters:
            if self.detection_floor >= tx.tx_power:
                raise ValueError(
                    f"detection floor {self.detection_floor} must lie below "
                    f"tx_power {tx.tx_power} of {tx.id}"
                )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["walls"] = [list(w) for w in self.walls]
        data["transmitters"] = [asdict(tx) for tx in self.transmitters]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        kwargs = dict(data)
        kwargs["walls"] = tuple(tuple(float(v) for v in w) for w in data.get("walls", ()))
        kwargs["transmitters"] = tuple(
            Transmitter(**tx) for tx in data.get("transmitters", ())
        )
        if "lidar" in data:
            kwargs["lidar"] = LidarSpec(**data["lidar"])
        return cls(**kwargs)


@dataclass
class DatasetRecords:
    """File-level record streams; the exact content written to dataset files."""

    odometry: list[tuple[float, float, float, float]]
    ground_truth: list[tuple[float, float, float, float]]
    fingerprints: list[tuple[float, list[tuple[str, float]]]]
    scans: list[tuple[float, list[float | None]]]
    lidar: LidarSpec


def simulate_rss(
    tx: Transmitter,
    position: tuple[float, float],
    noise_sigma: float = 0.0,
    detection_floor: float = -math.inf,
    rng: np.random.Generator | None = None,
) -> float | None:
    """Log-distance path-loss RSS at a position, or None if undetectable."""
    x, y = position
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("position must be finite")
    d = max(math.hypot(x - tx.x, y - tx.y), RSS_DISTANCE_FLOOR)
    rss = tx.tx_power - 10.0 * tx.path_loss_exponent * math.log10(d / RSS_REFERENCE_DISTANCE)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("rng required when noise_sigma > 0")
        rss += noise_sigma * rng.standard_normal()
    return rss if rss >= detection_floor else None


class _Path:
    """Arc-length parametrization of a waypoint polyline."""

    def __init__(self, waypoints: Sequence[tuple[float, float]]):
        if len(waypoints) < 1:
            raise ValueError("need at least one waypoint")
        self.pts = np.asarray(waypoints, dtype=float)
        if len(self.pts) == 1:
            self.seg_len = np.zeros(0)
        else:
            diffs = np.diff(self.pts, axis=0)
            self.seg_len = np.hypot(diffs[:, 0], diffs[:, 1])
            if (self.seg_len <= 0).any():
                raise ValueError("consecutive waypoints must be distinct")
        self.cum = np.concatenate(([0.0], np.cumsum(self.seg_len)))
        self.total = float(self.cum[-1])

    def pose_at(self, s: float) -> Pose2D:
        if self.total == 0.0:
            x, y = self.pts[0]
            return Pose2D(float(x), float(y), 0.0)
        s = min(max(s, 0.0), self.total)
        k = int(np.searchsorted(self.cum, s, side="right") - 1)
        k = min(k, len(self.seg_len) - 1)
        u = (s - self.cum[k]) / self.seg_len[k]
        p = self.pts[k] + u * (self.pts[k + 1] - self.pts[k])
        heading = math.atan2(
            self.pts[k + 1][1] - self.pts[k][1], self.pts[k + 1][0] - self.pts[k][0]
        )
        return Pose2D(float(p[0]), float(p[1]), heading)


def _segments_intersect(p, q, walls: np.ndarray) -> bool:
    """Proper intersection test of segment pq against any wall segment."""
    d = q - p
    e = walls[:, 2:] - walls[:, :2]
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    po = walls[:, :2] - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (po[:, 0] * e[:, 1] - po[:, 1] * e[:, 0]) / denom
        u = (po[:, 0] * d[1] - po[:, 1] * d[0]) / denom
    hit = (
        (np.abs(denom) > 1e-12)
        & (t >= -1e-9)
        & (t <= 1.0 + 1e-9)
        & (u >= -1e-9)
        & (u <= 1.0 + 1e-9)
    )
    return bool(hit.any())


def _raycast(
    walls: np.ndarray, pose: Pose2D, lidar: LidarSpec, rng: np.random.Generator
) -> list[float | None]:
    b = lidar.beam_count
    angles = pose.theta + lidar.angle_min + lidar.angle_increment * np.arange(b)
    dx = np.cos(angles)
    dy = np.sin(angles)
    noise = lidar.range_noise_sigma * rng.standard_normal(b)
    if walls.shape[0] == 0:
        return [None] * b
    e = walls[:, 2:] - walls[:, :2]  # (W, 2)
    po = walls[:, :2] - np.array([pose.x, pose.y])  # (W, 2)
    denom = dx[:, None] * e[None, :, 1] - dy[:, None] * e[None, :, 0]  # (B, W)
    tnum = po[:, 0] * e[:, 1] - po[:, 1] * e[:, 0]  # (W,)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = tnum[None, :] / denom
        u = (po[None, :, 0] * dy[:, None] - po[None, :, 1] * dx[:, None]) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
    t = np.where(valid, t, np.inf)
    ranges = t.min(axis=1)
    out: list[float | None] = []
    for k in range(b):
        r = ranges[k]
        if math.isfinite(r) and r <= lidar.max_range:
            out.append(float(r + noise[k]))
        else:
            out.append(None)
    return out


def simulate_records(world: WorldConfig, waypoints: Sequence[tuple[float, float]]) -> DatasetRecords:
    """Generate the raw record streams for a traversal of ``waypoints``."""
    path = _Path(waypoints)
    walls = np.asarray(world.walls, dtype=float).reshape(-1, 4)
    for k in range(len(path.pts) - 1):
        if _segments_intersect(path.pts[k], path.pts[k + 1], walls):
            raise ValueError(
                f"waypoint segment {k} ({tuple(path.pts[k])} -> {tuple(path.pts[k + 1])}) crosses a wall"
            )

    ss = np.random.SeedSequence(world.seed)
    odo_rng, rss_rng, lidar_rng = (np.random.default_rng(c) for c in ss.spawn(3))

    duration = path.total / world.speed if world.speed > 0 else 0.0
    dt = 1.0 / world.odometry_rate
    n_odo = int(math.floor(duration / dt + 1e-9)) + 1

    gt: list[tuple[float, float, float, float]] = []
    odo: list[tuple[float, float, float, float]] = []
    sigma_t = world.odom_trans_noise_density
    sigma_r = world.odom_rot_noise_density
    prev_gt_pose: Pose2D | None = None
    odo_pose = Pose2D()
    for k in range(n_odo):
        t = k * dt
        gt_pose = path.pose_at(world.speed * t)
        gt.append((t, float(gt_pose.x), float(gt_pose.y), float(gt_pose.theta)))
        if prev_gt_pose is None:
            odo_pose = gt_pose
        else:
            rel = between(prev_gt_pose, gt_pose)
            step = math.hypot(rel.x, rel.y)
            scale = math.sqrt(step)
            noise = odo_rng.standard_normal(3)
            noisy_rel = Pose2D(
                rel.x + float(sigma_t * scale * noise[0]),
                rel.y + float(sigma_t * scale * noise[1]),
                rel.theta + float(sigma_r * scale * noise[2]) + world.odom_rot_bias * step,
            )
            odo_pose = compose(odo_pose, noisy_rel)
        odo.append((t, float(odo_pose.x), float(odo_pose.y), float(odo_pose.theta)))
        prev_gt_pose = gt_pose

    fingerprints: list[tuple[float, list[tuple[str, float]]]] = []
    n_fp = int(math.floor(duration / world.fingerprint_period + 1e-9)) + 1
    for k in range(n_fp):
        t = k * world.fingerprint_period
        pose = path.pose_at(world.speed * t)
        noise = world.rss_noise_sigma * rss_rng.standard_normal(len(world.transmitters))
        readings: list[tuple[str, float]] = []
        for tx, eps in zip(world.transmitters, noise):
            d = max(math.hypot(pose.x - tx.x, pose.y - tx.y), RSS_DISTANCE_FLOOR)
            rss = (
                tx.tx_power
                - 10.0 * tx.path_loss_exponent * math.log10(d / RSS_REFERENCE_DISTANCE)
                + float(eps)
            )
            if rss >= world.detection_floor:
                readings.append((tx.id, rss))
        if readings:
            fingerprints.append((t, readings))

    scans: list[tuple[float, list[float | None]]] = []
    n_scan = int(math.floor(duration / world.lidar.period + 1e-9)) + 1
    for k in range(n_scan):
        t = k * world.lidar.period
        pose = path.pose_at(world.speed * t)
        scans.append((t, _raycast(walls, pose, world.lidar, lidar_rng)))

    return DatasetRecords(
        odometry=odo,
        ground_truth=gt,
        fingerprints=fingerprints,
        scans=scans,
        lidar=world.lidar,
    )


def simulate_dataset(world: WorldConfig, waypoints: Sequence[tuple[float, float]]):
    """Simulate and ingest into an in-memory dataset (with ground truth)."""
    from .dataset_io import build_dataset

    return build_dataset(simulate_records(world, waypoints))


def _square_walls(half: float) -> list[tuple[float, float, float, float]]:
    return [
        (-half, -half, half, -half),
        (half, -half, half, half),
        (half, half, -half, half),
        (-half, half, -half, -half),
    ]


def _box_walls(cx: float, cy: float, half: float) -> list[tuple[float, float, float, float]]:
    return [
        (cx - half, cy - half, cx + half, cy - half),
        (cx + half, cy - half, cx + half, cy + half),
        (cx + half, cy + half, cx - half, cy + half),
        (cx - half, cy + half, cx - half, cy - half),
    ]


def _ring_point(perimeter_pos: float, half: float) -> tuple[float, float]:
    """Point on the axis-aligned square ring of half-extent ``half``."""
    side = 2.0 * half
    s = perimeter_pos % (4.0 * side)
    if s < side:
        return (-half + s, -half)
    if s < 2 * side:
        return (half, -half + (s - side))
    if s < 3 * side:
        return (half - (s - 2 * side), half)
    return (-half, half - (s - 3 * side))


def loop_scenario(
    seed: int = 0,
    n_transmitters: int = 30,
    rss_noise_scale: float = 1.0,
    laps: float = 2.0,
) -> tuple[WorldConfig, list[tuple[float, float]]]:
    """Square circuit (~400 m at the default 2 laps) inside a walled room.

    Transmitters sit on a jittered ring near the path; the sharp path-loss
    exponent makes similarity decay over a few meters, so revisit pairs on
    consecutive laps (200 m of travel apart, above the loop-closure travel
    gate) are the ones that clear the similarity threshold.
    """
    room_half = 30.0
    path_half = 25.0
    walls = _square_walls(room_half)
    for cx, cy in ((18.0, 18.0), (-18.0, 18.0), (-18.0, -18.0), (18.0, -18.0)):
        walls += _box_walls(cx, cy, 1.0)
    for cx, cy in ((18.0, 0.0), (-18.0, 0.0), (0.0, 18.0), (0.0, -18.0)):
        walls += _box_walls(cx, cy, 0.75)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 9341]))
    perimeter = 8.0 * path_half
    detection_floor = -67.0
    path_loss_exponent = 3.5
    # Partial power compensation for density: sparser deployments transmit
    # stronger (macro cells) but do not fully close the coverage gap, so few
    # transmitters mean a similarity that saturates over longer distances.
    radius = 5.9 * (30.0 / n_transmitters) ** 0.25
    tx_power = detection_floor + 10.0 * path_loss_exponent * math.log10(max(radius, 1.0))
    txs = []
    for k in range(n_transmitters):
        base = _ring_point((k + 0.5) / n_transmitters * perimeter, path_half)
        jitter = rng.normal(0.0, 1.5, size=2)
        x = float(np.clip(base[0] + jitter[0], -room_half + 1.0, room_half - 1.0))
        y = float(np.clip(base[1] + jitter[1], -room_half + 1.0, room_half - 1.0))
        txs.append(
            Transmitter(
                id=f"tx{k:02d}", x=x, y=y,
                tx_power=tx_power, path_loss_exponent=path_loss_exponent,
            )
        )

    corners = [(-path_half, -path_half), (path_half, -path_half), (path_half, path_half), (-path_half, path_half)]
    sides = int(round(laps * 4))
    waypoints = [corners[0]]
    for k in range(sides):
        waypoints.append(corners[(k + 1) % 4])

    # Coherent heading-rate bias (sign and magnitude drawn from the seed):
    # curls the odometry into a large, correctable drift over the 400 m run.
    bias = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.0016, 0.0022))

    world = WorldConfig(
        walls=tuple(walls),
        transmitters=tuple(txs),
        rss_noise_sigma=1.0 * rss_noise_scale,
        detection_floor=detection_floor,
        lidar=LidarSpec(max_range=30.0, beam_count=240, range_noise_sigma=0.01, period=0.5),
        odom_trans_noise_density=0.05,
        odom_rot_noise_density=0.01,
        odom_rot_bias=bias,
        seed=seed,
    )
    return world, waypoints


def corridor_scenario(seed: int = 0, n_transmitters: int = 12) -> tuple[WorldConfig, list[tuple[float, float]]]:
    """Long corridor traversed back and forth; perceptually degraded for LiDAR."""
    walls = [
        (0.0, 0.0, 60.0, 0.0),
        (60.0, 0.0, 60.0, 6.0),
        (60.0, 6.0, 0.0, 6.0),
        (0.0, 6.0, 0.0, 0.0),
    ]
    for k, bx in enumerate((8.0, 20.0, 32.0, 44.0, 52.0)):
        by = 1.0 if k % 2 == 0 else 5.0
        walls += _box_walls(bx, by, 0.4)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 9342]))
    txs = []
    for k in range(n_transmitters):
        x = 2.0 + (k + 0.5) / n_transmitters * 56.0
        y = float(rng.uniform(0.5, 5.5))
        txs.append(Transmitter(id=f"tx{k:02d}", x=x, y=y))
    waypoints = [(3.0, 3.0), (57.0, 3.0), (3.0, 3.0), (57.0, 3.0)]
    world = WorldConfig(
        walls=tuple(walls),
        transmitters=tuple(txs),
        lidar=LidarSpec(max_range=30.0, beam_count=240, range_noise_sigma=0.01, period=0.5),
        seed=seed,
    )
    return world, waypoints


def figure_eight_scenario(seed: int = 0, n_transmitters: int = 24) -> tuple[WorldConfig, list[tuple[float, float]]]:
    """Two crossing diamond loops around pillars, traversed twice (~240 m)."""
    walls = _square_walls(25.0)
    # Trim the square room into 50x24: add explicit top/bottom walls.
    walls = [
        (-25.0, -12.0, 25.0, -12.0),
        (25.0, -12.0, 25.0, 12.0),
        (25.0, 12.0, -25.0, 12.0),
        (-25.0, 12.0, -25.0, -12.0),
    ]
    walls += _box_walls(12.0, 0.0, 1.0)
    walls += _box_walls(-12.0, 0.0, 1.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 9343]))
    txs = []
    for k in range(n_transmitters):
        x = float(rng.uniform(-23.0, 23.0))
        y = float(rng.uniform(-10.0, 10.0))
        txs.append(Transmitter(id=f"tx{k:02d}", x=x, y=y))
    eight = [
        (0.0, 0.0),
        (12.0, -9.0),
        (24.0, 0.0),
        (12.0, 9.0),
        (0.0, 0.0),
        (-12.0, -9.0),
        (-24.0, 0.0),
        (-12.0, 9.0),
        (0.0, 0.0),
    ]
    waypoints = eight + eight[1:]
    world = WorldConfig(
        walls=tuple(walls),
        transmitters=tuple(txs),
        lidar=LidarSpec(max_range=30.0, beam_count=240, range_noise_sigma=0.01, period=0.5),
        seed=seed,
    )
    return world, waypoints


SCENARIOS = {
    "loop": loop_scenario,
    "corridor": corridor_scenario,
    "figure-eight": figure_eight_scenario,
}
