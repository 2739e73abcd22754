"""Pipelines: radio-only SLAM and the two-pass radio+LiDAR SLAM.

Stage order: keyframing -> (optional) consecutive-scan ICP refinement of the
odometry edges -> radio loop-closure detection -> first optimization ->
LiDAR loop-closure detection on the first-pass trajectory -> second
optimization -> occupancy map. Every stage is a pure function of its inputs,
so repeated runs are bitwise identical; per-stage wall-clock timings and
per-edge gate diagnostics land in the report.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Sequence

import numpy as np

from .distance_model import DistanceModel
from .fingerprint import (
    DEFAULT_RSS_OFFSET,
    Fingerprint,
    PreparedFingerprint,
    prepare,
    similarity_of_prepared,
)
from .geometry import Pose2D, between, translation_distance
from .mapping import DEFAULT_RESOLUTION, OccupancyGrid, build_occupancy_map
from .pose_graph import Edge, EdgeKind, PoseGraph, SolverConfig, optimize
from .scan_matching import (
    MIN_SCAN_POINTS,
    IcpConfig,
    Scan,
    icp,
    is_valid_match,
)

__all__ = [
    "Dataset",
    "PipelineConfig",
    "Keyframe",
    "RadioSlamResult",
    "RadioLidarSlamResult",
    "stamp_fingerprints",
    "build_keyframes",
    "detect_radio_loop_closures",
    "refine_consecutive_icp",
    "detect_lidar_loop_closures",
    "run_radio_slam",
    "run_radio_lidar_slam",
]

# Fitness floor when converting an ICP fitness into an information scale.
MIN_FITNESS_FOR_WEIGHT = 1e-4

TimedPose = tuple[float, Pose2D]


@dataclass
class Dataset:
    """Time-ordered sensor streams; timestamps strictly increase per stream."""

    odometry: list[TimedPose]
    fingerprints: list[Fingerprint]
    scans: list[Scan] | None = None
    ground_truth: list[TimedPose] | None = None
    rss_offset: float = DEFAULT_RSS_OFFSET


@dataclass
class PipelineConfig:
    similarity_threshold: float = 0.7
    min_travel_distance: float = 100.0  # m of travel before loop closures apply
    rss_offset: float = DEFAULT_RSS_OFFSET
    keyframe_spacing: float = 0.5  # m
    # A keyframe's attached fingerprint is usable for loop closures only if it
    # was recorded within this many seconds (guards sparse radio coverage,
    # where nearest-in-time attachment can be arbitrarily stale).
    max_fingerprint_age: float = 2.0
    odom_trans_noise_density: float = 0.05  # m / sqrt(m)
    odom_rot_noise_density: float = 0.02  # rad / sqrt(m)
    lidar_candidate_displacement: float = 5.0  # m
    fitness_max: float = 0.1
    min_match_fraction: float = 0.5
    icp_consecutive: IcpConfig = field(default_factory=IcpConfig)
    icp_loop: IcpConfig = field(default_factory=lambda: IcpConfig(max_correspondence_distance=1.0))
    solver: SolverConfig = field(default_factory=SolverConfig)
    map_resolution: float = DEFAULT_RESOLUTION
    enable_radio_closures: bool = True
    enable_lidar_closures: bool = True
    enable_consecutive_icp: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1]")
        for name in (
            "min_travel_distance",
            "keyframe_spacing",
            "odom_trans_noise_density",
            "odom_rot_noise_density",
            "fitness_max",
            "min_match_fraction",
            "map_resolution",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lidar_candidate_displacement < 0:  # zero disables candidates
            raise ValueError("lidar_candidate_displacement must be nonnegative")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["solver"] = asdict(self.solver)
        data["icp_consecutive"] = asdict(self.icp_consecutive)
        data["icp_loop"] = asdict(self.icp_loop)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        kwargs = dict(data)
        if "solver" in kwargs:
            kwargs["solver"] = SolverConfig(**kwargs["solver"])
        if "icp_consecutive" in kwargs:
            kwargs["icp_consecutive"] = IcpConfig(**kwargs["icp_consecutive"])
        if "icp_loop" in kwargs:
            kwargs["icp_loop"] = IcpConfig(**kwargs["icp_loop"])
        return cls(**kwargs)


@dataclass
class Keyframe:
    index: int
    t: float
    odom_pose: Pose2D
    travel: float  # cumulative odometry travel at this node
    fingerprint: Fingerprint | None = None
    scan: Scan | None = None


class RadioSlamResult(NamedTuple):
    trajectory: list[TimedPose]
    graph: PoseGraph
    report: dict


class RadioLidarSlamResult(NamedTuple):
    trajectory: list[TimedPose]
    grid: OccupancyGrid
    report: dict


def _nearest_by_time(times: np.ndarray, t: float) -> int:
    k = int(np.searchsorted(times, t))
    best, best_dt = -1, math.inf
    for j in (k - 1, k):
        if 0 <= j < len(times):
            dt = abs(times[j] - t)
            if dt < best_dt:
                best, best_dt = j, dt
    return best


def stamp_fingerprints(dataset: Dataset):
    """Bind each fingerprint to its nearest odometry sample (for model training).

    Returns (stamped fingerprints, odometry poses); odometry typically runs an
    order of magnitude faster than fingerprinting, so nearest-in-time is
    within half an odometry tick.
    """
    from .fingerprint import StampedFingerprint

    if not dataset.odometry:
        raise ValueError("dataset has no odometry")
    odo_times = np.array([t for t, _ in dataset.odometry])
    poses = [p for _, p in dataset.odometry]
    stamped = [
        StampedFingerprint(fp, _nearest_by_time(odo_times, fp.timestamp))
        for fp in dataset.fingerprints
    ]
    return stamped, poses


def build_keyframes(dataset: Dataset, config: PipelineConfig) -> tuple[list[Keyframe], list[Edge]]:
    """Place keyframes every ``keyframe_spacing`` meters of odometry travel.

    Keyframes carry the nearest-in-time fingerprint and scan; consecutive
    keyframes are linked by odometry edges whose diagonal information derives
    from the noise densities and the travelled segment length.
    """
    if not dataset.odometry:
        raise ValueError("dataset has no odometry")
    spacing = config.keyframe_spacing

    fp_times = np.array([fp.timestamp for fp in dataset.fingerprints])
    scan_times = (
        np.array([s.timestamp for s in dataset.scans])
        if dataset.scans
        else np.empty(0)
    )

    keyframes: list[Keyframe] = []

    def add_keyframe(t: float, pose: Pose2D, travel: float) -> None:
        fp = None
        if fp_times.size:
            fp = dataset.fingerprints[_nearest_by_time(fp_times, t)]
        scan = None
        if scan_times.size:
            scan = dataset.scans[_nearest_by_time(scan_times, t)]
        keyframes.append(Keyframe(len(keyframes), t, pose, travel, fp, scan))

    t0, p0 = dataset.odometry[0]
    add_keyframe(t0, p0, 0.0)
    travel = 0.0
    since_last = 0.0
    prev_pose = p0
    for t, pose in dataset.odometry[1:]:
        step = translation_distance(prev_pose, pose)
        travel += step
        since_last += step
        prev_pose = pose
        if since_last >= spacing - 1e-9:
            add_keyframe(t, pose, travel)
            since_last = 0.0

    edges: list[Edge] = []
    var_t_density = config.odom_trans_noise_density**2
    var_r_density = config.odom_rot_noise_density**2
    for a, b in zip(keyframes, keyframes[1:]):
        seg = b.travel - a.travel
        info = np.diag(
            [
                1.0 / (var_t_density * seg),
                1.0 / (var_t_density * seg),
                1.0 / (var_r_density * seg),
            ]
        )
        edges.append(
            Edge(EdgeKind.ODOMETRY, a.index, b.index, between(a.odom_pose, b.odom_pose), info)
        )
    return keyframes, edges


def detect_radio_loop_closures(
    keyframes: Sequence[Keyframe],
    model: DistanceModel,
    config: PipelineConfig,
) -> tuple[list[Edge], list[dict]]:
    """Radio-distance edges for all keyframe pairs past the travel gate whose
    fingerprint similarity reaches the threshold.

    The edge measurement is the model's mean distance at the observed
    similarity and its information the reciprocal model variance.
    """
    prepared: list[PreparedFingerprint | None] = []
    for kf in keyframes:
        fresh = (
            kf.fingerprint is not None
            and kf.fingerprint.readings
            and abs(kf.fingerprint.timestamp - kf.t) <= config.max_fingerprint_age
        )
        prepared.append(prepare(kf.fingerprint, config.rss_offset) if fresh else None)

    travels = np.array([kf.travel for kf in keyframes])
    edges: list[Edge] = []
    diagnostics: list[dict] = []
    for i in range(len(keyframes)):
        if prepared[i] is None:
            continue
        j_start = int(np.searchsorted(travels, travels[i] + config.min_travel_distance, side="right"))
        for j in range(j_start, len(keyframes)):
            if prepared[j] is None:
                continue
            if keyframes[i].fingerprint is keyframes[j].fingerprint:
                continue  # both nodes grabbed the same record; no information
            s = similarity_of_prepared(prepared[i], prepared[j])
            if s >= config.similarity_threshold:
                mean, var = model.query(s)
                edges.append(Edge(EdgeKind.RADIO_DISTANCE, i, j, mean, 1.0 / var))
                diagnostics.append(
                    {
                        "i": i,
                        "j": j,
                        "similarity": s,
                        "distance": mean,
                        "variance": var,
                    }
                )
    return edges, diagnostics


def refine_consecutive_icp(
    keyframes: Sequence[Keyframe],
    odometry_edges: Sequence[Edge],
    config: PipelineConfig,
) -> tuple[list[Edge], dict]:
    """Re-measure consecutive odometry edges by scan matching.

    The odometry relative pose seeds the registration; a valid match replaces
    the edge measurement and tightens the information by 1/max(fitness, floor).
    Invalid or unmatchable pairs keep their odometry edge untouched.
    """
    refined: list[Edge] = []
    attempted = 0
    replaced = 0
    for edge in odometry_edges:
        kf_i, kf_j = keyframes[edge.i], keyframes[edge.j]
        scan_i, scan_j = kf_i.scan, kf_j.scan
        usable = (
            scan_i is not None
            and scan_j is not None
            and len(scan_i) >= MIN_SCAN_POINTS
            and len(scan_j) >= MIN_SCAN_POINTS
            and scan_i is not scan_j
        )
        if not usable:
            refined.append(edge)
            continue
        attempted += 1
        result = icp(scan_j, scan_i, edge.measurement, config.icp_consecutive)
        if is_valid_match(result, scan_j, scan_i, config.fitness_max, config.min_match_fraction):
            scale = 1.0 / max(result.fitness, MIN_FITNESS_FOR_WEIGHT)
            refined.append(
                Edge(EdgeKind.ODOMETRY, edge.i, edge.j, result.transform, edge.information * scale)
            )
            replaced += 1
        else:
            refined.append(edge)
    return refined, {"attempted": attempted, "replaced": replaced}


def detect_lidar_loop_closures(
    optimized_poses: Sequence[Pose2D],
    keyframes: Sequence[Keyframe],
    config: PipelineConfig,
) -> tuple[list[Edge], list[dict]]:
    """Verify loop-closure candidates from the first-pass trajectory by ICP.

    Candidates are non-consecutive keyframe pairs past the travel gate whose
    optimized displacement is below the candidate threshold; each runs ICP
    seeded with the optimized relative pose and survives only if the match
    gates (fitness, matched-point fraction) pass.
    """
    travels = np.array([kf.travel for kf in keyframes])
    positions = np.array([[p.x, p.y] for p in optimized_poses])
    edges: list[Edge] = []
    diagnostics: list[dict] = []
    for i in range(len(keyframes)):
        scan_i = keyframes[i].scan
        if scan_i is None or len(scan_i) < MIN_SCAN_POINTS:
            continue
        j_start = int(np.searchsorted(travels, travels[i] + config.min_travel_distance, side="right"))
        j_start = max(j_start, i + 2)  # non-consecutive
        if j_start >= len(keyframes):
            continue
        delta = positions[j_start:] - positions[i]
        displacement = np.hypot(delta[:, 0], delta[:, 1])
        for off in np.nonzero(displacement < config.lidar_candidate_displacement)[0]:
            j = j_start + int(off)
            scan_j = keyframes[j].scan
            if scan_j is None or len(scan_j) < MIN_SCAN_POINTS or scan_j is scan_i:
                continue
            guess = between(optimized_poses[i], optimized_poses[j])
            result = icp(scan_j, scan_i, guess, config.icp_loop)
            accepted = is_valid_match(
                result, scan_j, scan_i, config.fitness_max, config.min_match_fraction
            )
            diagnostics.append(
                {
                    "i": i,
                    "j": j,
                    "fitness": result.fitness if math.isfinite(result.fitness) else None,
                    "matched_points": result.matched_points,
                    "source_points": len(scan_j),
                    "target_points": len(scan_i),
                    "converged": result.converged,
                    "accepted": accepted,
                }
            )
            if accepted:
                scale = 1.0 / max(result.fitness, MIN_FITNESS_FOR_WEIGHT)
                info = np.diag([scale, scale, scale])
                edges.append(Edge(EdgeKind.LIDAR_REL_POSE, i, j, result.transform, info))
    return edges, diagnostics


def _check_model(dataset: Dataset, model: DistanceModel, config: PipelineConfig) -> None:
    if abs(model.rss_offset - config.rss_offset) > 1e-9:
        raise ValueError(
            f"model rss_offset {model.rss_offset} does not match the configured "
            f"offset {config.rss_offset}; retrain or fix the dataset manifest"
        )


def _build_graph(keyframes: Sequence[Keyframe], edges: Sequence[Edge]) -> PoseGraph:
    graph = PoseGraph()
    for kf in keyframes:
        graph.add_node(kf.odom_pose)
    for e in edges:
        graph.add_edge(e.kind, e.i, e.j, e.measurement, e.information)
    return graph


def run_radio_slam(
    dataset: Dataset,
    model: DistanceModel,
    config: PipelineConfig | None = None,
) -> RadioSlamResult:
    """Keyframes -> odometry edges -> radio loop closures -> optimization."""
    if config is None:
        config = PipelineConfig()
    if not dataset.fingerprints:
        raise ValueError("dataset has no fingerprints")
    _check_model(dataset, model, config)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    keyframes, odo_edges = build_keyframes(dataset, config)
    timings["keyframing"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.enable_radio_closures:
        radio_edges, radio_diag = detect_radio_loop_closures(keyframes, model, config)
    else:
        radio_edges, radio_diag = [], []
    timings["similarity_search"] = time.perf_counter() - t0

    graph = _build_graph(keyframes, list(odo_edges) + radio_edges)
    t0 = time.perf_counter()
    poses, stats = optimize(graph, config.solver)
    timings["optimize"] = time.perf_counter() - t0

    trajectory = [(kf.t, pose) for kf, pose in zip(keyframes, poses)]
    report = {
        "pipeline": "radio-slam",
        "config": config.to_dict(),
        "keyframes": len(keyframes),
        "edges": {"odometry": len(odo_edges), "radio": len(radio_edges)},
        "radio_edges": radio_diag,
        "chi2": {"initial": stats.initial_chi2, "final": stats.final_chi2},
        "optimizer": {
            "iterations": stats.iterations,
            "accepted_steps": stats.accepted_steps,
            "converged": stats.converged,
        },
        "timings_s": timings,
    }
    return RadioSlamResult(trajectory, graph, report)


def run_radio_lidar_slam(
    dataset: Dataset,
    model: DistanceModel,
    config: PipelineConfig | None = None,
) -> RadioLidarSlamResult:
    """Two-pass SLAM: radio pass with ICP-refined odometry, then LiDAR
    loop closures and a second optimization; emits the occupancy grid."""
    if config is None:
        config = PipelineConfig()
    if not dataset.scans:
        raise ValueError(
            "dataset has no LiDAR scans; use the radio-slam command for radio-only datasets"
        )
    if not dataset.fingerprints:
        raise ValueError("dataset has no fingerprints")
    _check_model(dataset, model, config)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    keyframes, odo_edges = build_keyframes(dataset, config)
    timings["keyframing"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.enable_consecutive_icp:
        odo_edges, icp_stats = refine_consecutive_icp(keyframes, odo_edges, config)
    else:
        icp_stats = {"attempted": 0, "replaced": 0}
    timings["consecutive_icp"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.enable_radio_closures:
        radio_edges, radio_diag = detect_radio_loop_closures(keyframes, model, config)
    else:
        radio_edges, radio_diag = [], []
    timings["similarity_search"] = time.perf_counter() - t0

    graph = _build_graph(keyframes, list(odo_edges) + radio_edges)
    t0 = time.perf_counter()
    pass1_poses, stats1 = optimize(graph, config.solver)
    timings["optimize_pass1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.enable_lidar_closures:
        lidar_edges, lidar_diag = detect_lidar_loop_closures(pass1_poses, keyframes, config)
    else:
        lidar_edges, lidar_diag = [], []
    timings["lidar_loop_closures"] = time.perf_counter() - t0

    for e in lidar_edges:
        graph.add_edge(e.kind, e.i, e.j, e.measurement, e.information)
    t0 = time.perf_counter()
    final_poses, stats2 = optimize(graph, config.solver)
    timings["optimize_pass2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid = build_occupancy_map(
        final_poses, [kf.scan for kf in keyframes], config.map_resolution
    )
    timings["mapping"] = time.perf_counter() - t0
    timings["scan_matching_total"] = timings["consecutive_icp"] + timings["lidar_loop_closures"]

    trajectory = [(kf.t, pose) for kf, pose in zip(keyframes, final_poses)]
    report = {
        "pipeline": "radio-lidar-slam",
        "config": config.to_dict(),
        "keyframes": len(keyframes),
        "edges": {
            "odometry": len(odo_edges),
            "radio": len(radio_edges),
            "lidar": len(lidar_edges),
        },
        "consecutive_icp": icp_stats,
        "radio_edges": radio_diag,
        "lidar_edges": lidar_diag,
        "chi2": {
            "pass1_initial": stats1.initial_chi2,
            "pass1_final": stats1.final_chi2,
            "pass2_initial": stats2.initial_chi2,
            "pass2_final": stats2.final_chi2,
        },
        "optimizer": {
            "pass1_iterations": stats1.iterations,
            "pass2_iterations": stats2.iterations,
            "pass1_converged": stats1.converged,
            "pass2_converged": stats2.converged,
        },
        "timings_s": timings,
    }
    return RadioLidarSlamResult(trajectory, grid, report)
