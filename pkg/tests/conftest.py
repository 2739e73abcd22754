"""Shared fixtures: a small revisiting loop dataset with a trained model."""

import numpy as np
import pytest

from radioslam.dataset_io import build_dataset
from radioslam.distance_model import collect_training_pairs, train
from radioslam.pipeline import PipelineConfig, stamp_fingerprints
from radioslam.pose_graph import SolverConfig
from radioslam.scan_matching import IcpConfig
from radioslam.simulator import (
    LidarSpec,
    Transmitter,
    WorldConfig,
    simulate_records,
)


def _ring_point(s, half):
    side = 2.0 * half
    s = s % (4.0 * side)
    if s < side:
        return (-half + s, -half)
    if s < 2 * side:
        return (half, -half + (s - side))
    if s < 3 * side:
        return (half - (s - 2 * side), half)
    return (-half, half - (s - 3 * side))


def mini_loop_world(seed=0, n_transmitters=12, rss_noise_sigma=0.7):
    """Square circuit of 40 m perimeter inside a 16x16 room; 2.25 laps."""
    room = 8.0
    path = 5.0
    walls = [
        (-room, -room, room, -room),
        (room, -room, room, room),
        (room, room, -room, room),
        (-room, room, -room, -room),
        # one pillar for scan-matching structure
        (2.5, 2.5, 3.5, 2.5),
        (3.5, 2.5, 3.5, 3.5),
        (3.5, 3.5, 2.5, 3.5),
        (2.5, 3.5, 2.5, 2.5),
    ]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    txs = []
    for k in range(n_transmitters):
        bx, by = _ring_point((k + 0.5) / n_transmitters * 8 * path, path)
        jx, jy = rng.normal(0.0, 1.0, size=2)
        txs.append(
            Transmitter(
                f"tx{k:02d}",
                float(np.clip(bx + jx, -room + 0.5, room - 0.5)),
                float(np.clip(by + jy, -room + 0.5, room - 0.5)),
                tx_power=-40.0,
                path_loss_exponent=3.5,
            )
        )
    corners = [(-path, -path), (path, -path), (path, path), (-path, path)]
    waypoints = [corners[0]]
    for k in range(9):  # 2.25 laps
        waypoints.append(corners[(k + 1) % 4])
    world = WorldConfig(
        walls=tuple(walls),
        transmitters=tuple(txs),
        rss_noise_sigma=rss_noise_sigma,
        detection_floor=-60.0,
        lidar=LidarSpec(max_range=30.0, beam_count=180, range_noise_sigma=0.005, period=0.5),
        odom_trans_noise_density=0.05,
        odom_rot_noise_density=0.04,
        fingerprint_period=0.5,
        seed=seed,
    )
    return world, waypoints


def mini_loop_config():
    return PipelineConfig(
        keyframe_spacing=0.5,
        min_travel_distance=30.0,
        similarity_threshold=0.7,
        odom_trans_noise_density=0.05,
        odom_rot_noise_density=0.04,
        lidar_candidate_displacement=3.0,
        icp_loop=IcpConfig(max_correspondence_distance=1.0),
        solver=SolverConfig(),
    )


@pytest.fixture(scope="session")
def mini_loop():
    """(dataset, model, config) for a 90 m revisiting square circuit."""
    world, waypoints = mini_loop_world(seed=0)
    dataset = build_dataset(simulate_records(world, waypoints))
    stamped, poses = stamp_fingerprints(dataset)
    samples = collect_training_pairs(stamped, poses, max_pair_distance=10.0, rss_offset=100.0)
    model = train(samples, bin_width=0.05, rss_offset=100.0)
    return dataset, model, mini_loop_config()
