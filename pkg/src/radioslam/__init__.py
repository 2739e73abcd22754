"""SLAM from odometry and opportunistic radio fingerprints.

Builds a pose graph from integrated odometry, adds scalar-distance loop
closures derived from radio-fingerprint similarity, and optionally refines
with 2D LiDAR scan matching, emitting trajectories and occupancy maps.
"""

from .distance_model import DistanceModel, TrainingSample, collect_training_pairs, train
from .evaluation import AteReport, associate, ate
from .fingerprint import Fingerprint, StampedFingerprint, cosine_similarity, shift_rss
from .geometry import Pose2D, between, compose, inverse, normalize_angle
from .mapping import OccupancyGrid, build_occupancy_map, export_pgm, integrate_scan
from .pipeline import (
    Dataset,
    PipelineConfig,
    run_radio_lidar_slam,
    run_radio_slam,
)
from .pose_graph import Edge, EdgeKind, PoseGraph, SolverConfig, optimize
from .scan_matching import IcpConfig, IcpResult, Scan, icp, is_valid_match
from .simulator import WorldConfig, simulate_dataset, simulate_rss

__version__ = "0.1.0"
