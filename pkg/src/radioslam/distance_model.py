"""Similarity-to-distance model trained by binning odometry-annotated pairs.

Short stretches of odometry are accurate, so fingerprint pairs recorded
within a small odometry displacement give (similarity, distance) samples.
Binning those samples over [0, 1] yields, per similarity bin, the mean
distance and its population variance; the variance becomes the weight of a
radio loop-closure constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fingerprint import (
    DEFAULT_RSS_OFFSET,
    StampedFingerprint,
    prepare,
    similarity_of_prepared,
)
from .geometry import Pose2D

__all__ = [
    "TrainingSample",
    "ModelBin",
    "DistanceModel",
    "VARIANCE_FLOOR",
    "collect_training_pairs",
    "train",
]

# Applied when querying so an all-identical bin cannot produce an infinite
# information weight.
VARIANCE_FLOOR = 0.01  # m^2

DEFAULT_BIN_WIDTH = 0.05
DEFAULT_MAX_PAIR_DISTANCE = 10.0  # m


@dataclass(frozen=True)
class TrainingSample:
    """One (similarity, physical distance) observation."""

    similarity: float
    distance: float


@dataclass(frozen=True)
class ModelBin:
    """Statistics of one similarity interval [lo, hi).

    ``count`` is 0 for bins filled by interpolation/clamping rather than data.
    """

    lo: float
    hi: float
    mean: float
    var: float
    count: int

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class DistanceModel:
    """Binned mapping from similarity to (mean distance, distance variance)."""

    bin_width: float
    bins: tuple[ModelBin, ...]
    rss_offset: float = DEFAULT_RSS_OFFSET

    def bin_index(self, s: float) -> int:
        """Index of the bin containing s; boundary values go to the higher bin."""
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"similarity must be in [0, 1], got {s}")
        if not self.bins:
            raise ValueError("model has no bins")
        return min(int(s // self.bin_width), len(self.bins) - 1)

    def query(self, s: float) -> tuple[float, float]:
        """Mean distance and floored variance of the bin containing s."""
        b = self.bins[self.bin_index(s)]
        return b.mean, max(b.var, VARIANCE_FLOOR)

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "rss_offset": self.rss_offset,
            "bins": [
                {"lo": b.lo, "hi": b.hi, "mean": b.mean, "var": b.var, "count": b.count}
                for b in self.bins
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DistanceModel":
        bins = tuple(
            ModelBin(b["lo"], b["hi"], b["mean"], b["var"], int(b["count"]))
            for b in data["bins"]
        )
        return cls(bin_width=float(data["bin_width"]), bins=bins, rss_offset=float(data["rss_offset"]))


def collect_training_pairs(
    fingerprints: Sequence[StampedFingerprint],
    poses: Sequence[Pose2D],
    max_pair_distance: float = DEFAULT_MAX_PAIR_DISTANCE,
    rss_offset: float = DEFAULT_RSS_OFFSET,
) -> list[TrainingSample]:
    """Emit (similarity, odometry distance) for all pairs within the cap.

    ``poses`` are odometry poses; each stamped fingerprint references one by
    index. Pairs farther apart than ``max_pair_distance`` (where odometry
    drift would corrupt the label) are skipped.
    """
    if len(fingerprints) < 2:
        raise ValueError("need at least 2 fingerprints to form training pairs")
    prepared = []
    positions = np.empty((len(fingerprints), 2))
    for k, sf in enumerate(fingerprints):
        if not 0 <= sf.pose_index < len(poses):
            raise ValueError(f"pose_index {sf.pose_index} out of range for {len(poses)} poses")
        prepared.append(prepare(sf.fingerprint, rss_offset))
        pose = poses[sf.pose_index]
        positions[k] = (pose.x, pose.y)

    samples: list[TrainingSample] = []
    for i in range(len(fingerprints) - 1):
        delta = positions[i + 1 :] - positions[i]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        for off in np.nonzero(dist <= max_pair_distance)[0]:
            j = i + 1 + int(off)
            s = similarity_of_prepared(prepared[i], prepared[j])
            samples.append(TrainingSample(s, float(dist[off])))
    return samples


def _bin_count(bin_width: float) -> int:
    return max(1, math.ceil(1.0 / bin_width - 1e-12))


def train(
    samples: Sequence[TrainingSample],
    bin_width: float = DEFAULT_BIN_WIDTH,
    rss_offset: float = DEFAULT_RSS_OFFSET,
) -> DistanceModel:
    """Bin samples over [0, 1] and compute per-bin mean and population variance.

    Empty interior bins are filled by linear interpolation between their
    nearest populated neighbors; bins beyond the outermost populated bin clamp
    to that bin's values, so queries are total over [0, 1].
    """
    if not samples:
        raise ValueError("no training samples")
    if not 0.0 < bin_width <= 1.0:
        raise ValueError(f"bin width must be in (0, 1], got {bin_width}")
    n = _bin_count(bin_width)

    sims = np.array([s.similarity for s in samples])
    dists = np.array([s.distance for s in samples])
    if not (np.isfinite(sims).all() and np.isfinite(dists).all()):
        raise ValueError("samples must be finite")
    if (sims < 0).any() or (sims > 1).any():
        raise ValueError("similarities must lie in [0, 1]")
    if (dists < 0).any():
        raise ValueError("distances must be nonnegative")

    idx = np.minimum((sims // bin_width).astype(int), n - 1)
    counts = np.bincount(idx, minlength=n)
    sums = np.bincount(idx, weights=dists, minlength=n)
    means = np.divide(sums, counts, out=np.zeros(n), where=counts > 0)
    # Two-pass variance so identical members yield exactly zero.
    dev = dists - means[idx]
    var_sums = np.bincount(idx, weights=dev * dev, minlength=n)
    variances = np.divide(var_sums, counts, out=np.zeros(n), where=counts > 0)

    populated = np.nonzero(counts > 0)[0]
    bins: list[ModelBin] = []
    for i in range(n):
        lo = i * bin_width
        hi = min((i + 1) * bin_width, 1.0) if i == n - 1 else (i + 1) * bin_width
        if counts[i] > 0:
            bins.append(ModelBin(lo, hi, float(means[i]), float(variances[i]), int(counts[i])))
            continue
        prev = populated[populated < i]
        nxt = populated[populated > i]
        if prev.size and nxt.size:
            p, q = int(prev[-1]), int(nxt[0])
            t = (i - p) / (q - p)
            mean = (1 - t) * means[p] + t * means[q]
            var = (1 - t) * variances[p] + t * variances[q]
        elif prev.size:
            p = int(prev[-1])
            mean, var = means[p], variances[p]
        else:
            q = int(nxt[0])
            mean, var = means[q], variances[q]
        bins.append(ModelBin(lo, hi, float(mean), float(var), 0))

    return DistanceModel(bin_width=bin_width, bins=tuple(bins), rss_offset=rss_offset)
