"""Radio fingerprints and their cosine similarity.

A fingerprint is the set of received-signal-strength readings observed in one
scan window, keyed by transmitter id. Raw dBm values are shifted into a
nonnegative range (clamped at zero) before entering the similarity, so that
strong signals carry the most weight. The numerator of the similarity runs
over the transmitters common to both fingerprints while each denominator norm
runs over all of that fingerprint's readings: disjoint hardware scores 0 and
a strict subset scores below 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

__all__ = [
    "Fingerprint",
    "StampedFingerprint",
    "PreparedFingerprint",
    "shift_rss",
    "prepare",
    "similarity_of_prepared",
    "cosine_similarity",
]

DEFAULT_RSS_OFFSET = 100.0


@dataclass(frozen=True)
class Fingerprint:
    """RSS readings (transmitter id -> dBm) captured at one timestamp."""

    timestamp: float
    readings: Mapping[str, float]


@dataclass(frozen=True)
class StampedFingerprint:
    """A fingerprint bound to a trajectory node by index."""

    fingerprint: Fingerprint
    pose_index: int


def shift_rss(raw: float, offset: float) -> float:
    """Shift a dBm value into a nonnegative working range, clamping at zero."""
    if offset < 0:
        raise ValueError(f"offset must be nonnegative, got {offset}")
    return max(raw + offset, 0.0)


@dataclass(frozen=True)
class PreparedFingerprint:
    """Shifted readings plus their L2 norm, precomputed for bulk comparisons."""

    shifted: Mapping[str, float]
    norm: float


def prepare(fp: Fingerprint, offset: float) -> PreparedFingerprint:
    """Shift a fingerprint's readings and precompute the denominator norm.

    Raises ValueError for an empty fingerprint or one whose shifted readings
    are all zero (the similarity denominator would vanish).
    """
    if not fp.readings:
        raise ValueError("fingerprint has no readings")
    shifted = {k: shift_rss(v, offset) for k, v in fp.readings.items()}
    norm = math.sqrt(sum(v * v for v in shifted.values()))
    if norm == 0.0:
        raise ValueError("all shifted readings are zero (zero norm)")
    return PreparedFingerprint(shifted, norm)


def similarity_of_prepared(a: PreparedFingerprint, b: PreparedFingerprint) -> float:
    """Cosine similarity of two prepared fingerprints, exactly symmetric."""
    common = sorted(a.shifted.keys() & b.shifted.keys())
    if not common:
        return 0.0
    num = 0.0
    for key in common:
        num += a.shifted[key] * b.shifted[key]
    # Clamp rounding excursions so downstream bin lookups stay in [0, 1].
    return min(max(num / (a.norm * b.norm), 0.0), 1.0)


def cosine_similarity(fi: Fingerprint, fj: Fingerprint, offset: float = DEFAULT_RSS_OFFSET) -> float:
    """Similarity in [0, 1] between two fingerprints after RSS shifting."""
    return similarity_of_prepared(prepare(fi, offset), prepare(fj, offset))
