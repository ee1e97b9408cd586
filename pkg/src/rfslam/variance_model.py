"""Distance-variance model learned from short-travel fingerprint pairs.

Within a single track, dead reckoning is trusted over short travel distances.
Every within-track pair closer than a travel cap yields a training sample
(similarity, straight-line distance); binning the squared distances by
similarity gives a lookup table that prices the translation uncertainty of a
co-location constraint. The variance is the uncentered second moment because
the constraint asserts zero displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .fingerprint import (
    DEFAULT_FLOOR_DBM,
    cosine_similarity,
    cumulative_path_lengths,
    threshold_fingerprint,
)

TRAINING_DISTANCE_CAP_M = 30.0
VARIANCE_FLOOR_M2 = 0.01

TABLE_FORMAT = "rfslam-variance-table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class TrainingSample:
    """Similarity in [0, 1] paired with planar distance in meters."""

    s: float
    d: float


@dataclass(frozen=True)
class VarianceTable:
    """Binned lookup from similarity to distance variance (m^2).

    Bins partition [0, 1] into ceil(1/bin_size) intervals; similarity 1.0
    falls into the last bin. ``floor_dbm`` and ``rss_threshold_dbm`` record
    the fingerprint parameters the table was trained under.
    """

    bin_size: float
    counts: tuple
    variances: tuple
    floor_dbm: float
    rss_threshold_dbm: float

    def __post_init__(self):
        if not (0.0 < self.bin_size <= 1.0):
            raise ValueError(f"bin_size must be in (0, 1], got {self.bin_size}")
        if len(self.counts) != len(self.variances):
            raise ValueError("counts and variances must have equal length")
        if len(self.counts) != n_bins_for(self.bin_size):
            raise ValueError(
                f"expected {n_bins_for(self.bin_size)} bins for bin_size {self.bin_size}, "
                f"got {len(self.counts)}"
            )
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    def bin_index(self, s: float) -> int:
        return min(int(math.floor(s / self.bin_size)), self.n_bins - 1)

    def to_json_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "bin_size": self.bin_size,
            "floor_dbm": self.floor_dbm,
            "rss_threshold_dbm": self.rss_threshold_dbm,
            "bins": [
                {"count": c, "variance": v} for c, v in zip(self.counts, self.variances)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "VarianceTable":
        if doc.get("format") != TABLE_FORMAT:
            raise ValueError(f"not a variance table document: format={doc.get('format')!r}")
        if doc.get("version") != TABLE_VERSION:
            raise ValueError(f"unsupported variance table version {doc.get('version')!r}")
        bins = doc["bins"]
        return cls(
            bin_size=float(doc["bin_size"]),
            counts=tuple(int(b["count"]) for b in bins),
            variances=tuple(float(b["variance"]) for b in bins),
            floor_dbm=float(doc["floor_dbm"]),
            rss_threshold_dbm=float(doc["rss_threshold_dbm"]),
        )


def n_bins_for(bin_size: float) -> int:
    return int(math.ceil(1.0 / bin_size))


def collect_training_samples(
    tracks,
    d_max: float = TRAINING_DISTANCE_CAP_M,
    floor: float = DEFAULT_FLOOR_DBM,
    theta_r: float = -70.0,
    max_pairs_per_node: int | None = None,
) -> list:
    """Similarity/distance samples from within-track pairs under a travel cap.

    A pair (i, j) qualifies when the cumulative odometric path length between
    the two entries is strictly below ``d_max``; the recorded distance is the
    straight-line one. Pairs never span tracks: odometry is only comparable
    within a track. ``max_pairs_per_node`` optionally caps the window of each
    anchor node for very dense logs.
    """
    if d_max <= 0.0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    samples = []
    for track in tracks:
        fps = [threshold_fingerprint(e.fp, theta_r) for e in track.entries]
        cum = cumulative_path_lengths(track.entries)
        n = len(track.entries)
        for i in range(n):
            taken = 0
            for j in range(i + 1, n):
                if cum[j] - cum[i] >= d_max:
                    break
                if max_pairs_per_node is not None and taken >= max_pairs_per_node:
                    break
                s = cosine_similarity(fps[i], fps[j], floor)
                s = min(max(s, 0.0), 1.0)
                pi = track.entries[i].odom_pose
                pj = track.entries[j].odom_pose
                samples.append(TrainingSample(s, math.hypot(pj.x - pi.x, pj.y - pi.y)))
                taken += 1
    return samples


def train_variance_table(
    samples,
    bin_size: float,
    floor_dbm: float = DEFAULT_FLOOR_DBM,
    rss_threshold_dbm: float = -70.0,
) -> VarianceTable:
    """Bin samples by similarity; each bin's variance is mean(d^2) over it."""
    if not samples:
        raise ValueError("cannot train a variance table from zero samples")
    if not (0.0 < bin_size <= 1.0):
        raise ValueError(f"bin_size must be in (0, 1], got {bin_size}")
    nb = n_bins_for(bin_size)
    counts = [0] * nb
    sums = [0.0] * nb
    for smp in samples:
        k = min(int(math.floor(smp.s / bin_size)), nb - 1)
        counts[k] += 1
        sums[k] += smp.d * smp.d
    variances = [sums[k] / counts[k] if counts[k] else 0.0 for k in range(nb)]
    return VarianceTable(
        bin_size=bin_size,
        counts=tuple(counts),
        variances=tuple(variances),
        floor_dbm=floor_dbm,
        rss_threshold_dbm=rss_threshold_dbm,
    )


def lookup_variance(table: VarianceTable, s: float) -> float:
    """Variance for a similarity value, with pessimistic empty-bin fallback.

    An unpopulated bin defers to the nearest populated bin at lower
    similarity (larger expected distance), then to the nearest populated bin
    overall. The result never drops below ``VARIANCE_FLOOR_M2``.
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"similarity must be in [0, 1], got {s}")
    k = table.bin_index(s)
    if table.counts[k] == 0:
        lower = next((i for i in range(k - 1, -1, -1) if table.counts[i] > 0), None)
        if lower is not None:
            k = lower
        else:
            upper = next(
                (i for i in range(k + 1, table.n_bins) if table.counts[i] > 0), None
            )
            if upper is None:
                raise ValueError("variance table has no populated bins")
            k = upper
    return max(table.variances[k], VARIANCE_FLOOR_M2)
