"""Wifi RSS fingerprints: thresholding and cosine similarity.

A fingerprint maps access-point identifiers (MAC addresses in real data) to
received signal strength in dBm. Similarity is evaluated on non-negative
magnitudes ``max(0, rss - floor)`` so that strong signals dominate and an
access point seen by only one of the two fingerprints contributes nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .pose_graph import Pose2

ApId = str

DEFAULT_FLOOR_DBM = -100.0


@dataclass(frozen=True)
class Fingerprint:
    """One RSS scan: access-point id -> signal strength in dBm."""

    readings: dict

    def __post_init__(self):
        object.__setattr__(self, "readings", dict(self.readings))

    def __len__(self) -> int:
        return len(self.readings)

    def ap_ids(self):
        return set(self.readings)


EMPTY_FINGERPRINT = Fingerprint({})


def threshold_fingerprint(fp: Fingerprint, theta_r: float) -> Fingerprint:
    """Keep only readings with rss >= theta_r (dBm). The input is unmodified."""
    return Fingerprint({ap: rss for ap, rss in fp.readings.items() if rss >= theta_r})


def signal_magnitude(rss: float, floor: float) -> float:
    """Non-negative signal magnitude: rss - floor, clamped at zero."""
    return max(0.0, rss - floor)


def cosine_similarity(a: Fingerprint, b: Fingerprint, floor: float = DEFAULT_FLOOR_DBM) -> float:
    """Cosine similarity of two fingerprints over the union of their AP ids.

    Missing APs contribute magnitude zero; if either vector has zero norm the
    similarity is defined as 0. Evaluation order is fixed by sorting AP ids,
    which makes the result exactly symmetric in the arguments.
    """
    dot = 0.0
    na = 0.0
    nb = 0.0
    for ap in sorted(a.readings.keys() | b.readings.keys()):
        ma = signal_magnitude(a.readings[ap], floor) if ap in a.readings else 0.0
        mb = signal_magnitude(b.readings[ap], floor) if ap in b.readings else 0.0
        dot += ma * mb
        na += ma * ma
        nb += mb * mb
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (math.sqrt(na) * math.sqrt(nb))


def similarity_op_count(a: Fingerprint, b: Fingerprint) -> int:
    """Size of the AP-id union: the per-pair cost of one similarity evaluation."""
    return len(a.readings.keys() | b.readings.keys())


@dataclass(frozen=True)
class StampedFingerprint:
    """A fingerprint with its capture time and the dead-reckoned pose."""

    time: float
    odom_pose: Pose2
    fp: Fingerprint


@dataclass
class TrackLog:
    """Ordered measurements of one user's walk, in that track's odometry frame."""

    track_id: str
    entries: list

    def __post_init__(self):
        if not self.track_id:
            raise ValueError("track_id must be non-empty")
        if len(self.entries) < 2:
            raise ValueError(f"track {self.track_id!r} needs >= 2 entries, got {len(self.entries)}")
        prev = None
        for k, e in enumerate(self.entries):
            if e.time < 0.0:
                raise ValueError(f"track {self.track_id!r} entry {k}: negative time {e.time}")
            if prev is not None and e.time <= prev:
                raise ValueError(
                    f"track {self.track_id!r} entry {k}: time {e.time} not after {prev}"
                )
            prev = e.time

    def __len__(self) -> int:
        return len(self.entries)


def cumulative_path_lengths(entries) -> list:
    """Cumulative odometric travel distance at each entry, starting at 0."""
    cum = [0.0]
    for prev, cur in zip(entries, entries[1:]):
        step = math.hypot(cur.odom_pose.x - prev.odom_pose.x, cur.odom_pose.y - prev.odom_pose.y)
        cum.append(cum[-1] + step)
    return cum
