"""Loop-closure detection from fingerprint similarity, with screening.

Candidates are node pairs (within or across tracks) that pass a geometric
gate on the current pose estimates and whose fingerprint similarity reaches a
threshold. Screening removes pairs that are trivially close along one track
and deduplicates candidates that target nearly the same stretch of a track.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fingerprint import DEFAULT_FLOOR_DBM, Fingerprint, signal_magnitude
from .pose_graph import LOOP, Edge, Pose2, wrap_angles
from .variance_model import VarianceTable, lookup_variance

# Co-location constraints carry no heading information.
ORIENTATION_COVARIANCE = 1000.0


@dataclass(frozen=True)
class LoopCandidate:
    """Node pair (i < j under the global ordering) with its similarity."""

    i: int
    j: int
    s: float

    def __post_init__(self):
        if self.i >= self.j:
            raise ValueError(f"candidate requires i < j, got ({self.i}, {self.j})")


@dataclass(frozen=True)
class ScreeningConfig:
    """Thresholds for candidate finding and screening.

    theta_s: similarity threshold for a candidate.
    min_gap: minimum same-track index separation (rule 1).
    window_m: same-track path window for duplicate suppression (rule 2).
    gate_distance_m / gate_orientation_rad: geometric gate on the current
    pose estimates before any similarity is evaluated.
    """

    theta_s: float = 0.8
    min_gap: int = 10
    window_m: float = 5.0
    gate_distance_m: float = 50.0
    gate_orientation_rad: float = math.pi

    def __post_init__(self):
        if not (0.0 < self.theta_s <= 1.0):
            raise ValueError(f"theta_s must be in (0, 1], got {self.theta_s}")
        if self.min_gap < 1:
            raise ValueError(f"min_gap must be >= 1, got {self.min_gap}")
        if self.window_m < 0.0:
            raise ValueError(f"window_m must be >= 0, got {self.window_m}")
        if self.gate_distance_m < 0.0 or self.gate_orientation_rad < 0.0:
            raise ValueError("geometric gates must be >= 0")


@dataclass(frozen=True)
class NodeView:
    """What candidate search needs to know about one graph node."""

    node_id: int
    track_id: str
    pose: Pose2
    fp: Fingerprint  # already thresholded


@dataclass(frozen=True)
class CandidateSearchStats:
    """Bookkeeping from one all-pairs search."""

    n_pairs: int
    n_pairs_gated: int
    similarity_ops: int


def _magnitude_and_presence(nodes, floor):
    ap_ids = sorted(set().union(*(set(nv.fp.readings) for nv in nodes)) if nodes else set())
    index = {ap: k for k, ap in enumerate(ap_ids)}
    mags = np.zeros((len(nodes), len(ap_ids)))
    present = np.zeros((len(nodes), len(ap_ids)), dtype=bool)
    for r, nv in enumerate(nodes):
        for ap, rss in nv.fp.readings.items():
            c = index[ap]
            mags[r, c] = signal_magnitude(rss, floor)
            present[r, c] = True
    return mags, present


def similarity_matrix(nodes, floor: float = DEFAULT_FLOOR_DBM) -> np.ndarray:
    """All-pairs cosine similarity over a shared AP index.

    Algebraically identical to the per-pair union evaluation: an AP absent
    from a fingerprint contributes zero to both the dot product and that
    fingerprint's norm.
    """
    mags, _ = _magnitude_and_presence(nodes, floor)
    norms = np.sqrt(np.sum(mags * mags, axis=1))
    gram = mags @ mags.T
    denom = np.outer(norms, norms)
    sim = np.zeros_like(gram)
    np.divide(gram, denom, out=sim, where=denom > 0.0)
    return sim


def find_candidates_with_stats(nodes, cfg: ScreeningConfig, floor: float = DEFAULT_FLOOR_DBM):
    """All-pairs candidate search plus instrumentation.

    Similarity is evaluated only for pairs passing the geometric gate;
    ``similarity_ops`` totals the AP-union sizes of exactly those pairs.
    Output is sorted by (i, j).
    """
    n = len(nodes)
    ids = [nv.node_id for nv in nodes]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise ValueError("node ids must be strictly increasing (track-major order)")
    if n < 2:
        return [], CandidateSearchStats(0, 0, 0)

    pos = np.array([[nv.pose.x, nv.pose.y] for nv in nodes])
    th = np.array([nv.pose.theta for nv in nodes])
    dx = pos[:, 0][:, None] - pos[:, 0][None, :]
    dy = pos[:, 1][:, None] - pos[:, 1][None, :]
    d2 = dx * dx + dy * dy
    dth = np.abs(wrap_angles(th[:, None] - th[None, :]))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    gated = upper & (d2 <= cfg.gate_distance_m**2) & (dth <= cfg.gate_orientation_rad)

    mags, present = _magnitude_and_presence(nodes, floor)
    norms = np.sqrt(np.sum(mags * mags, axis=1))
    gram = mags @ mags.T
    denom = np.outer(norms, norms)
    sim = np.zeros_like(gram)
    np.divide(gram, denom, out=sim, where=denom > 0.0)

    nnz = present.sum(axis=1).astype(np.int64)
    inter = present.astype(np.int64) @ present.astype(np.int64).T
    union = nnz[:, None] + nnz[None, :] - inter
    ops = int(union[gated].sum())

    mask = gated & (sim >= cfg.theta_s)
    rows, cols = np.nonzero(mask)
    cands = [LoopCandidate(ids[a], ids[b], float(sim[a, b])) for a, b in zip(rows, cols)]
    stats = CandidateSearchStats(
        n_pairs=n * (n - 1) // 2,
        n_pairs_gated=int(gated.sum()),
        similarity_ops=ops,
    )
    return cands, stats


def find_candidates(nodes, cfg: ScreeningConfig, floor: float = DEFAULT_FLOOR_DBM):
    """Loop-closure candidates: gated pairs with similarity >= theta_s."""
    return find_candidates_with_stats(nodes, cfg, floor)[0]


def _track_path_positions(nodes):
    """Per node: (track_id, cumulative path position within its track)."""
    info = {}
    prev_track = None
    prev_pos = None
    cum = 0.0
    for nv in nodes:
        if nv.track_id != prev_track:
            cum = 0.0
            prev_track = nv.track_id
        else:
            cum += math.hypot(nv.pose.x - prev_pos.x, nv.pose.y - prev_pos.y)
        prev_pos = nv.pose
        info[nv.node_id] = (nv.track_id, cum)
    return info


def screen_candidates(cands, nodes, cfg: ScreeningConfig):
    """Two-rule screening of loop candidates; deterministic.

    Rule 1 drops same-track candidates whose index gap is below ``min_gap``
    (the walker has not actually left). Rule 2 then looks at candidates that
    share the anchor node i and whose targets lie within ``window_m`` path
    meters of each other on one track: only the highest-similarity one
    survives, ties broken toward the smaller target id. Removal is evaluated
    against the full post-rule-1 set, so the outcome is order-independent.
    """
    cands = sorted(cands, key=lambda c: (c.i, c.j))
    info = _track_path_positions(nodes)

    kept = []
    for c in cands:
        track_i, _ = info[c.i]
        track_j, _ = info[c.j]
        if track_i == track_j and (c.j - c.i) < cfg.min_gap:
            continue
        kept.append(c)

    by_anchor = {}
    for c in kept:
        by_anchor.setdefault(c.i, []).append(c)

    survivors = []
    for c in kept:
        track_j, pos_j = info[c.j]
        beaten = False
        for other in by_anchor[c.i]:
            if other is c:
                continue
            track_k, pos_k = info[other.j]
            if track_k != track_j or abs(pos_k - pos_j) > cfg.window_m:
                continue
            if other.s > c.s or (other.s == c.s and other.j < c.j):
                beaten = True
                break
        if not beaten:
            survivors.append(c)
    return survivors


def candidate_to_edge(c: LoopCandidate, table: VarianceTable) -> Edge:
    """Zero-displacement loop edge with table-priced translation covariance."""
    var = lookup_variance(table, c.s)
    return Edge(
        i=c.i,
        j=c.j,
        kind=LOOP,
        z=Pose2(0.0, 0.0, 0.0),
        cov=(var, var, ORIENTATION_COVARIANCE),
    )
