"""End-to-end two-stage pipeline.

Stage 1 learns the similarity -> distance-variance table from the input logs
(or accepts a pre-trained one). Stage 2 merges the tracks into one global
frame, finds and screens fingerprint loop closures, assembles the pose graph,
optimizes it, and emits the location-annotated radio map.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .fingerprint import (
    DEFAULT_FLOOR_DBM,
    Fingerprint,
    TrackLog,
    cosine_similarity,
    threshold_fingerprint,
)
from .loop_closure import (
    CandidateSearchStats,
    NodeView,
    ScreeningConfig,
    candidate_to_edge,
    find_candidates_with_stats,
    screen_candidates,
)
from .pose_graph import (
    ANCHOR,
    ODOMETRY,
    Edge,
    OptimizeOptions,
    Pose2,
    PoseGraph,
    optimize,
    relative,
    wrap_angle,
)
from .variance_model import (
    TRAINING_DISTANCE_CAP_M,
    VarianceTable,
    collect_training_samples,
    lookup_variance,
    train_variance_table,
)

# Keeps odometry covariances strictly positive when the walker pauses.
MIN_TRANS_STD_M = 1e-3
MIN_ROT_STD_RAD = 1e-4


class SlamRunError(ValueError):
    """A run cannot proceed as configured."""


@dataclass(frozen=True)
class SlamConfig:
    """Every tunable of a run; serializes into the run manifest."""

    rss_threshold_dbm: float = -70.0  # theta_r
    similarity_threshold: float = 0.8  # theta_s
    bin_size: float = 0.1  # b
    min_gap: int = 10  # M, nodes
    window_m: float = 5.0  # theta_w
    floor_dbm: float = DEFAULT_FLOOR_DBM
    gate_distance_m: float = 50.0
    gate_orientation_rad: float = math.pi
    training_distance_cap_m: float = TRAINING_DISTANCE_CAP_M
    max_pairs_per_node: int | None = None
    odom_trans_sigma: float = 0.05  # m per meter traveled
    odom_rot_sigma: float = 0.01  # rad per meter traveled
    lm: OptimizeOptions = field(default_factory=OptimizeOptions)
    seed: int | None = None  # recorded for provenance only; the run itself is deterministic

    def screening(self) -> ScreeningConfig:
        return ScreeningConfig(
            theta_s=self.similarity_threshold,
            min_gap=self.min_gap,
            window_m=self.window_m,
            gate_distance_m=self.gate_distance_m,
            gate_orientation_rad=self.gate_orientation_rad,
        )

    def to_manifest_dict(self) -> dict:
        return {
            "rss_threshold_dbm": self.rss_threshold_dbm,
            "similarity_threshold": self.similarity_threshold,
            "bin_size": self.bin_size,
            "min_gap": self.min_gap,
            "window_m": self.window_m,
            "floor_dbm": self.floor_dbm,
            "gate_distance_m": self.gate_distance_m,
            "gate_orientation_rad": self.gate_orientation_rad,
            "training_distance_cap_m": self.training_distance_cap_m,
            "max_pairs_per_node": self.max_pairs_per_node,
            "odom_trans_sigma": self.odom_trans_sigma,
            "odom_rot_sigma": self.odom_rot_sigma,
            "lm": {
                "max_iters": self.lm.max_iters,
                "lambda_init": self.lm.lambda_init,
                "lambda_scale": self.lm.lambda_scale,
                "convergence_tol": self.lm.convergence_tol,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_manifest_dict(cls, doc: dict) -> "SlamConfig":
        lm = doc.get("lm", {})
        return cls(
            rss_threshold_dbm=float(doc["rss_threshold_dbm"]),
            similarity_threshold=float(doc["similarity_threshold"]),
            bin_size=float(doc["bin_size"]),
            min_gap=int(doc["min_gap"]),
            window_m=float(doc["window_m"]),
            floor_dbm=float(doc["floor_dbm"]),
            gate_distance_m=float(doc["gate_distance_m"]),
            gate_orientation_rad=float(doc["gate_orientation_rad"]),
            training_distance_cap_m=float(doc["training_distance_cap_m"]),
            max_pairs_per_node=(
                None if doc.get("max_pairs_per_node") is None else int(doc["max_pairs_per_node"])
            ),
            odom_trans_sigma=float(doc["odom_trans_sigma"]),
            odom_rot_sigma=float(doc["odom_rot_sigma"]),
            lm=OptimizeOptions(
                max_iters=int(lm.get("max_iters", 100)),
                lambda_init=float(lm.get("lambda_init", 1e-4)),
                lambda_scale=float(lm.get("lambda_scale", 10.0)),
                convergence_tol=float(lm.get("convergence_tol", 1e-6)),
            ),
            seed=None if doc.get("seed") is None else int(doc["seed"]),
        )


@dataclass(frozen=True)
class MergedNode:
    """One measurement with its global id and merged-frame initial pose."""

    node_id: int
    track_id: str
    time: float
    local_odom: Pose2
    merged_pose: Pose2
    fp: Fingerprint


@dataclass(frozen=True)
class RadioMapEntry:
    node_id: int
    track_id: str
    time: float
    pose: Pose2  # optimized, merged global frame
    fp: Fingerprint  # original (un-thresholded) readings


def merge_tracks(
    tracks,
    table: VarianceTable | None = None,
    floor: float = DEFAULT_FLOOR_DBM,
    rss_threshold_dbm: float = -70.0,
):
    """Assign track-major global node ids and link tracks at their starts.

    All tracks are assumed to begin at the same physical location: each later
    track is translated so its first position coincides with node 0, keeping
    its own headings. For every track after the first an anchor edge ties its
    first node to node 0 with zero translation, the observed heading
    difference as rotation, translation covariance priced by the variance
    table on the two start fingerprints' similarity, and a large
    (uninformative) orientation covariance.
    """
    if not tracks:
        raise SlamRunError("no tracks to merge")
    if len(tracks) > 1 and table is None:
        raise SlamRunError("merging multiple tracks requires a trained variance table")

    origin = tracks[0].entries[0].odom_pose
    nodes = []
    anchors = []
    node_id = 0
    first_fp0 = threshold_fingerprint(tracks[0].entries[0].fp, rss_threshold_dbm)
    for k, track in enumerate(tracks):
        start = track.entries[0].odom_pose
        shift_x = origin.x - start.x
        shift_y = origin.y - start.y
        first_id = node_id
        for e in track.entries:
            merged = Pose2(e.odom_pose.x + shift_x, e.odom_pose.y + shift_y, e.odom_pose.theta)
            nodes.append(
                MergedNode(
                    node_id=node_id,
                    track_id=track.track_id,
                    time=e.time,
                    local_odom=e.odom_pose,
                    merged_pose=merged,
                    fp=e.fp,
                )
            )
            node_id += 1
        if k > 0:
            s = cosine_similarity(
                first_fp0, threshold_fingerprint(track.entries[0].fp, rss_threshold_dbm), floor
            )
            var = lookup_variance(table, min(max(s, 0.0), 1.0))
            anchors.append(
                Edge(
                    i=0,
                    j=first_id,
                    kind=ANCHOR,
                    z=Pose2(0.0, 0.0, wrap_angle(start.theta - origin.theta)),
                    cov=(var, var, 1000.0),
                )
            )
    return nodes, anchors


def build_graph(
    nodes,
    anchors,
    loop_edges,
    odom_trans_sigma: float = 0.05,
    odom_rot_sigma: float = 0.01,
) -> PoseGraph:
    """Pose graph over the merged node table; node 0 fixed as the gauge.

    Consecutive same-track nodes are chained by odometry edges whose relative
    measurement comes from the recorded odometry and whose covariance scales
    with the step length through the per-meter motion-noise model.
    """
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        if a.track_id != b.track_id:
            continue
        z = relative(a.local_odom, b.local_odom)
        step = math.hypot(z.x, z.y)
        std_t = max(odom_trans_sigma * step, MIN_TRANS_STD_M)
        std_r = max(odom_rot_sigma * step, MIN_ROT_STD_RAD)
        edges.append(
            Edge(
                i=a.node_id,
                j=b.node_id,
                kind=ODOMETRY,
                z=z,
                cov=(std_t * std_t, std_t * std_t, std_r * std_r),
            )
        )
    edges.extend(anchors)
    edges.extend(loop_edges)
    return PoseGraph(
        nodes=[n.merged_pose for n in nodes],
        edges=edges,
        fixed={0},
    )


def evaluate_rmse(estimated, truth) -> float:
    """Root-mean-square planar distance between index-aligned pose lists."""
    if len(estimated) != len(truth):
        raise ValueError(f"length mismatch: {len(estimated)} estimates vs {len(truth)} truths")
    if not estimated:
        raise ValueError("cannot evaluate an empty trajectory")
    sq = [
        (e.x - t.x) ** 2 + (e.y - t.y) ** 2
        for e, t in zip(estimated, truth)
    ]
    return math.sqrt(sum(sq) / len(sq))


def error_stats(estimated, truth) -> dict:
    """Distribution of per-node planar errors plus their RMSE."""
    if len(estimated) != len(truth):
        raise ValueError(f"length mismatch: {len(estimated)} estimates vs {len(truth)} truths")
    d = np.array(
        [math.hypot(e.x - t.x, e.y - t.y) for e, t in zip(estimated, truth)]
    )
    return {
        "rmse": float(np.sqrt(np.mean(d * d))),
        "mean": float(np.mean(d)),
        "std": float(np.std(d)),
        "median": float(np.median(d)),
        "max": float(np.max(d)),
    }


@dataclass
class SlamReport:
    n_tracks: int
    n_nodes: int
    n_odometry_edges: int
    n_anchor_edges: int
    n_loop_candidates: int
    n_loop_edges: int
    search_stats: CandidateSearchStats
    chi2_sequence: list
    lm_iterations: int
    lm_converged: bool
    accuracy: dict | None  # error stats for optimized and raw odometry, when truth given
    manifest: dict

    @property
    def chi2_initial(self) -> float:
        return self.chi2_sequence[0]

    @property
    def chi2_final(self) -> float:
        return self.chi2_sequence[-1]


@dataclass
class SlamResult:
    radio_map: list
    nodes: list  # MergedNode table (initial merged poses)
    graph: PoseGraph  # optimized
    table: VarianceTable
    candidates: list
    survivors: list
    loop_edges: list
    report: SlamReport


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_manifest(config: SlamConfig, input_digests: dict | None = None) -> dict:
    return {
        "tool": "rfslam",
        "version": __version__,
        "config": config.to_manifest_dict(),
        "inputs": dict(sorted((input_digests or {}).items())),
    }


def config_from_manifest(doc: dict) -> SlamConfig:
    return SlamConfig.from_manifest_dict(doc["config"])


def run_slam(
    tracks,
    config: SlamConfig = SlamConfig(),
    truth=None,
    table: VarianceTable | None = None,
    input_digests: dict | None = None,
) -> SlamResult:
    """Full pipeline over parsed track logs.

    ``truth`` (optional) gives per-track lists of true poses aligned with the
    track entries; accuracy statistics are reported jointly and per track.
    ``table`` supplies a pre-trained variance model; by default the model is
    trained on the very logs being mapped.
    """
    if not tracks:
        raise SlamRunError("no input tracks")
    if truth is not None:
        if len(truth) != len(tracks):
            raise SlamRunError(f"truth covers {len(truth)} tracks, inputs have {len(tracks)}")
        for tr, tt in zip(tracks, truth):
            if len(tt) != len(tr.entries):
                raise SlamRunError(
                    f"truth for {tr.track_id!r} has {len(tt)} poses, track has {len(tr.entries)}"
                )

    if table is None:
        samples = collect_training_samples(
            tracks,
            d_max=config.training_distance_cap_m,
            floor=config.floor_dbm,
            theta_r=config.rss_threshold_dbm,
            max_pairs_per_node=config.max_pairs_per_node,
        )
        if not samples:
            raise SlamRunError(
                "no training samples: tracks are too short for the travel cap "
                f"({config.training_distance_cap_m} m)"
            )
        table = train_variance_table(
            samples,
            config.bin_size,
            floor_dbm=config.floor_dbm,
            rss_threshold_dbm=config.rss_threshold_dbm,
        )

    nodes, anchors = merge_tracks(
        tracks, table, floor=config.floor_dbm, rss_threshold_dbm=config.rss_threshold_dbm
    )
    views = [
        NodeView(
            node_id=n.node_id,
            track_id=n.track_id,
            pose=n.merged_pose,
            fp=threshold_fingerprint(n.fp, config.rss_threshold_dbm),
        )
        for n in nodes
    ]
    screening = config.screening()
    candidates, stats = find_candidates_with_stats(views, screening, config.floor_dbm)
    survivors = screen_candidates(candidates, views, screening)
    loop_edges = [candidate_to_edge(c, table) for c in survivors]
    if len(tracks) > 1 and not loop_edges:
        raise SlamRunError(
            "no loop constraints survived screening while merging multiple tracks; "
            "the merged graph would be unconstrained. Lower the similarity threshold "
            "or record overlapping walks."
        )

    graph = build_graph(
        nodes,
        anchors,
        loop_edges,
        odom_trans_sigma=config.odom_trans_sigma,
        odom_rot_sigma=config.odom_rot_sigma,
    )
    optimized, opt_report = optimize(graph, config.lm)

    radio_map = [
        RadioMapEntry(
            node_id=n.node_id,
            track_id=n.track_id,
            time=n.time,
            pose=optimized.nodes[n.node_id],
            fp=n.fp,
        )
        for n in nodes
    ]

    accuracy = None
    if truth is not None:
        flat_truth = [p for per_track in truth for p in per_track]
        est = [optimized.nodes[n.node_id] for n in nodes]
        raw = [n.merged_pose for n in nodes]
        per_track = {}
        offset = 0
        for tr, tt in zip(tracks, truth):
            seg = slice(offset, offset + len(tt))
            per_track[tr.track_id] = {
                "optimized": error_stats(est[seg], tt),
                "odometry": error_stats(raw[seg], tt),
            }
            offset += len(tt)
        accuracy = {
            "optimized": error_stats(est, flat_truth),
            "odometry": error_stats(raw, flat_truth),
            "per_track": per_track,
        }

    report = SlamReport(
        n_tracks=len(tracks),
        n_nodes=len(nodes),
        n_odometry_edges=sum(1 for e in graph.edges if e.kind == ODOMETRY),
        n_anchor_edges=len(anchors),
        n_loop_candidates=len(candidates),
        n_loop_edges=len(loop_edges),
        search_stats=stats,
        chi2_sequence=list(opt_report.chi2_sequence),
        lm_iterations=opt_report.iterations,
        lm_converged=opt_report.converged,
        accuracy=accuracy,
        manifest=build_manifest(config, input_digests),
    )
    return SlamResult(
        radio_map=radio_map,
        nodes=nodes,
        graph=optimized,
        table=table,
        candidates=candidates,
        survivors=survivors,
        loop_edges=loop_edges,
        report=report,
    )
