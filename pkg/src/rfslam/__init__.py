"""Crowd-sensed indoor SLAM from Wifi RSS fingerprints and dead reckoning.

Multiple users' walks, each carrying timestamped RSS scans and dead-reckoned
poses, are merged into one SE(2) pose graph. Fingerprint similarity proposes
loop closures, a self-trained table prices their uncertainty, and a
Levenberg-Marquardt backend recovers drift-corrected trajectories plus a
location-annotated radio map.
"""

__version__ = "0.1.0"

from .fingerprint import (
    DEFAULT_FLOOR_DBM,
    Fingerprint,
    StampedFingerprint,
    TrackLog,
    cosine_similarity,
    cumulative_path_lengths,
    signal_magnitude,
    similarity_op_count,
    threshold_fingerprint,
)
from .loop_closure import (
    LoopCandidate,
    NodeView,
    ScreeningConfig,
    candidate_to_edge,
    find_candidates,
    find_candidates_with_stats,
    screen_candidates,
)
from .pipeline import (
    MergedNode,
    RadioMapEntry,
    SlamConfig,
    SlamResult,
    SlamRunError,
    build_graph,
    error_stats,
    evaluate_rmse,
    merge_tracks,
    run_slam,
)
from .pose_graph import (
    ANCHOR,
    LOOP,
    ODOMETRY,
    Edge,
    GraphStructureError,
    OptimizeOptions,
    Pose2,
    PoseGraph,
    chi2,
    compose,
    edge_error,
    invert,
    linearize,
    optimize,
    relative,
    wrap_angle,
)
from .simulator import (
    AccessPoint,
    Environment,
    NoiseModel,
    ScenarioSpec,
    corrupt_odometry,
    generate_scenario,
    generate_walk,
    sample_rss,
    scenario_from_dict,
)
from .variance_model import (
    TrainingSample,
    VarianceTable,
    collect_training_samples,
    lookup_variance,
    train_variance_table,
)
