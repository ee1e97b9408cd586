"""Synthetic scenario generator with per-node ground truth.

Manufactures test data only: walks over a rectangular environment sampled at
a fixed period, odometry corrupted by per-meter Gaussian noise, and RSS drawn
from a log-distance path-loss model. None of this enters the SLAM algorithms,
which stay propagation-model-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fingerprint import Fingerprint, StampedFingerprint, TrackLog
from .pose_graph import Pose2, compose, relative, wrap_angle

MIN_RSS_DBM = -100.0  # readings below this are not reported
MIN_PATH_LOSS_DISTANCE_M = 0.1


@dataclass(frozen=True)
class AccessPoint:
    ap_id: str
    x: float
    y: float
    tx_power_dbm: float


@dataclass(frozen=True)
class Environment:
    """Rectangular floor with fixed access points."""

    width: float
    height: float
    aps: tuple

    def __post_init__(self):
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("environment must have positive extent")
        ids = [ap.ap_id for ap in self.aps]
        if len(set(ids)) != len(ids):
            raise ValueError("AP ids must be unique")
        for ap in self.aps:
            if not (0.0 <= ap.x <= self.width and 0.0 <= ap.y <= self.height):
                raise ValueError(f"AP {ap.ap_id} at ({ap.x}, {ap.y}) is out of bounds")
        object.__setattr__(self, "aps", tuple(self.aps))

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


@dataclass(frozen=True)
class NoiseModel:
    """Measurement and odometry noise. Sigmas of zero give exact data."""

    rss_sigma: float = 4.0  # dB
    odom_trans_sigma: float = 0.05  # m per meter traveled
    odom_rot_sigma: float = 0.01  # rad per meter traveled
    path_loss_exponent: float = 2.5
    detection_range: float = 50.0  # m
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.rss_sigma, self.odom_trans_sigma, self.odom_rot_sigma) < 0.0:
            raise ValueError("noise sigmas must be >= 0")
        if self.detection_range <= 0.0:
            raise ValueError("detection_range must be positive")


def random_environment(
    width: float, height: float, n_aps: int, tx_power_dbm: float, rng: np.random.Generator
) -> Environment:
    """Uniformly placed APs with synthetic ids ap000, ap001, ..."""
    aps = []
    for k in range(n_aps):
        x = float(rng.uniform(0.0, width))
        y = float(rng.uniform(0.0, height))
        aps.append(AccessPoint(f"ap{k:03d}", x, y, tx_power_dbm))
    return Environment(width=width, height=height, aps=tuple(aps))


def sample_rss(
    env: Environment, pose: Pose2, noise: NoiseModel, rng: np.random.Generator | None = None
) -> Fingerprint:
    """One RSS scan at a pose under log-distance path loss.

    Each AP within detection range reports
    ``tx_power - 10 n log10(max(d, 0.1)) + N(0, rss_sigma)``; readings below
    -100 dBm are dropped. Deterministic for a given rng state and call order.
    """
    if not env.contains(pose.x, pose.y):
        raise ValueError(f"pose ({pose.x}, {pose.y}) is outside the environment")
    if rng is None:
        rng = np.random.default_rng(noise.rng_seed)
    readings = {}
    for ap in env.aps:
        d = math.hypot(ap.x - pose.x, ap.y - pose.y)
        if d > noise.detection_range:
            continue
        rss = ap.tx_power_dbm - 10.0 * noise.path_loss_exponent * math.log10(
            max(d, MIN_PATH_LOSS_DISTANCE_M)
        )
        rss += float(rng.normal(0.0, noise.rss_sigma))
        if rss < MIN_RSS_DBM:
            continue
        readings[ap.ap_id] = rss
    return Fingerprint(readings)


def generate_walk(
    env: Environment,
    waypoints,
    speed: float = 1.4,
    sample_period: float = 5.0,
):
    """Piecewise-linear walk sampled every ``speed * sample_period`` meters.

    Returns a list of (true Pose2, time) with the heading following the
    segment direction. Raises on out-of-bounds or degenerate waypoints.
    """
    if len(waypoints) < 2:
        raise ValueError("a walk needs at least two waypoints")
    if speed <= 0.0 or sample_period <= 0.0:
        raise ValueError("speed and sample_period must be positive")
    pts = [(float(x), float(y)) for x, y in waypoints]
    for x, y in pts:
        if not env.contains(x, y):
            raise ValueError(f"waypoint ({x}, {y}) is outside the environment")

    seg_len = []
    seg_dir = []
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        length = math.hypot(x1 - x0, y1 - y0)
        if length == 0.0:
            raise ValueError("repeated waypoint makes a zero-length segment")
        seg_len.append(length)
        seg_dir.append(math.atan2(y1 - y0, x1 - x0))
    cum = [0.0]
    for length in seg_len:
        cum.append(cum[-1] + length)
    total = cum[-1]

    step = speed * sample_period
    n_samples = int(math.floor(total / step + 1e-9)) + 1
    out = []
    seg = 0
    for k in range(n_samples):
        arc = min(k * step, total)
        while seg < len(seg_len) - 1 and arc >= cum[seg + 1]:
            seg += 1
        t = (arc - cum[seg]) / seg_len[seg]
        x0, y0 = pts[seg]
        x1, y1 = pts[seg + 1]
        pose = Pose2(x0 + t * (x1 - x0), y0 + t * (y1 - y0), seg_dir[seg])
        out.append((pose, k * sample_period))
    return out


def corrupt_odometry(
    true_poses, noise: NoiseModel, rng: np.random.Generator | None = None
):
    """Integrate true relative motions with per-meter Gaussian noise.

    The first pose is preserved; drift accumulates with distance. With both
    odometry sigmas zero the truth is returned unchanged.
    """
    if not true_poses:
        raise ValueError("need at least one pose")
    if noise.odom_trans_sigma == 0.0 and noise.odom_rot_sigma == 0.0:
        return list(true_poses)
    if rng is None:
        rng = np.random.default_rng(noise.rng_seed)
    out = [true_poses[0]]
    for prev, cur in zip(true_poses, true_poses[1:]):
        rel = relative(prev, cur)
        step = math.hypot(rel.x, rel.y)
        noisy = Pose2(
            rel.x + float(rng.normal(0.0, noise.odom_trans_sigma * step)),
            rel.y + float(rng.normal(0.0, noise.odom_trans_sigma * step)),
            wrap_angle(rel.theta + float(rng.normal(0.0, noise.odom_rot_sigma * step))),
        )
        out.append(compose(out[-1], noisy))
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to manufacture one multi-track dataset."""

    env: Environment
    tracks: tuple  # per track: tuple of (x, y) waypoints
    noise: NoiseModel
    speed: float = 1.4
    sample_period: float = 5.0
    name: str = "scenario"

    def __post_init__(self):
        if not self.tracks:
            raise ValueError("scenario needs at least one track")
        tracks = tuple(tuple((float(x), float(y)) for x, y in wp) for wp in self.tracks)
        starts = {wp[0] for wp in tracks}
        if len(starts) != 1:
            raise ValueError("all tracks must start at the same waypoint")
        object.__setattr__(self, "tracks", tracks)


def generate_scenario(spec: ScenarioSpec):
    """Per track: walk -> corrupted odometry -> RSS per true pose.

    Returns (track logs, truths) where ``truths[k][i]`` is the true Pose2 of
    entry i in track k. Byte-for-byte deterministic under the noise seed.
    """
    rng = np.random.default_rng(spec.noise.rng_seed)
    logs = []
    truths = []
    for k, waypoints in enumerate(spec.tracks):
        walk = generate_walk(spec.env, waypoints, spec.speed, spec.sample_period)
        true_poses = [p for p, _ in walk]
        times = [t for _, t in walk]
        odom = corrupt_odometry(true_poses, spec.noise, rng)
        entries = [
            StampedFingerprint(time=t, odom_pose=o, fp=sample_rss(spec.env, p, spec.noise, rng))
            for t, o, p in zip(times, odom, true_poses)
        ]
        logs.append(TrackLog(track_id=f"track{k:02d}", entries=entries))
        truths.append(true_poses)
    return logs, truths


def scenario_from_dict(doc: dict, seed: int | None = None) -> ScenarioSpec:
    """Build a ScenarioSpec from its JSON document form.

    The environment is either explicit (``aps`` list) or randomly populated
    (``n_aps`` + ``tx_power_dbm``) under the scenario seed. ``seed`` overrides
    the document's noise seed.
    """
    noise_doc = dict(doc.get("noise", {}))
    if seed is not None:
        noise_doc["rng_seed"] = int(seed)
    noise = NoiseModel(**noise_doc)

    env_doc = doc["env"]
    width = float(env_doc["width"])
    height = float(env_doc["height"])
    if "aps" in env_doc:
        aps = tuple(
            AccessPoint(str(a["id"]), float(a["x"]), float(a["y"]), float(a["tx_power_dbm"]))
            for a in env_doc["aps"]
        )
        env = Environment(width=width, height=height, aps=aps)
    else:
        env = random_environment(
            width,
            height,
            int(env_doc["n_aps"]),
            float(env_doc["tx_power_dbm"]),
            np.random.default_rng(noise.rng_seed),
        )
    return ScenarioSpec(
        env=env,
        tracks=tuple(tuple((p[0], p[1]) for p in wp) for wp in doc["tracks"]),
        noise=noise,
        speed=float(doc.get("speed", 1.4)),
        sample_period=float(doc.get("sample_period", 5.0)),
        name=str(doc.get("name", "scenario")),
    )
