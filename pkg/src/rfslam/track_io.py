"""File formats: track logs (JSON lines), trajectory/truth CSV, run outputs.

A track log line looks like
``{"t": 5.0, "track_id": "track00", "odom": [x, y, theta], "rss": {"mac": -61.5}}``
with records sorted by t. Parsers reject NaN/Inf and out-of-range headings
with a diagnostic naming the line. All output files are written atomically
(temp file in the target directory, then rename).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from .fingerprint import Fingerprint, StampedFingerprint, TrackLog
from .g2o import dumps as g2o_dumps
from .pipeline import SlamResult
from .pose_graph import Pose2


class TrackLogParseError(ValueError):
    """Malformed track log; the message names the offending line."""


def _reject_constant(name):
    raise TrackLogParseError(f"non-finite JSON constant {name!r} is not allowed")


def _finite(value, what: str, lineno: int) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise TrackLogParseError(f"line {lineno}: {what} is not a number: {value!r}")
    if not math.isfinite(v):
        raise TrackLogParseError(f"line {lineno}: {what} must be finite, got {v}")
    return v


def parse_track_log(data) -> TrackLog:
    """Parse one track's JSONL bytes or text into a validated TrackLog."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TrackLogParseError(f"track log is not valid UTF-8: {exc}")
    else:
        text = data

    entries = []
    track_id = None
    prev_t = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise TrackLogParseError(f"line {lineno}: invalid JSON: {exc.msg}")
        if not isinstance(rec, dict):
            raise TrackLogParseError(f"line {lineno}: expected an object, got {type(rec).__name__}")
        for key in ("t", "track_id", "odom", "rss"):
            if key not in rec:
                raise TrackLogParseError(f"line {lineno}: missing field {key!r}")

        t = _finite(rec["t"], "t", lineno)
        if t < 0.0:
            raise TrackLogParseError(f"line {lineno}: t must be >= 0, got {t}")
        if prev_t is not None and t <= prev_t:
            raise TrackLogParseError(f"line {lineno}: t {t} does not increase past {prev_t}")
        prev_t = t

        tid = rec["track_id"]
        if not isinstance(tid, str) or not tid:
            raise TrackLogParseError(f"line {lineno}: track_id must be a non-empty string")
        if track_id is None:
            track_id = tid
        elif tid != track_id:
            raise TrackLogParseError(
                f"line {lineno}: track_id {tid!r} differs from {track_id!r}"
            )

        odom = rec["odom"]
        if not isinstance(odom, list) or len(odom) != 3:
            raise TrackLogParseError(f"line {lineno}: odom must be [x, y, theta]")
        x = _finite(odom[0], "odom x", lineno)
        y = _finite(odom[1], "odom y", lineno)
        theta = _finite(odom[2], "odom theta", lineno)
        if not (-math.pi < theta <= math.pi):
            raise TrackLogParseError(
                f"line {lineno}: theta must be in (-pi, pi], got {theta}"
            )

        rss = rec["rss"]
        if not isinstance(rss, dict):
            raise TrackLogParseError(f"line {lineno}: rss must be an object")
        readings = {}
        for mac, dbm in rss.items():
            if not isinstance(mac, str) or not mac:
                raise TrackLogParseError(f"line {lineno}: AP id must be a non-empty string")
            readings[mac] = _finite(dbm, f"rss[{mac!r}]", lineno)

        entries.append(
            StampedFingerprint(time=t, odom_pose=Pose2(x, y, theta), fp=Fingerprint(readings))
        )

    if track_id is None:
        raise TrackLogParseError("track log is empty")
    try:
        return TrackLog(track_id=track_id, entries=entries)
    except ValueError as exc:
        raise TrackLogParseError(str(exc))


def serialize_track_log(track: TrackLog) -> str:
    """Canonical JSONL form; parse(serialize(x)) round-trips."""
    lines = []
    for e in track.entries:
        rec = {
            "t": e.time,
            "track_id": track.track_id,
            "odom": [e.odom_pose.x, e.odom_pose.y, e.odom_pose.theta],
            "rss": {ap: e.fp.readings[ap] for ap in sorted(e.fp.readings)},
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_track_logs(log_dir) -> list:
    """Parse every *.jsonl file in a directory, sorted by file name."""
    log_dir = Path(log_dir)
    paths = sorted(log_dir.glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no *.jsonl track logs in {log_dir}")
    tracks = []
    for p in paths:
        try:
            tracks.append(parse_track_log(p.read_bytes()))
        except TrackLogParseError as exc:
            raise TrackLogParseError(f"{p}: {exc}")
    return tracks


def write_truth_csv(path, tracks, truths) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["track_id", "time", "x", "y", "theta"])
    for track, poses in zip(tracks, truths):
        for e, p in zip(track.entries, poses):
            writer.writerow([track.track_id, repr(e.time), repr(p.x), repr(p.y), repr(p.theta)])
    atomic_write_text(path, buf.getvalue())


def read_truth_csv(path) -> dict:
    """track_id -> list of true Pose2, in file order."""
    out: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"track_id", "x", "y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: truth CSV needs columns track_id,x,y")
        for row in reader:
            theta = float(row["theta"]) if "theta" in row and row["theta"] else 0.0
            out.setdefault(row["track_id"], []).append(
                Pose2(float(row["x"]), float(row["y"]), theta)
            )
    return out


def trajectory_csv_text(result: SlamResult, truth=None) -> str:
    """Optimized trajectory; truth_x/truth_y columns appear when truth is given."""
    flat_truth = None
    if truth is not None:
        flat_truth = [p for per_track in truth for p in per_track]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["node_id", "track_id", "time", "x", "y", "theta"]
    if flat_truth is not None:
        header += ["truth_x", "truth_y"]
    writer.writerow(header)
    for entry in result.radio_map:
        row = [
            entry.node_id,
            entry.track_id,
            repr(entry.time),
            repr(entry.pose.x),
            repr(entry.pose.y),
            repr(entry.pose.theta),
        ]
        if flat_truth is not None:
            t = flat_truth[entry.node_id]
            row += [repr(t.x), repr(t.y)]
        writer.writerow(row)
    return buf.getvalue()


def metrics_dict(result: SlamResult) -> dict:
    rep = result.report
    acc = rep.accuracy
    opt = acc["optimized"] if acc else None
    metrics = {
        "rmse": opt["rmse"] if opt else None,
        "rmse_mean": opt["mean"] if opt else None,
        "rmse_std": opt["std"] if opt else None,
        "rmse_median": opt["median"] if opt else None,
        "rmse_max": opt["max"] if opt else None,
        "rmse_raw_odometry": acc["odometry"]["rmse"] if acc else None,
        "per_track": acc["per_track"] if acc else None,
        "n_constraints": rep.n_loop_edges,
        "n_candidates": rep.n_loop_candidates,
        "n_nodes": rep.n_nodes,
        "n_tracks": rep.n_tracks,
        "n_odometry_edges": rep.n_odometry_edges,
        "n_anchor_edges": rep.n_anchor_edges,
        "similarity_ops_total": rep.search_stats.similarity_ops,
        "n_pairs_gated": rep.search_stats.n_pairs_gated,
        "chi2_initial": rep.chi2_initial,
        "chi2_final": rep.chi2_final,
        "lm_iterations": rep.lm_iterations,
        "lm_converged": rep.lm_converged,
    }
    return metrics


def constraints_jsonl_text(result: SlamResult, candidates: bool = False) -> str:
    """Surviving constraints (or raw candidates) as {i, j, s, variance} lines."""
    from .variance_model import lookup_variance

    items = result.candidates if candidates else result.survivors
    lines = []
    for c in items:
        var = lookup_variance(result.table, min(max(c.s, 0.0), 1.0))
        lines.append(json.dumps({"i": c.i, "j": c.j, "s": c.s, "variance": var}, sort_keys=True))
    return ("\n".join(lines) + "\n") if lines else ""


def write_outputs(result: SlamResult, out_dir, truth=None) -> dict:
    """Write all run artifacts; returns {name: path}. Writes are atomic."""
    out_dir = Path(out_dir)
    paths = {
        "trajectory": out_dir / "trajectory.csv",
        "metrics": out_dir / "metrics.json",
        "constraints": out_dir / "constraints.jsonl",
        "candidates": out_dir / "candidates.jsonl",
        "graph": out_dir / "graph.g2o",
        "manifest": out_dir / "manifest.json",
        "variance_table": out_dir / "variance_table.json",
    }
    atomic_write_text(paths["trajectory"], trajectory_csv_text(result, truth))
    atomic_write_text(paths["metrics"], json.dumps(metrics_dict(result), indent=2, sort_keys=True) + "\n")
    atomic_write_text(paths["constraints"], constraints_jsonl_text(result))
    atomic_write_text(paths["candidates"], constraints_jsonl_text(result, candidates=True))
    atomic_write_text(paths["graph"], g2o_dumps(result.graph))
    atomic_write_text(
        paths["manifest"], json.dumps(result.report.manifest, indent=2, sort_keys=True) + "\n"
    )
    atomic_write_text(
        paths["variance_table"],
        json.dumps(result.table.to_json_dict(), indent=2, sort_keys=True) + "\n",
    )
    return {k: str(v) for k, v in paths.items()}
