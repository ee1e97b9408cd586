"""Command-line interface: simulate, train, slam, eval.

Exit codes: 0 success, 1 validation error (bad inputs/parameters), 2 I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .pipeline import (
    SlamConfig,
    SlamRunError,
    build_manifest,
    digest_bytes,
    error_stats,
    run_slam,
)
from .pose_graph import OptimizeOptions, Pose2
from .simulator import generate_scenario, scenario_from_dict
from .track_io import (
    TrackLogParseError,
    atomic_write_text,
    load_track_logs,
    read_truth_csv,
    serialize_track_log,
    write_outputs,
    write_truth_csv,
)
from .variance_model import (
    TRAINING_DISTANCE_CAP_M,
    VarianceTable,
    collect_training_samples,
    train_variance_table,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfslam",
        description="Crowd-sensed Wifi-fingerprint SLAM over dead-reckoned tracks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate synthetic track logs with ground truth")
    p_sim.add_argument("--spec", required=True, help="scenario JSON document")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_sim.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="learn the similarity->variance table from logs")
    p_train.add_argument("--logs", required=True, help="directory of *.jsonl track logs")
    p_train.add_argument("--bin-size", type=float, default=0.1)
    p_train.add_argument("--rss-threshold", type=float, default=-70.0)
    p_train.add_argument("--floor", type=float, default=-100.0)
    p_train.add_argument("--distance-cap", type=float, default=TRAINING_DISTANCE_CAP_M)
    p_train.add_argument("--max-pairs-per-node", type=int, default=None)
    p_train.add_argument("--out", required=True, help="output table JSON path")

    p_slam = sub.add_parser("slam", help="merge tracks, close loops, optimize, emit radio map")
    p_slam.add_argument("--logs", required=True, help="directory of *.jsonl track logs")
    p_slam.add_argument("--table", default=None, help="pre-trained variance table JSON")
    p_slam.add_argument("--sim-threshold", type=float, default=0.8)
    p_slam.add_argument("--min-gap", type=int, default=10)
    p_slam.add_argument("--window", type=float, default=5.0)
    p_slam.add_argument("--rss-threshold", type=float, default=-70.0)
    p_slam.add_argument("--bin-size", type=float, default=0.1)
    p_slam.add_argument("--floor", type=float, default=-100.0)
    p_slam.add_argument("--gate-distance", type=float, default=50.0)
    p_slam.add_argument("--gate-orientation", type=float, default=math.pi)
    p_slam.add_argument("--max-pairs-per-node", type=int, default=None)
    p_slam.add_argument("--odom-trans-sigma", type=float, default=0.05)
    p_slam.add_argument("--odom-rot-sigma", type=float, default=0.01)
    p_slam.add_argument("--lm-max-iters", type=int, default=100)
    p_slam.add_argument("--lm-lambda-init", type=float, default=1e-4)
    p_slam.add_argument("--lm-lambda-scale", type=float, default=10.0)
    p_slam.add_argument("--lm-tol", type=float, default=1e-6)
    p_slam.add_argument("--seed", type=int, default=None, help="recorded in the manifest")
    p_slam.add_argument("--truth", default=None, help="truth CSV for accuracy metrics")
    p_slam.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="compare a trajectory CSV against a truth CSV")
    p_eval.add_argument("--estimate", required=True)
    p_eval.add_argument("--truth", required=True)
    return parser


def _cmd_simulate(args) -> int:
    spec_path = Path(args.spec)
    doc = json.loads(spec_path.read_text(encoding="utf-8"))
    spec = scenario_from_dict(doc, seed=args.seed)
    logs, truths = generate_scenario(spec)
    out_dir = Path(args.out)
    for track in logs:
        atomic_write_text(out_dir / f"{track.track_id}.jsonl", serialize_track_log(track))
    write_truth_csv(out_dir / "truth.csv", logs, truths)
    manifest = {
        "tool": "rfslam simulate",
        "scenario": spec.name,
        "spec_digest": digest_bytes(spec_path.read_bytes()),
        "seed": spec.noise.rng_seed,
        "tracks": {t.track_id: len(t.entries) for t in logs},
    }
    atomic_write_text(out_dir / "simulate_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    total = sum(len(t.entries) for t in logs)
    print(f"wrote {len(logs)} track logs ({total} measurements) to {out_dir}")
    return EXIT_OK


def _cmd_train(args) -> int:
    tracks = load_track_logs(args.logs)
    samples = collect_training_samples(
        tracks,
        d_max=args.distance_cap,
        floor=args.floor,
        theta_r=args.rss_threshold,
        max_pairs_per_node=args.max_pairs_per_node,
    )
    if not samples:
        raise SlamRunError("no training samples under the travel cap; logs too short?")
    table = train_variance_table(
        samples,
        args.bin_size,
        floor_dbm=args.floor,
        rss_threshold_dbm=args.rss_threshold,
    )
    atomic_write_text(args.out, json.dumps(table.to_json_dict(), indent=2, sort_keys=True) + "\n")
    populated = sum(1 for c in table.counts if c > 0)
    print(f"trained on {len(samples)} samples; {populated}/{table.n_bins} bins populated -> {args.out}")
    return EXIT_OK


def _load_truth_for(tracks, truth_path):
    by_track = read_truth_csv(truth_path)
    truths = []
    for track in tracks:
        if track.track_id not in by_track:
            raise SlamRunError(f"truth CSV has no rows for track {track.track_id!r}")
        truths.append(by_track[track.track_id])
    return truths


def _cmd_slam(args) -> int:
    tracks = load_track_logs(args.logs)
    digests = {}
    for p in sorted(Path(args.logs).glob("*.jsonl")):
        digests[p.name] = digest_bytes(p.read_bytes())

    table = None
    if args.table is not None:
        doc = json.loads(Path(args.table).read_text(encoding="utf-8"))
        table = VarianceTable.from_json_dict(doc)
        digests[Path(args.table).name] = digest_bytes(Path(args.table).read_bytes())

    truth = None
    if args.truth is not None:
        truth = _load_truth_for(tracks, args.truth)
        digests[Path(args.truth).name] = digest_bytes(Path(args.truth).read_bytes())

    config = SlamConfig(
        rss_threshold_dbm=args.rss_threshold,
        similarity_threshold=args.sim_threshold,
        bin_size=args.bin_size,
        min_gap=args.min_gap,
        window_m=args.window,
        floor_dbm=args.floor,
        gate_distance_m=args.gate_distance,
        gate_orientation_rad=args.gate_orientation,
        max_pairs_per_node=args.max_pairs_per_node,
        odom_trans_sigma=args.odom_trans_sigma,
        odom_rot_sigma=args.odom_rot_sigma,
        lm=OptimizeOptions(
            max_iters=args.lm_max_iters,
            lambda_init=args.lm_lambda_init,
            lambda_scale=args.lm_lambda_scale,
            convergence_tol=args.lm_tol,
        ),
        seed=args.seed,
    )
    result = run_slam(tracks, config, truth=truth, table=table, input_digests=digests)
    paths = write_outputs(result, args.out, truth=truth)

    rep = result.report
    line = (
        f"{rep.n_nodes} nodes, {rep.n_odometry_edges} odometry + {rep.n_anchor_edges} anchor + "
        f"{rep.n_loop_edges} loop edges (from {rep.n_loop_candidates} candidates); "
        f"chi2 {rep.chi2_initial:.3g} -> {rep.chi2_final:.3g} in {rep.lm_iterations} iterations"
    )
    if rep.accuracy is not None:
        line += (
            f"; RMSE {rep.accuracy['optimized']['rmse']:.3f} m"
            f" (odometry {rep.accuracy['odometry']['rmse']:.3f} m)"
        )
    print(line)
    print(f"outputs in {Path(paths['metrics']).parent}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    estimates: dict[str, list] = {}
    with open(args.estimate, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"track_id", "x", "y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SlamRunError(f"{args.estimate}: estimate CSV needs columns track_id,x,y")
        for row in reader:
            estimates.setdefault(row["track_id"], []).append(
                Pose2(float(row["x"]), float(row["y"]), 0.0)
            )
    truth = read_truth_csv(args.truth)
    if set(estimates) != set(truth):
        raise SlamRunError(
            f"track sets differ: estimate has {sorted(estimates)}, truth has {sorted(truth)}"
        )
    est_flat = []
    truth_flat = []
    per_track = {}
    for track_id in sorted(estimates):
        e = estimates[track_id]
        t = truth[track_id]
        if len(e) != len(t):
            raise SlamRunError(
                f"track {track_id!r}: {len(e)} estimates vs {len(t)} truth rows"
            )
        per_track[track_id] = error_stats(e, t)
        est_flat.extend(e)
        truth_flat.extend(t)
    out = {"joint": error_stats(est_flat, truth_flat), "per_track": per_track}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "slam": _cmd_slam,
        "eval": _cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (TrackLogParseError, SlamRunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
