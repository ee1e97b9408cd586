"""Tests for the similarity -> distance-variance model."""

import json
import math

import numpy as np
import pytest

from rfslam.fingerprint import Fingerprint, StampedFingerprint, TrackLog
from rfslam.pose_graph import Pose2
from rfslam.variance_model import (
    VARIANCE_FLOOR_M2,
    TrainingSample,
    VarianceTable,
    collect_training_samples,
    lookup_variance,
    n_bins_for,
    train_variance_table,
)


def brute_force_bins(samples, bin_size):
    """Reference grouping: independent one-pass dict-of-lists implementation."""
    nb = n_bins_for(bin_size)
    groups = {}
    for smp in samples:
        k = min(int(smp.s // bin_size), nb - 1)
        groups.setdefault(k, []).append(smp.d)
    counts = [len(groups.get(k, [])) for k in range(nb)]
    variances = [
        float(np.mean(np.array(groups[k]) ** 2)) if k in groups else 0.0 for k in range(nb)
    ]
    return counts, variances


class TestTrain:
    def test_two_samples_one_bin(self):
        table = train_variance_table([TrainingSample(0.85, 2.0), TrainingSample(0.85, 1.0)], 0.1)
        assert table.counts[8] == 2
        assert table.variances[8] == pytest.approx(2.5, abs=1e-15)

    def test_single_sample(self):
        table = train_variance_table([TrainingSample(0.5, 3.0)], 0.1)
        assert table.counts[5] == 1
        assert table.variances[5] == pytest.approx(9.0, abs=1e-15)

    def test_similarity_one_lands_in_last_bin(self):
        table = train_variance_table([TrainingSample(1.0, 2.0)], 0.1)
        assert table.n_bins == 10
        assert table.counts[9] == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="zero samples"):
            train_variance_table([], 0.1)

    def test_bad_bin_size_rejected(self):
        for b in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError, match="bin_size"):
                train_variance_table([TrainingSample(0.5, 1.0)], b)

    @pytest.mark.parametrize("bin_size", [0.05, 0.1, 0.2, 0.4, 1.0])
    def test_matches_brute_force(self, bin_size):
        rng = np.random.default_rng(17)
        for _ in range(20):
            samples = [
                TrainingSample(float(rng.uniform(0, 1)), float(rng.uniform(0, 30)))
                for _ in range(int(rng.integers(1, 200)))
            ]
            table = train_variance_table(samples, bin_size)
            counts, variances = brute_force_bins(samples, bin_size)
            assert list(table.counts) == counts
            assert sum(table.counts) == len(samples)
            np.testing.assert_allclose(table.variances, variances, atol=1e-12)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(3)
        samples = [
            TrainingSample(float(rng.uniform(0, 1)), float(rng.uniform(0, 30)))
            for _ in range(500)
        ]
        a = train_variance_table(samples, 0.1)
        b = train_variance_table(list(samples), 0.1)
        assert a == b


class TestLookup:
    def test_populated_bin(self):
        table = train_variance_table([TrainingSample(0.85, 2.0), TrainingSample(0.85, 1.0)], 0.1)
        assert lookup_variance(table, 0.87) == pytest.approx(2.5)

    def test_empty_bin_falls_back_to_lower(self):
        table = train_variance_table(
            [TrainingSample(0.85, 3.0), TrainingSample(0.55, 8.0)], 0.1
        )
        assert lookup_variance(table, 0.95) == pytest.approx(9.0)  # falls to bin 8
        assert lookup_variance(table, 0.75) == pytest.approx(64.0)  # falls to bin 5

    def test_fallback_upward_when_nothing_below(self):
        table = train_variance_table([TrainingSample(0.85, 3.0)], 0.1)
        assert lookup_variance(table, 0.05) == pytest.approx(9.0)

    def test_variance_floor(self):
        table = train_variance_table([TrainingSample(0.95, 0.0)], 0.1)
        assert lookup_variance(table, 0.95) == VARIANCE_FLOOR_M2

    def test_out_of_range_similarity_rejected(self):
        table = train_variance_table([TrainingSample(0.5, 1.0)], 0.1)
        for s in (-0.1, 1.1):
            with pytest.raises(ValueError, match="similarity"):
                lookup_variance(table, s)

    def test_degenerate_table_rejected(self):
        table = VarianceTable(
            bin_size=0.5,
            counts=(0, 0),
            variances=(0.0, 0.0),
            floor_dbm=-100.0,
            rss_threshold_dbm=-70.0,
        )
        with pytest.raises(ValueError, match="no populated bins"):
            lookup_variance(table, 0.5)


def make_track(track_id, positions, fps=None, dt=5.0):
    entries = []
    for k, (x, y) in enumerate(positions):
        fp = fps[k] if fps is not None else Fingerprint({"a": -50.0})
        entries.append(StampedFingerprint(time=k * dt, odom_pose=Pose2(x, y, 0.0), fp=fp))
    return TrackLog(track_id, entries)


class TestCollect:
    def test_two_nodes_identical_fingerprints(self):
        track = make_track("t0", [(0.0, 0.0), (5.0, 0.0)])
        samples = collect_training_samples([track], d_max=30.0, theta_r=-70.0)
        assert len(samples) == 1
        assert samples[0].s == pytest.approx(1.0, abs=1e-12)
        assert samples[0].d == pytest.approx(5.0)

    def test_travel_cap_excludes(self):
        track = make_track("t0", [(0.0, 0.0), (35.0, 0.0)])
        assert collect_training_samples([track], d_max=30.0) == []

    def test_three_node_enumeration(self):
        # pairwise path lengths {10, 10, 20}: brute force says 3 samples under 30 m
        track = make_track("t0", [(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)])
        samples = collect_training_samples([track], d_max=30.0)
        assert len(samples) == 3
        assert sorted(s.d for s in samples) == pytest.approx([10.0, 10.0, 20.0])

    def test_cap_is_strict(self):
        track = make_track("t0", [(0.0, 0.0), (30.0, 0.0)])
        assert collect_training_samples([track], d_max=30.0) == []

    def test_pairs_never_span_tracks(self):
        t0 = make_track("t0", [(0.0, 0.0), (1.0, 0.0)])
        t1 = make_track("t1", [(0.0, 0.0), (1.0, 0.0)])
        samples = collect_training_samples([t0, t1], d_max=30.0)
        assert len(samples) == 2  # one per track, none across

    def test_straight_line_distance_recorded(self):
        # path goes out and back: path length 10, displacement 0
        track = make_track("t0", [(0.0, 0.0), (5.0, 0.0), (0.0, 0.0)])
        samples = collect_training_samples([track], d_max=30.0)
        d_by_pair = sorted(s.d for s in samples)
        assert d_by_pair == pytest.approx([0.0, 5.0, 5.0])

    def test_max_pairs_per_node(self):
        track = make_track("t0", [(float(k), 0.0) for k in range(6)])
        capped = collect_training_samples([track], d_max=30.0, max_pairs_per_node=2)
        assert len(capped) == sum(min(2, 5 - i) for i in range(5))

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(5)
        pos = np.cumsum(rng.uniform(0.5, 4.0, size=(20, 2)), axis=0)
        track = make_track("t0", [tuple(p) for p in pos])
        samples = collect_training_samples([track], d_max=12.0)
        # oracle: full double loop over entries
        from rfslam.fingerprint import cumulative_path_lengths

        cum = cumulative_path_lengths(track.entries)
        expected = 0
        for i in range(len(cum)):
            for j in range(i + 1, len(cum)):
                if cum[j] - cum[i] < 12.0:
                    expected += 1
        assert len(samples) == expected


class TestMonotoneExpectation:
    def test_high_similarity_means_close(self):
        # seeded synthetic walk with distance-driven fingerprints
        rng = np.random.default_rng(21)
        from rfslam.simulator import (
            Environment,
            NoiseModel,
            generate_walk,
            random_environment,
            sample_rss,
        )

        env = random_environment(80.0, 50.0, 40, -40.0, rng)
        noise = NoiseModel(rss_sigma=2.0, path_loss_exponent=2.5, rng_seed=21)
        walk = generate_walk(env, [(5, 5), (75, 5), (75, 45), (5, 45), (5, 5)], 1.0, 2.0)
        entries = [
            StampedFingerprint(time=t, odom_pose=p, fp=sample_rss(env, p, noise, rng))
            for p, t in walk
        ]
        track = TrackLog("t0", entries)
        samples = collect_training_samples([track], d_max=30.0, theta_r=-70.0)
        assert len(samples) >= 1000
        high = [s.d for s in samples if 0.9 <= s.s < 1.0]
        low = [s.d for s in samples if 0.1 <= s.s < 0.2]
        assert high and low
        assert np.mean(high) <= np.mean(low)


class TestSerialization:
    def test_json_roundtrip(self):
        table = train_variance_table(
            [TrainingSample(0.85, 2.0), TrainingSample(0.3, 10.0)],
            0.1,
            floor_dbm=-100.0,
            rss_threshold_dbm=-70.0,
        )
        doc = json.loads(json.dumps(table.to_json_dict()))
        assert VarianceTable.from_json_dict(doc) == table

    def test_rejects_wrong_format(self):
        with pytest.raises(ValueError, match="format"):
            VarianceTable.from_json_dict({"format": "something-else", "version": 1})

    def test_rejects_wrong_version(self):
        table = train_variance_table([TrainingSample(0.5, 1.0)], 0.5)
        doc = table.to_json_dict()
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            VarianceTable.from_json_dict(doc)
