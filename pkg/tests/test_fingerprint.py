"""Tests for fingerprint thresholding and cosine similarity."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfslam.fingerprint import (
    Fingerprint,
    StampedFingerprint,
    TrackLog,
    cosine_similarity,
    cumulative_path_lengths,
    signal_magnitude,
    similarity_op_count,
    threshold_fingerprint,
)
from rfslam.pose_graph import Pose2


def random_fingerprint(rng, pool_size=12, max_aps=8):
    pool = [f"ap{k:02d}" for k in range(pool_size)]
    n = int(rng.integers(0, max_aps + 1))
    chosen = rng.choice(pool, size=n, replace=False)
    return Fingerprint({ap: float(rng.uniform(-100.0, -30.0)) for ap in chosen})


def eq2_reference(a, b, floor):
    """Independent evaluation: explicit vectors over the AP union."""
    ids = sorted(set(a.readings) | set(b.readings))
    va = np.array([max(0.0, a.readings.get(k, floor) - floor) for k in ids])
    vb = np.array([max(0.0, b.readings.get(k, floor) - floor) for k in ids])
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb / (na * nb))


class TestThreshold:
    def test_filters_below(self):
        fp = Fingerprint({"a": -65.0, "b": -80.0})
        assert threshold_fingerprint(fp, -70.0).readings == {"a": -65.0}

    def test_all_below(self):
        fp = Fingerprint({"a": -95.0, "b": -88.0})
        assert threshold_fingerprint(fp, -70.0).readings == {}

    def test_none_below(self):
        fp = Fingerprint({"a": -65.0, "b": -80.0})
        assert threshold_fingerprint(fp, -100.0).readings == {"a": -65.0, "b": -80.0}

    def test_input_unmodified(self):
        fp = Fingerprint({"a": -65.0, "b": -80.0})
        threshold_fingerprint(fp, -70.0)
        assert fp.readings == {"a": -65.0, "b": -80.0}

    @given(
        st.dictionaries(
            st.text(min_size=1, max_size=4),
            st.floats(min_value=-120, max_value=-20),
            max_size=10,
        ),
        st.floats(min_value=-110, max_value=-30),
    )
    def test_idempotent(self, readings, theta_r):
        fp = Fingerprint(readings)
        once = threshold_fingerprint(fp, theta_r)
        twice = threshold_fingerprint(once, theta_r)
        assert once.readings == twice.readings

    @given(
        st.dictionaries(
            st.text(min_size=1, max_size=4),
            st.floats(min_value=-120, max_value=-20),
            max_size=10,
        ),
        st.floats(min_value=-110, max_value=-30),
        st.floats(min_value=0, max_value=30),
    )
    def test_monotone(self, readings, t1, gap):
        fp = Fingerprint(readings)
        t2 = t1 + gap
        high = threshold_fingerprint(fp, t2)
        low = threshold_fingerprint(fp, t1)
        assert set(high.readings) <= set(low.readings)


class TestSignalMagnitude:
    def test_above_floor(self):
        assert signal_magnitude(-60.0, -100.0) == 40.0

    def test_at_floor(self):
        assert signal_magnitude(-100.0, -100.0) == 0.0

    def test_clamped_below_floor(self):
        assert signal_magnitude(-110.0, -100.0) == 0.0

    def test_monotone(self):
        rng = np.random.default_rng(0)
        vals = sorted(rng.uniform(-120, -30, size=50))
        mags = [signal_magnitude(v, -100.0) for v in vals]
        assert all(b >= a for a, b in zip(mags, mags[1:]))


class TestCosineSimilarity:
    def test_identical(self):
        fp = Fingerprint({"p": -60.0, "q": -70.0})
        assert cosine_similarity(fp, fp, -100.0) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint(self):
        assert cosine_similarity(Fingerprint({"p": -60.0}), Fingerprint({"q": -60.0}), -100.0) == 0.0

    def test_hand_computed_value(self):
        # magnitudes (30, 40) vs (40, 30): (30*40 + 40*30) / (50 * 50)
        a = Fingerprint({"p": -70.0, "q": -60.0})
        b = Fingerprint({"p": -60.0, "q": -70.0})
        assert cosine_similarity(a, b, -100.0) == pytest.approx(0.96, abs=1e-12)

    def test_empty_is_zero(self):
        assert cosine_similarity(Fingerprint({}), Fingerprint({"a": -50.0}), -100.0) == 0.0
        assert cosine_similarity(Fingerprint({}), Fingerprint({}), -100.0) == 0.0

    def test_all_below_floor_is_zero(self):
        a = Fingerprint({"p": -110.0})
        b = Fingerprint({"p": -105.0})
        assert cosine_similarity(a, b, -100.0) == 0.0

    def test_oracle_symmetry_and_range_1000_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            a = random_fingerprint(rng)
            b = random_fingerprint(rng)
            floor = float(rng.uniform(-110.0, -90.0))
            s = cosine_similarity(a, b, floor)
            assert s == cosine_similarity(b, a, floor)  # exact symmetry
            assert 0.0 <= s <= 1.0 + 1e-12
            assert s == pytest.approx(eq2_reference(a, b, floor), abs=1e-12)

    def test_self_similarity_near_one(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            fp = random_fingerprint(rng)
            if any(v > -100.0 for v in fp.readings.values()):
                assert cosine_similarity(fp, fp, -100.0) == pytest.approx(1.0, abs=1e-12)


class TestOpCount:
    def test_union(self):
        a = Fingerprint({"p": -50.0, "q": -60.0})
        b = Fingerprint({"q": -55.0, "r": -65.0})
        assert similarity_op_count(a, b) == 3

    def test_empty(self):
        assert similarity_op_count(Fingerprint({}), Fingerprint({})) == 0

    def test_identical_singleton(self):
        fp = Fingerprint({"p": -50.0})
        assert similarity_op_count(fp, fp) == 1


class TestTrackLog:
    def entries(self, times):
        return [
            StampedFingerprint(time=t, odom_pose=Pose2(float(k), 0.0, 0.0), fp=Fingerprint({}))
            for k, t in enumerate(times)
        ]

    def test_valid(self):
        track = TrackLog("t0", self.entries([0.0, 5.0, 10.0]))
        assert len(track) == 3

    def test_requires_two_entries(self):
        with pytest.raises(ValueError, match=">= 2"):
            TrackLog("t0", self.entries([0.0]))

    def test_rejects_non_increasing_time(self):
        with pytest.raises(ValueError, match="not after"):
            TrackLog("t0", self.entries([0.0, 5.0, 5.0]))

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError, match="negative"):
            TrackLog("t0", self.entries([-1.0, 5.0]))

    def test_cumulative_path(self):
        entries = [
            StampedFingerprint(0.0, Pose2(0, 0, 0), Fingerprint({})),
            StampedFingerprint(1.0, Pose2(3, 4, 0), Fingerprint({})),
            StampedFingerprint(2.0, Pose2(3, 10, 0), Fingerprint({})),
        ]
        assert cumulative_path_lengths(entries) == pytest.approx([0.0, 5.0, 11.0])
