import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterface.encoder import MlpModel
from clusterface.errors import (
    InsufficientDataError,
    InvalidKError,
    InvalidParamsError,
    LengthMismatchError,
    NoNegativePairsError,
    NoPositivePairsError,
)
from clusterface.evaluation import (
    NOISE,
    bcubed_f,
    clustering_report,
    dbscan,
    kmeans,
    make_pairs,
    nmi,
    verification_eval,
    verification_report,
    write_histogram_csv,
    write_verification_json,
)
from clusterface.numeric import l2_normalize, make_rng
from oracles import bcubed_brute, nmi_brute, set_partitions


def blobs(rng, centers, n, spread):
    x = np.concatenate([c + spread * rng.standard_normal((n, len(c))) for c in centers])
    return x, np.repeat(np.arange(len(centers)), n)


def same_partition(a, b):
    return nmi(a, b) == 1.0 and len(np.unique(a)) == len(np.unique(b))


class TestKMeans:
    def test_single_cluster(self):
        x = make_rng(0).standard_normal((10, 3))
        r = kmeans(x, 1, rng=make_rng(1))
        assert np.all(r.assignment == 0) and r.num_clusters == 1

    def test_k_equals_n(self):
        x = make_rng(0).standard_normal((7, 2))
        r = kmeans(x, 7, rng=make_rng(1))
        assert len(np.unique(r.assignment)) == 7
        assert r.inertia_history[-1] == pytest.approx(0.0, abs=1e-12)

    def test_recovers_separated_blobs(self):
        rng = make_rng(3)
        x, y = blobs(rng, [[0, 0], [10, 0], [0, 10]], 30, 0.3)
        r = kmeans(x, 3, rng=make_rng(4))
        assert nmi(r, y) == 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 6))
    def test_inertia_non_increasing(self, seed, k):
        x = make_rng(seed).standard_normal((40, 3))
        h = kmeans(x, k, rng=make_rng(seed + 1)).inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_invalid_k(self):
        with pytest.raises(InvalidKError):
            kmeans(np.zeros((3, 2)), 0)
        with pytest.raises(InvalidKError):
            kmeans(np.zeros((3, 2)), 4)

    def test_seeded(self):
        x = make_rng(0).standard_normal((50, 4))
        a = kmeans(x, 5, rng=make_rng(9)).assignment
        b = kmeans(x, 5, rng=make_rng(9)).assignment
        np.testing.assert_array_equal(a, b)


class TestDBSCAN:
    def test_identical_points(self):
        r = dbscan(np.ones((5, 2)), eps=0.1, min_pts=5)
        np.testing.assert_array_equal(r.assignment, 0)

    def test_all_noise(self):
        x = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        r = dbscan(x, eps=1.0, min_pts=2)
        assert np.all(r.assignment == NOISE) and r.num_clusters == 0

    def test_two_blobs_and_outlier(self):
        rng = make_rng(5)
        x, y = blobs(rng, [[0, 0], [5, 5]], 15, 0.1)
        x = np.vstack([x, [[50.0, -50.0]]])
        r = dbscan(x, eps=0.5, min_pts=3)
        assert r.num_clusters == 2
        assert r.assignment[-1] == NOISE
        assert same_partition(r.assignment[:-1], y)

    def test_border_point_attached_in_index_order(self):
        # point 1 is a border point reachable from both cores 0 and 2; cluster 0 claims it first
        x = np.array([[0.0], [1.0], [2.0], [-0.5], [2.5]])
        r = dbscan(x, eps=1.0, min_pts=3)
        assert r.assignment[1] == r.assignment[0]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_translation_invariance(self, seed):
        rng = make_rng(seed)
        x = rng.integers(-8, 8, size=(30, 2)).astype(float)
        shift = rng.integers(-100, 100, size=2).astype(float)
        a = dbscan(x, eps=2.5, min_pts=3).assignment
        b = dbscan(x + shift, eps=2.5, min_pts=3).assignment
        np.testing.assert_array_equal(a, b)

    def test_invalid(self):
        with pytest.raises(InvalidParamsError):
            dbscan(np.zeros((2, 2)), eps=0.0, min_pts=1)
        with pytest.raises(InvalidParamsError):
            dbscan(np.zeros((2, 2)), eps=1.0, min_pts=0)


class TestPartitionMetrics:
    def test_identical_up_to_relabel(self):
        assert nmi([2, 2, 7, 5], [0, 0, 1, 2]) == 1.0
        b = bcubed_f([2, 2, 7], [0, 0, 1])
        assert b["precision"] == b["recall"] == b["f"] == 1.0

    def test_trivial_prediction(self):
        assert nmi([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0
        assert nmi([0, 0, 0], [1, 1, 1]) == 1.0

    def test_independent_partitions(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_bcubed_one_cluster(self):
        b = bcubed_f([0, 0, 0, 0], [0, 0, 1, 1])
        assert b["precision"] == 0.5 and b["recall"] == 1.0
        assert b["f"] == pytest.approx(2 / 3, abs=1e-15)

    def test_bcubed_singletons(self):
        b = bcubed_f([0, 1, 2, 3], [0, 0, 1, 1])
        assert b["precision"] == 1.0 and b["recall"] == 0.5
        assert b["f"] == pytest.approx(2 / 3, abs=1e-15)

    def test_noise_counts_as_singletons(self):
        a = bcubed_f([NOISE, NOISE, 0, 0], [0, 0, 1, 1])
        b = bcubed_f([5, 6, 0, 0], [0, 0, 1, 1])
        assert a == b
        assert nmi([NOISE, NOISE, 0, 0], [0, 0, 1, 1]) == nmi([5, 6, 0, 0], [0, 0, 1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            nmi([0, 1], [0, 1, 1])
        with pytest.raises(LengthMismatchError):
            bcubed_f([0], [0, 1])

    def test_brute_force_small_partitions(self):
        for n in range(1, 5):
            parts = list(set_partitions(n))
            for p in parts:
                for t in parts:
                    assert abs(nmi(p, t) - nmi_brute(p, t)) <= 1e-12
                    b = bcubed_f(p, t)
                    bp, br, bf = bcubed_brute(p, t)
                    assert abs(b["precision"] - bp) <= 1e-12
                    assert abs(b["recall"] - br) <= 1e-12
                    assert abs(b["f"] - bf) <= 1e-12

    def test_partition_counts_are_bell_numbers(self):
        assert [len(list(set_partitions(n))) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=2, max_size=20), st.integers(0, 10**6))
    def test_ranges(self, pred, seed):
        truth = make_rng(seed).integers(0, 3, len(pred))
        assert 0.0 <= nmi(pred, truth) <= 1.0
        assert 0.0 <= bcubed_f(pred, truth)["f"] <= 1.0

    def test_report_fields(self):
        r = clustering_report("kmeans", {"k": 2}, [0, 0, 1, 1], [0, 0, 1, 1])
        assert set(r) == {"method", "k", "nmi", "bcubed_p", "bcubed_r", "bcubed_f"}


class TestVerification:
    def test_identical_positives(self):
        e = l2_normalize(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        pairs = [(0, 1, 1), (0, 2, 0), (1, 2, 0)]
        r = verification_report(e, pairs)
        assert r.mu_pos == 1.0
        assert all(v == 1.0 for v in r.tar.values())

    def test_orthogonal_ideal_margin(self):
        e = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        pairs = make_pairs([0, 0, 1, 1, 2], 2, 8, make_rng(0))
        r = verification_report(e, pairs)
        assert r.margin == 1.0 and r.margin == r.mu_pos - r.mu_neg
        assert r.accuracy == 1.0

    def test_histograms_sum_to_pair_counts(self):
        rng = make_rng(1)
        labels = rng.integers(0, 5, 60)
        e = l2_normalize(rng.standard_normal((60, 4)))
        pairs = make_pairs(labels, 40, 100, rng)
        r = verification_report(e, pairs)
        assert r.pos_counts.sum() == 40 and r.neg_counts.sum() == 100
        assert len(r.bin_edges) == 101
        assert r.bin_edges[1] - r.bin_edges[0] == pytest.approx(0.02)

    def test_tar_non_decreasing_in_far(self):
        rng = make_rng(2)
        labels = rng.integers(0, 6, 120)
        e = l2_normalize(rng.standard_normal((120, 3)) + 2 * np.eye(6, 3)[labels])
        pairs = make_pairs(labels, 300, 1500, rng)
        r = verification_report(e, pairs, fars=(1e-4, 1e-3, 1e-2, 1e-1, 0.5))
        tars = [r.tar[f] for f in sorted(r.tar)]
        assert all(b >= a for a, b in zip(tars, tars[1:]))

    def test_missing_pair_kinds(self):
        e = np.eye(3)
        with pytest.raises(NoPositivePairsError):
            verification_report(e, [(0, 1, 0)])
        with pytest.raises(NoNegativePairsError):
            verification_report(e, [(0, 1, 1)])

    def test_zero_positive_pairs_fail_downstream(self):
        labels = [0, 0, 1, 1]
        pairs = make_pairs(labels, 0, 3, make_rng(0))
        with pytest.raises(NoPositivePairsError):
            verification_report(np.eye(4), pairs)

    def test_eval_through_encoder(self):
        rng = make_rng(3)
        model = MlpModel.init([5, 32, 3], rng)
        x = rng.standard_normal((20, 5))
        labels = np.repeat(np.arange(4), 5)
        pairs = make_pairs(labels, 10, 10, rng)
        r = verification_eval(model, x, pairs)
        assert -1.0 <= r.mu_neg <= 1.0 and -1.0 <= r.mu_pos <= 1.0

    def test_writers(self, tmp_path):
        e = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
        r = verification_report(e, [(0, 1, 1), (0, 2, 0)])
        write_verification_json(r, tmp_path / "v.json", {"seed": 1})
        d = json.loads((tmp_path / "v.json").read_text())
        for key in ("bin_edges", "pos_counts", "neg_counts", "mu_pos", "mu_neg", "margin",
                    "accuracy", "tar_at_far", "seed"):
            assert key in d
        write_histogram_csv(r, tmp_path / "h.csv")
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["bin_left", "bin_right", "pos_count", "neg_count"]
        assert len(rows) == 101
        assert sum(int(x[2]) for x in rows[1:]) == 1


class TestMakePairs:
    def test_single_class_cannot_give_negatives(self):
        with pytest.raises(InsufficientDataError):
            make_pairs([0, 0, 0], 1, 1, make_rng(0))

    def test_too_many_positives(self):
        with pytest.raises(InsufficientDataError):
            make_pairs([0, 0, 1, 1], 3, 0, make_rng(0))

    def test_reproducible_distinct_and_correctly_labeled(self):
        labels = make_rng(0).integers(0, 4, 40)
        a = make_pairs(labels, 30, 50, make_rng(5))
        b = make_pairs(labels, 30, 50, make_rng(5))
        np.testing.assert_array_equal(a, b)
        keys = {(i, j) for i, j, _ in a}
        assert len(keys) == 80
        for i, j, same in a:
            assert i < j and same == int(labels[i] == labels[j])

    def test_exhaustive_when_exact(self):
        labels = [0, 0, 1, 1]
        p = make_pairs(labels, 2, 4, make_rng(1))
        assert sorted(map(tuple, p[:, :2].tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
