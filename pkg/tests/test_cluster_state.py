import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterface import cluster_state as cs
from clusterface.errors import (
    EmptyClassError,
    InvalidParamsError,
    NonUnitFeatureError,
    RequiredClassUninitializedError,
    UninitializedCenterError,
)
from clusterface.numeric import l2_normalize, make_rng
from clusterface.trainer import TrainConfig
from oracles import phi_oracle


def unit_batch(rng, n, d):
    return l2_normalize(rng.standard_normal((n, d)))


class TestQueue:
    def test_fifo_eviction(self):
        q = cs.FeatureQueue(capacity=4)
        feats = np.eye(6)
        cs.enqueue(q, feats, np.arange(6))
        np.testing.assert_array_equal(q.labels, [2, 3, 4, 5])
        np.testing.assert_array_equal(q.features, feats[2:])

    def test_empty_batch_is_noop(self):
        q = cs.FeatureQueue(capacity=4)
        cs.enqueue(q, np.eye(2), [0, 1])
        before = q.features.copy()
        cs.enqueue(q, np.zeros((0, 2)), [])
        cs.enqueue(q, [])
        np.testing.assert_array_equal(q.features, before)

    def test_default_capacities(self):
        assert cs.FeatureQueue().capacity == 8192
        assert TrainConfig.for_profile("paper").queue_capacity == 8192

    def test_labeled_feature_input(self):
        q = cs.FeatureQueue(capacity=3)
        cs.enqueue(q, [cs.LabeledFeature(np.array([1.0, 0.0]), 4)])
        assert q.entries()[0].label == 4

    def test_non_unit_rejected(self):
        with pytest.raises(NonUnitFeatureError):
            cs.enqueue(cs.FeatureQueue(4), np.array([[1.0, 1.0]]), [0])

    @given(st.integers(1, 20), st.integers(0, 30), st.integers(0, 30))
    def test_length_is_min_of_capacity_and_total(self, cap, m, n):
        rng = make_rng(cap * 1000 + m * 31 + n)
        q = cs.FeatureQueue(cap)
        cs.enqueue(q, unit_batch(rng, m, 3), np.arange(m))
        cs.enqueue(q, unit_batch(rng, n, 3), 100 + np.arange(n))
        assert len(q) == min(cap, m + n)
        expected = np.concatenate([np.arange(m), 100 + np.arange(n)])[-cap:] if m + n else []
        np.testing.assert_array_equal(q.labels, expected)


class TestCenters:
    def test_single_feature_mean(self):
        q = cs.FeatureQueue(4)
        f = l2_normalize([1.0, 2.0])
        cs.enqueue(q, f[None], [0])
        np.testing.assert_array_equal(cs.queue_class_center(q, 0), f)

    def test_two_feature_mean(self):
        q = cs.FeatureQueue(4)
        cs.enqueue(q, np.eye(2), [1, 1])
        np.testing.assert_allclose(cs.queue_class_center(q, 1), [0.5, 0.5])

    def test_absent_class(self):
        q = cs.FeatureQueue(4)
        cs.enqueue(q, np.eye(2), [1, 1])
        with pytest.raises(EmptyClassError):
            cs.queue_class_center(q, 0)

    def test_vectorized_centers_match(self):
        rng = make_rng(5)
        q = cs.FeatureQueue(50)
        cs.enqueue(q, unit_batch(rng, 40, 4), rng.integers(0, 6, 40))
        centers, counts = cs.queue_class_centers(q, 7)
        for k in range(7):
            if counts[k]:
                np.testing.assert_allclose(centers[k], cs.queue_class_center(q, k), atol=1e-15)
            else:
                assert not centers[k].any()


class TestBank:
    def test_first_observation_copies(self):
        bank = cs.ClusterCenterBank(3, 2, momentum=0.9)
        cs.bank_update(bank, 1, np.array([0.3, -0.2]))
        np.testing.assert_array_equal(bank.center(1), [0.3, -0.2])

    def test_unit_momentum_freezes(self):
        bank = cs.ClusterCenterBank(3, 2, momentum=1.0)
        cs.bank_update(bank, 0, np.array([1.0, 0.0]))
        cs.bank_update(bank, 0, np.array([0.0, 1.0]))
        np.testing.assert_array_equal(bank.center(0), [1.0, 0.0])

    def test_paper_momentum_blend(self):
        bank = cs.ClusterCenterBank(3, 2, momentum=0.9)
        cs.bank_update(bank, 0, np.array([1.0, 0.0]))
        cs.bank_update(bank, 0, np.array([0.0, 1.0]))
        np.testing.assert_allclose(bank.center(0), [0.9, 0.1], atol=1e-15)

    def test_uninitialized_center(self):
        with pytest.raises(UninitializedCenterError):
            cs.ClusterCenterBank(2, 2).center(0)

    @given(st.floats(0, 1), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_update_stays_in_interval(self, mc, old, new):
        bank = cs.ClusterCenterBank(1, 3, momentum=mc)
        cs.bank_update(bank, 0, np.array(old))
        cs.bank_update(bank, 0, np.array(new))
        lo, hi = np.minimum(old, new), np.maximum(old, new)
        c = bank.center(0)
        assert np.all(c >= lo - 1e-12) and np.all(c <= hi + 1e-12)


def _state_with(features, labels, num_classes, centers=None):
    q = cs.FeatureQueue(len(labels) + 1)
    cs.enqueue(q, features, labels)
    bank = cs.ClusterCenterBank(num_classes, features.shape[1])
    qc, counts = cs.queue_class_centers(q, num_classes)
    present = np.flatnonzero(counts)
    cs.bank_update(bank, present, qc[present] if centers is None else centers[present])
    return q, bank


class TestConcentration:
    def test_identical_features_give_zero(self):
        f = np.tile(l2_normalize([1.0, 2.0, 2.0]), (5, 1))
        q, bank = _state_with(f, np.zeros(5, int), 1)
        assert cs.concentration(q, bank, 0, 10.0) == 0.0

    def test_worked_example(self):
        q, bank = _state_with(np.eye(2), [0, 0], 1)
        np.testing.assert_allclose(bank.center(0), [0.5, 0.5])
        phi = cs.concentration(q, bank, 0, alpha=10.0)
        assert phi == pytest.approx(phi_oracle(np.eye(2), [0.5, 0.5], 10), abs=1e-12)
        assert phi == pytest.approx(2 * math.sqrt(0.5) / (2 * math.log(12)), abs=1e-15)
        assert abs(phi - 0.28455) < 2e-5

    def test_default_alpha(self):
        assert TrainConfig().alpha == 10.0

    def test_errors(self):
        q, bank = _state_with(np.eye(2), [0, 0], 3)
        with pytest.raises(EmptyClassError):
            cs.concentration(q, bank, 1)
        cs.enqueue(q, np.array([[0.0, 1.0]]), [2])
        with pytest.raises(UninitializedCenterError):
            cs.concentration(q, bank, 2)
        with pytest.raises(InvalidParamsError):
            cs.class_concentration(np.eye(2)[:1], np.zeros(2), alpha=-0.5)

    @settings(max_examples=50)
    @given(st.integers(1, 12), st.integers(1, 6), st.floats(0.5, 20), st.integers(0, 10**6))
    def test_matches_loop_oracle(self, n, d, alpha, seed):
        rng = make_rng(seed)
        feats = rng.standard_normal((n, d))
        center = rng.standard_normal(d)
        assert cs.class_concentration(feats, center, alpha) == pytest.approx(
            phi_oracle(feats, center, alpha), rel=1e-12, abs=1e-12)

    @given(st.integers(0, 10**6), st.floats(-10, 10))
    def test_translation_invariant(self, seed, shift):
        rng = make_rng(seed)
        feats, center = rng.standard_normal((6, 3)), rng.standard_normal(3)
        t = np.full(3, shift)
        assert cs.class_concentration(feats + t, center + t) == pytest.approx(
            cs.class_concentration(feats, center), rel=1e-9, abs=1e-9)

    @given(st.integers(0, 10**6), st.floats(0.01, 100))
    def test_radial_scaling_is_linear(self, seed, r):
        rng = make_rng(seed)
        feats, center = rng.standard_normal((6, 3)), rng.standard_normal(3)
        scaled = center + r * (feats - center)
        assert cs.class_concentration(scaled, center) == pytest.approx(
            r * cs.class_concentration(feats, center), rel=1e-9)


class TestRefresh:
    def test_one_class(self):
        q, bank = _state_with(np.eye(3), [2, 2, 2], 4)
        t = cs.refresh_concentrations(q, bank, 10.0)
        assert len(t) == 1 and t.phi_min == t.phi_max

    def test_empty_queue(self):
        t = cs.refresh_concentrations(cs.FeatureQueue(4), cs.ClusterCenterBank(3, 2), 10.0)
        assert len(t) == 0

    def test_tight_class_below_spread_class(self):
        rng = make_rng(11)
        base = l2_normalize(rng.standard_normal((2, 8)))
        tight = l2_normalize(base[0] + 0.05 * rng.standard_normal((30, 8)))
        spread = l2_normalize(base[1] + 0.8 * rng.standard_normal((30, 8)))
        feats = np.concatenate([tight, spread])
        labels = np.repeat([0, 1], 30)
        q, bank = _state_with(feats, labels, 2)
        t = cs.refresh_concentrations(q, bank, 10.0)
        assert t.phi[0] < t.phi[1]
        for k, block in ((0, tight), (1, spread)):
            assert t.phi[k] == pytest.approx(phi_oracle(block, bank.center(k), 10.0), rel=1e-12)

    def test_skips_uninitialized_and_matches_scalar_op(self):
        rng = make_rng(12)
        q = cs.FeatureQueue(64)
        labels = rng.integers(0, 5, 40)
        cs.enqueue(q, unit_batch(rng, 40, 4), labels)
        bank = cs.ClusterCenterBank(6, 4)
        qc, _ = cs.queue_class_centers(q, 6)
        cs.bank_update(bank, [0, 1, 2], qc[[0, 1, 2]])
        t = cs.refresh_concentrations(q, bank, 10.0)
        assert set(t.skipped) == set(np.unique(labels)) - {0, 1, 2}
        for k in (0, 1, 2):
            assert t.phi[k] == pytest.approx(cs.concentration(q, bank, k, 10.0), rel=1e-13)
        assert np.isnan(t.phi[3:]).all()
        valid = t.phi[:3]
        assert t.phi_min == valid.min() and t.phi_max == valid.max()


def _full_state(K, d=4, seed=0):
    rng = make_rng(seed)
    bank = cs.ClusterCenterBank(K, d)
    cs.bank_update(bank, np.arange(K), rng.standard_normal((K, d)))
    table = cs.ConcentrationTable(rng.uniform(0.1, 0.5, K))
    return bank, table


class TestSampleClasses:
    def test_all_classes_when_m_equals_k(self):
        bank, table = _full_state(8)
        a = cs.sample_classes(bank, table, [1], 8, make_rng(0))
        b = cs.sample_classes(bank, table, [1], 8, make_rng(99))
        np.testing.assert_array_equal(a.center_ids, np.arange(8))
        np.testing.assert_array_equal(a.center_ids, b.center_ids)

    def test_required_fill_all_slots(self):
        bank, table = _full_state(10)
        s = cs.sample_classes(bank, table, [7, 2, 2, 5], 3, make_rng(0))
        np.testing.assert_array_equal(s.center_ids, [2, 5, 7])

    def test_seeded_sample(self):
        bank, table = _full_state(100)
        a = cs.sample_classes(bank, table, [3, 7], 10, make_rng(1234))
        b = cs.sample_classes(bank, table, [3, 7], 10, make_rng(1234))
        np.testing.assert_array_equal(a.center_ids, b.center_ids)
        assert len(a) == 10 and {3, 7} <= set(a.center_ids.tolist())
        np.testing.assert_allclose(np.linalg.norm(a.centers, axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(a.temps, table.phi[a.center_ids])

    def test_m_is_clipped(self):
        bank, table = _full_state(5)
        assert len(cs.sample_classes(bank, table, [], 50, make_rng(0))) == 5

    def test_uninitialized_required(self):
        bank, table = _full_state(5)
        bank.initialized[4] = False
        with pytest.raises(RequiredClassUninitializedError):
            cs.sample_classes(bank, table, [4], 3, make_rng(0))

    def test_temperature_floor(self):
        bank, table = _full_state(4)
        table.phi[0] = 0.0
        s = cs.sample_classes(bank, table, [0], 4, make_rng(0), min_temp=0.05)
        assert s.temps[0] == 0.05

    @given(st.integers(2, 40), st.data())
    def test_includes_required_without_repeats(self, K, data):
        bank, table = _full_state(K, seed=K)
        req = data.draw(st.lists(st.integers(0, K - 1), max_size=K))
        M = data.draw(st.integers(len(set(req)), K))
        s = cs.sample_classes(bank, table, req, M, make_rng(data.draw(st.integers(0, 1000))))
        ids = s.center_ids.tolist()
        assert set(req) <= set(ids)
        assert len(ids) == len(set(ids)) == M


def test_state_snapshot_json(tmp_path):
    bank, table = _full_state(3)
    snap = cs.state_snapshot(table, bank, epoch=2)
    path = tmp_path / "dump.json"
    cs.write_state_dump([snap], path)
    import json
    back = json.loads(path.read_text())
    assert back[0]["epoch"] == 2 and set(back[0]["phi"]) == {"0", "1", "2"}
    assert back[0]["bank_norms"]["1"] == pytest.approx(float(np.linalg.norm(bank.centers[1])))
