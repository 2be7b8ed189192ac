import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2gdistill.clustering import PseudoLabeling
from l2gdistill.encoder import init_encoder
from l2gdistill.errors import NoClustersError
from l2gdistill.memory import MemoryBank
from l2gdistill.numerics import l2_normalize, seeded_rng


def random_bank(seed, n=40, d=6, k=4, n_out=5):
    rng = seeded_rng(seed)
    feats = l2_normalize(rng.standard_normal((n, d)))
    labels = rng.integers(0, k, n)
    labels[:k] = np.arange(k)
    out = rng.choice(np.arange(k, n), n_out, replace=False)
    labels[out] = k + np.arange(n_out)
    return MemoryBank(feats, PseudoLabeling(labels, k)), rng


def test_initialize_identical_instances_and_determinism():
    rng = seeded_rng(0)
    enc = init_encoder(rng, 5, 8, 3)
    raw = rng.standard_normal((6, 5))
    raw[3] = raw[1]
    bank = MemoryBank.initialize(enc, raw)
    assert np.array_equal(bank.features[1], bank.features[3])
    np.testing.assert_allclose(np.linalg.norm(bank.features, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(MemoryBank.initialize(enc, raw).features, bank.features)


def test_momentum_update_limits():
    bank = MemoryBank(np.array([[1.0, 0.0]]))
    q = np.array([0.0, 1.0])
    assert np.array_equal(bank.momentum_update(0, q, 1.0), [1.0, 0.0])
    assert np.array_equal(bank.momentum_update(0, q, 0.0), q)


def test_momentum_update_hand_case():
    bank = MemoryBank(np.array([[1.0, 0.0]]))
    out = bank.momentum_update(0, np.array([0.0, 1.0]), 0.3)
    np.testing.assert_allclose(out, [0.3 / np.sqrt(0.58), 0.7 / np.sqrt(0.58)], atol=1e-15)
    np.testing.assert_allclose(out, [0.39392, 0.91915], atol=1e-5)


def test_momentum_update_bad_index():
    bank = MemoryBank(np.eye(2))
    with pytest.raises(IndexError):
        bank.momentum_update(2, np.array([1.0, 0.0]), 0.5)
    with pytest.raises(IndexError):
        bank.momentum_update(-1, np.array([1.0, 0.0]), 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(0, 0.999), min_size=1, max_size=30))
def test_slots_stay_unit_after_updates(seed, ms):
    rng = seeded_rng(seed)
    bank = MemoryBank(rng.standard_normal((5, 4)))
    for m in ms:
        bank.momentum_update(int(rng.integers(5)), l2_normalize(rng.standard_normal(4)), m)
    np.testing.assert_allclose(np.linalg.norm(bank.features, axis=1), 1.0, atol=1e-6)
    assert len(bank) == 5


def test_centroid_hand_cases():
    bank = MemoryBank(np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]),
                      PseudoLabeling(np.array([0, 0, 1]), 1))
    c = bank.compute_centroids()
    assert len(c) == 1
    np.testing.assert_array_equal(c.raw[0], [0.5, 0.5])
    np.testing.assert_allclose(c.unit[0], [0.70711, 0.70711], atol=1e-5)
    v = l2_normalize(np.array([1.0, 2.0]))
    rep = MemoryBank(np.tile(v, (3, 1)), PseudoLabeling(np.zeros(3, dtype=int), 1))
    np.testing.assert_allclose(rep.compute_centroids().raw[0], v, atol=1e-15)


def test_centroids_require_clusters():
    bank = MemoryBank(np.eye(3), PseudoLabeling(np.arange(3), 0))
    with pytest.raises(NoClustersError):
        bank.compute_centroids()
    with pytest.raises(NoClustersError):
        bank.hardest_negatives(np.array([1.0, 0, 0]))


@pytest.mark.parametrize("seed", range(5))
def test_centroids_match_groupwise_mean(seed):
    bank, _ = random_bank(seed)
    c = bank.compute_centroids()
    for k in range(bank.num_clusters):
        rows = [bank.features[i] for i in range(len(bank)) if bank.labels[i] == k]
        brute = np.sum(rows, axis=0) / len(rows)
        np.testing.assert_allclose(c.raw[k], brute, atol=1e-15)
        assert abs(np.linalg.norm(c.unit[k]) - 1) < 1e-12


def test_hardest_positive_hand_cases():
    q = np.array([1.0, 0.0])
    fa = np.array([0.9, np.sqrt(1 - 0.81)])
    fb = np.array([0.2, np.sqrt(1 - 0.04)])
    bank = MemoryBank(np.vstack([fa, fb, [0.0, 1.0]]), PseudoLabeling(np.array([0, 0, 1]), 2))
    j, f = bank.hardest_positive(q, 0)
    assert j == 1 and np.array_equal(f, bank.features[1])
    assert bank.hardest_positive(q, 1)[0] == 2
    with pytest.raises(IndexError):
        bank.hardest_positive(q, 5)


def test_hardest_negative_hand_cases():
    q = l2_normalize(np.array([1.0, 1.0]))
    one = MemoryBank(np.eye(2), PseudoLabeling(np.array([0, 0]), 1))
    picks, feats = one.hardest_negatives(q, exclude=0)
    assert picks.size == 0 and feats.shape == (0, 2)
    bank = MemoryBank(np.vstack([np.eye(2), q]), PseudoLabeling(np.array([0, 0, 1]), 2))
    picks, feats = bank.hardest_negatives(q, exclude=0)
    assert picks.tolist() == [2] and feats[0] @ q == pytest.approx(1.0)


def test_ties_go_to_lowest_index():
    f = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    bank = MemoryBank(f, PseudoLabeling(np.zeros(3, dtype=int), 1))
    q = np.array([0.0, 1.0])
    assert bank.hardest_positive(q, 0)[0] == 0
    assert bank.hardest_negatives(q)[0].tolist() == [0]


@pytest.mark.parametrize("seed", range(5))
def test_mining_matches_exhaustive_scan(seed):
    bank, rng = random_bank(seed)
    q = l2_normalize(rng.standard_normal(6))
    neg_idx, _ = bank.hardest_negatives(q, exclude=1)
    expected = []
    for k in range(bank.num_clusters):
        best, best_s = None, -np.inf
        worst, worst_s = None, np.inf
        for i in range(len(bank)):
            if bank.labels[i] != k:
                continue
            s = float(bank.features[i] @ q)
            if s > best_s:
                best, best_s = i, s
            if s < worst_s:
                worst, worst_s = i, s
        if k != 1:
            expected.append(best)
        assert bank.hardest_positive(q, k)[0] == worst
    assert neg_idx.tolist() == expected


def test_labeling_size_mismatch():
    with pytest.raises(ValueError):
        MemoryBank(np.eye(3), PseudoLabeling(np.zeros(2, dtype=int), 1))
