import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2gdistill.clustering import PseudoLabeling
from l2gdistill.errors import DimensionError, NoClustersError, SamplerContractViolation
from l2gdistill.losses import (BatchContext, class_probabilities, distillation_loss,
                               distillation_term, global_memory_loss, l2g_loss,
                               local_batch_loss, total_loss)
from l2gdistill.memory import MemoryBank
from l2gdistill.numerics import l2_normalize, seeded_rng

from gradcheck import numeric_grad, rel_error

FD_EPS = 1e-4
FD_TOL = 1e-4


def unit(rng, *shape):
    return l2_normalize(rng.standard_normal(shape))


def random_problem(seed, d=8, k=4, per=5, n_out=3, b=8):
    """Bank with k clusters of ``per`` members plus ``n_out`` outliers, and a
    batch mixing clustered and outlier queries (two replicas each)."""
    rng = seeded_rng(seed)
    n = k * per + n_out
    labels = np.concatenate([np.repeat(np.arange(k), per), k + np.arange(n_out)])
    bank = MemoryBank(unit(rng, n, d), PseudoLabeling(labels, k))
    slots = np.array([0, 1, per, per + 1, k * per, k * per, k * per + 1, k * per + 1])[:b]
    q = unit(rng, len(slots), d)
    t = unit(rng, len(slots), d)
    return BatchContext(q, t, labels[slots], slots), bank, rng


def fd_check(value_fn, ctx, analytic):
    num = numeric_grad(lambda: value_fn(ctx), ctx.queries, eps=FD_EPS)
    return rel_error(analytic, num)


# global memory loss ---------------------------------------------------------

def test_global_saturated_margin_is_zero():
    pos = np.array([1.0, 0.0])
    feats = np.array([pos, pos, -pos, -pos])
    bank = MemoryBank(feats, PseudoLabeling(np.array([0, 0, 1, 1]), 2))
    ctx = BatchContext(pos[None, :], pos[None, :], np.array([0]), np.array([0]))
    out = global_memory_loss(ctx, bank, tau=0.01)
    assert out.value == pytest.approx(0.0, abs=1e-80)


def test_global_equal_similarity_is_ln2():
    q = np.array([1.0, 0.0])
    a = l2_normalize([1.0, 1.0])
    b = l2_normalize([1.0, -1.0])
    bank = MemoryBank(np.array([a, a, b, b]), PseudoLabeling(np.array([0, 0, 1, 1]), 2))
    ctx = BatchContext(q[None, :], q[None, :], np.array([0]), np.array([0]))
    assert global_memory_loss(ctx, bank, tau=0.05).value == pytest.approx(math.log(2), abs=1e-12)


def test_global_single_candidate_flagged():
    feats = l2_normalize(np.eye(3))
    bank = MemoryBank(feats, PseudoLabeling(np.array([0, 0, 0]), 1))
    ctx = BatchContext(feats[:1], feats[:1], np.array([0]), np.array([0]))
    out = global_memory_loss(ctx, bank, tau=0.05)
    assert out.value == 0.0
    assert np.all(out.grad == 0)
    assert out.flags["degenerate_global"] == 1


def test_global_outlier_positive_is_own_slot():
    # outlier query identical to its own slot and far from everything else
    feats = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    bank = MemoryBank(feats, PseudoLabeling(np.array([0, 0, 1, 2]), 1))
    q = np.array([[0.0, 1.0]])
    ctx = BatchContext(q, q, np.array([2]), np.array([3]))
    out = global_memory_loss(ctx, bank, tau=1.0)
    # candidates: own slot (sim 1), hardest of cluster 0 (sim 0), other outlier (sim 0)
    assert out.value == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-12)


@pytest.mark.parametrize("mining", [True, False])
@pytest.mark.parametrize("seed", range(20))
def test_global_gradient_fd(seed, mining):
    ctx, bank, _ = random_problem(seed)
    f = lambda c: global_memory_loss(c, bank, 0.5, mining=mining).value
    out = global_memory_loss(ctx, bank, 0.5, mining=mining)
    assert fd_check(f, ctx, out.grad) <= FD_TOL


def test_global_monotone_in_positive_similarity():
    q = np.array([1.0, 0.0, 0.0])
    neg = l2_normalize([0.2, 1.0, 0.0])
    vals = []
    for c in np.linspace(-0.9, 0.9, 7):
        pos = l2_normalize([c, 0.0, math.sqrt(1 - c * c)])
        bank = MemoryBank(np.array([pos, neg]), PseudoLabeling(np.array([0, 1]), 2))
        ctx = BatchContext(q[None], q[None], np.array([0]), np.array([0]))
        vals.append(global_memory_loss(ctx, bank, 0.1).value)
    assert all(a > b for a, b in zip(vals, vals[1:]))


# local batch loss -----------------------------------------------------------

def test_local_single_identity_is_zero():
    rng = seeded_rng(0)
    q = unit(rng, 4, 5)
    ctx = BatchContext(q, q, np.zeros(4, dtype=int), np.arange(4))
    out = local_batch_loss(ctx, 0.05)
    assert out.value == 0.0 and np.all(out.grad == 0)


def test_local_equal_similarities():
    # orthonormal batch: positive and both negatives all at similarity 0 -> ln 3
    q = np.eye(4)
    ctx = BatchContext(q, q, np.array([0, 0, 1, 1]), np.arange(4))
    assert local_batch_loss(ctx, 0.05).value == pytest.approx(math.log(3), abs=1e-12)


def test_local_closed_form_mixed_batch():
    # query 0: positive row 1 and negative row 2 both at similarity 0
    q = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    ctx = BatchContext(q, None, np.array([0, 0, 1, 1]), np.arange(4))
    out = local_batch_loss(ctx, 1.0)
    # rows 0,1: ln(1 + 2) (two negatives); rows 2,3: positive at sim 1, two negatives at 0
    expected = (2 * math.log(3) + 2 * -math.log(math.e / (math.e + 2))) / 4
    assert out.value == pytest.approx(expected, abs=1e-12)
    two = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert local_batch_loss(BatchContext(two, None, np.array([0, 0]), np.arange(2)), 1.0).value == 0.0


def test_local_saturated_and_two_way():
    # each query: positive at sim 1, two negatives at sim 0
    ctx = BatchContext(np.eye(2)[[0, 0, 1, 1]], None, np.array([0, 0, 1, 1]), np.arange(4))
    expected = -math.log(math.e / (math.e + 2))
    assert local_batch_loss(ctx, 1.0).value == pytest.approx(expected, abs=1e-12)


def test_local_missing_partner_raises():
    q = np.eye(3)
    ctx = BatchContext(q, q, np.array([0, 1, 1]), np.arange(3))
    with pytest.raises(SamplerContractViolation):
        local_batch_loss(ctx, 0.05)


@pytest.mark.parametrize("seed", range(20))
def test_local_gradient_fd(seed):
    rng = seeded_rng(100 + seed)
    q = unit(rng, 8, 6)
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    ctx = BatchContext(q, q, labels, np.arange(8))
    out = local_batch_loss(ctx, 0.5)
    assert fd_check(lambda c: local_batch_loss(c, 0.5).value, ctx, out.grad) <= FD_TOL


@pytest.mark.parametrize("seed", range(5))
def test_l2g_is_sum_and_gradients_add(seed):
    ctx, bank, _ = random_problem(seed)
    g = global_memory_loss(ctx, bank, 0.5)
    loc = local_batch_loss(ctx, 0.5)
    both = l2g_loss(ctx, bank, 0.5)
    assert both.value == pytest.approx(g.value + loc.value, abs=1e-14)
    np.testing.assert_allclose(both.grad, g.grad + loc.grad, atol=1e-15)
    assert fd_check(lambda c: l2g_loss(c, bank, 0.5).value, ctx, both.grad) <= FD_TOL


# probabilities and distillation --------------------------------------------

def test_class_probabilities_examples():
    c = np.eye(3)
    q = l2_normalize(np.ones(3))
    np.testing.assert_allclose(class_probabilities(q, c, 0.7), np.full(3, 1 / 3), atol=1e-15)
    # nearest centroid ahead of the other by a 0.9 similarity margin
    c2 = np.array([[1.0, 0.0], [0.1, math.sqrt(0.99)]])
    p = class_probabilities(np.array([1.0, 0.0]), c2, 0.01)
    assert p[0] > 1 - 1e-30 or p[0] == 1.0
    assert p[1] < 1e-30
    # K=2 with similarities 0.9, 0.1 at tau 1
    cents = np.array([[0.9, math.sqrt(1 - 0.81)], [0.1, -math.sqrt(1 - 0.01)]])
    p = class_probabilities(np.array([1.0, 0.0]), cents, 1.0)
    np.testing.assert_allclose(p, [0.68997448, 0.31002552], atol=1e-8)
    with pytest.raises(NoClustersError):
        class_probabilities(q, np.empty((0, 3)), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_class_probabilities_sum_to_one(seed, tau):
    rng = seeded_rng(seed)
    p = class_probabilities(unit(rng, 4, 6), unit(rng, 5, 6), tau)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_distillation_examples():
    assert distillation_loss(np.array([0.3, 0.7]), np.array([0.3, 0.7])).value == 0.0
    assert distillation_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])).value == 2.0
    with pytest.raises(DimensionError):
        distillation_loss(np.ones(2) / 2, np.ones(3) / 3)


def test_distillation_zero_when_views_agree():
    rng = seeded_rng(3)
    q = unit(rng, 4, 6)
    c = unit(rng, 3, 6)
    out = distillation_term(q, q, c, 0.5, 0.5)
    assert out.value == 0.0
    assert np.all(out.grad == 0)


@pytest.mark.parametrize("seed", range(20))
def test_distillation_gradient_fd(seed):
    rng = seeded_rng(200 + seed)
    qs, qt, c = unit(rng, 6, 8), unit(rng, 6, 8), unit(rng, 4, 8)
    out = distillation_term(qs, qt, c, 1.0, 0.5)
    ctx = BatchContext(qs, qt, None, None)
    f = lambda cx: distillation_term(cx.queries, qt, c, 1.0, 0.5).value
    assert fd_check(f, ctx, out.grad) <= FD_TOL


def test_total_gamma_zero_equals_l2g():
    ctx, bank, _ = random_problem(0)
    cents = bank.compute_centroids()
    a = total_loss(ctx, bank, cents, gamma=0.0, tau=0.5)
    b = l2g_loss(ctx, bank, 0.5)
    assert a.value == b.value
    np.testing.assert_array_equal(a.grad, b.grad)


@pytest.mark.parametrize("seed", range(5))
def test_total_is_weighted_sum(seed):
    ctx, bank, _ = random_problem(seed)
    cents = bank.compute_centroids()
    t = total_loss(ctx, bank, cents, gamma=0.2, tau=0.5, tau_s=1.0, tau_t=0.5)
    l2g = l2g_loss(ctx, bank, 0.5)
    d = distillation_term(ctx.queries, ctx.teacher, cents.unit, 1.0, 0.5)
    assert t.value == pytest.approx(l2g.value + 0.2 * d.value, abs=1e-13)
    np.testing.assert_allclose(t.grad, l2g.grad + 0.2 * d.grad, atol=1e-14)
    f = lambda c: total_loss(c, bank, bank.compute_centroids(), gamma=0.2, tau=0.5).value
    assert fd_check(f, ctx, t.grad) <= FD_TOL


def test_total_without_clusters_skips_distillation():
    rng = seeded_rng(0)
    feats = unit(rng, 4, 5)
    bank = MemoryBank(feats, PseudoLabeling(np.arange(4), 0))
    q = unit(rng, 4, 5)
    ctx = BatchContext(q, q, np.array([0, 0, 1, 1]), np.array([0, 0, 1, 1]))
    out = total_loss(ctx, bank, None, gamma=0.2)
    assert out.flags.get("distill_skipped")
    assert out.terms["distill"] == 0.0


def test_losses_finite_at_small_tau():
    ctx, bank, _ = random_problem(7)
    out = total_loss(ctx, bank, bank.compute_centroids(), gamma=0.2, tau=0.01, tau_s=0.01, tau_t=0.01)
    assert math.isfinite(out.value) and np.all(np.isfinite(out.grad))
