import math

import numpy as np
import pytest

from concad.engine import ops
from concad.engine.gradcheck import grad_check
from concad.engine.init import RngStream
from concad.losses import (
    LossConfig,
    LossResult,
    cosine_similarity,
    cross_entropy,
    cross_entropy_with_logits,
    hybrid,
    supervised_contrastive,
)


def unit_rows(n, d, seed=0):
    return ops.l2_normalize(RngStream(seed).normal(size=(n, d)), axis=1)


def naive_sc(z, labels, tau):
    """Double loop over anchors and positives; denominators skip the anchor."""
    n = len(labels)
    terms = []
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(float(z[i] @ z[k]) / tau) for k in range(n) if k != i)
        s = 0.0
        for j in pos:
            s += math.log(math.exp(float(z[i] @ z[j]) / tau) / denom)
        terms.append(-s / len(pos))
    return sum(terms) / len(terms)


def naive_sc_literal(z, labels, tau):
    """The printed form: same-label numerator includes the anchor, summed anchors."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i]]
        num = sum(math.exp(float(z[i] @ z[j]) / tau) for j in same)
        den = sum(math.exp(float(z[i] @ z[k]) / tau) for k in range(n) if k != i)
        total += -math.log(num / den) / len(same)
    return total


# --- cross entropy ------------------------------------------------------------

def test_ce_examples():
    assert cross_entropy(np.array([[0.5, 0.5]]), np.array([0])).value == pytest.approx(0.693147, abs=1e-6)
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([0])).value == 0.0
    v = cross_entropy(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([0, 1])).value
    assert v == pytest.approx((-math.log(0.9) - math.log(0.8)) / 2, abs=1e-15)
    assert round(v, 6) == 0.164252


def test_ce_clamps_zero_probability():
    res = cross_entropy(np.array([[0.0, 1.0]]), np.array([0]))
    assert res.value == pytest.approx(-math.log(1e-12))
    assert np.all(np.isfinite(res.grad))


def test_ce_gradient_wrt_probs():
    probs = ops.softmax(RngStream(1).normal(size=(5, 2)), 1)
    labels = np.array([0, 1, 1, 0, 1])
    assert grad_check(lambda p: (cross_entropy(p, labels).value, cross_entropy(p, labels).grad), probs) < 1e-6


def test_ce_with_logits_matches_composition():
    logits = RngStream(2).normal(size=(6, 2))
    labels = np.array([0, 1, 0, 0, 1, 1])
    fused = cross_entropy_with_logits(logits, labels)
    plain = cross_entropy(ops.softmax(logits, 1), labels)
    assert fused.value == pytest.approx(plain.value, abs=1e-14)
    probs = ops.softmax(logits, 1)
    np.testing.assert_allclose(fused.grad, ops.softmax_backward(plain.grad, probs, 1), atol=1e-14)
    fn = lambda x: (cross_entropy_with_logits(x, labels).value, cross_entropy_with_logits(x, labels).grad)
    assert grad_check(fn, logits) < 1e-6


def test_ce_class_weights():
    probs = np.array([[0.9, 0.1], [0.2, 0.8]])
    labels = np.array([0, 1])
    res = cross_entropy(probs, labels, class_weights=[1.0, 3.0])
    assert res.value == pytest.approx((-math.log(0.9) - 3 * math.log(0.8)) / 4)
    fn = lambda p: (cross_entropy(p, labels, [1.0, 3.0]).value, cross_entropy(p, labels, [1.0, 3.0]).grad)
    assert grad_check(fn, probs) < 1e-6


def test_ce_empty_batch():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((0, 2)), np.zeros(0, dtype=int))


# --- cosine -------------------------------------------------------------------

def test_cosine_examples():
    u = np.array([0.3, -1.2, 2.0])
    assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == -1.0
    with pytest.raises(ValueError):
        cosine_similarity(np.zeros(2), u[:2])


# --- supervised contrastive -----------------------------------------------------

def test_sc_aligned_pair_without_negatives_is_zero():
    z = np.array([[0.6, 0.8], [0.6, 0.8]])
    assert supervised_contrastive(z, np.array([1, 1]), 1.0).value == pytest.approx(0.0, abs=1e-15)


def test_sc_no_positives_is_degenerate():
    res = supervised_contrastive(np.eye(2), np.array([0, 1]), 1.0)
    assert res.value == 0.0 and res.degenerate
    np.testing.assert_array_equal(res.grad, 0.0)


def test_sc_orthonormal_against_naive_loop():
    labels = np.array([0, 0, 1, 1])
    got = supervised_contrastive(np.eye(4), labels, 0.5).value
    assert abs(got - naive_sc(np.eye(4), labels, 0.5)) < 1e-10
    # closed form: each anchor sees one positive and three others, all orthogonal
    assert got == pytest.approx(math.log(3.0), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sc_random_against_naive_loop(seed):
    r = RngStream(seed)
    z = unit_rows(8, 5, seed)
    labels = r.integers(0, 2, size=8)
    labels[:2] = [0, 1]
    labels[2:4] = [0, 1]
    for tau in (1.0, 0.5, 0.1):
        assert abs(supervised_contrastive(z, labels, tau).value - naive_sc(z, labels, tau)) < 1e-10
        lit = supervised_contrastive(z, labels, tau, include_anchor=True).value
        assert abs(lit - naive_sc_literal(z, labels, tau)) < 1e-9


def test_sc_is_nonnegative_per_anchor():
    for seed in range(10):
        z = unit_rows(6, 3, seed)
        assert supervised_contrastive(z, np.array([0, 0, 0, 1, 1, 1]), 0.1).value >= 0.0


def test_sc_rejects_unnormalized_rows():
    with pytest.raises(ValueError):
        supervised_contrastive(np.ones((2, 2)), np.array([0, 0]), 0.1)


def test_sc_permutation_invariance():
    z = unit_rows(8, 4, 3)
    labels = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    perm = RngStream(9).permutation(8)
    a = supervised_contrastive(z, labels, 0.2).value
    b = supervised_contrastive(z[perm], labels[perm], 0.2).value
    assert abs(a - b) < 1e-10


def test_sc_orthogonal_invariance():
    z = unit_rows(8, 4, 4)
    labels = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    q, _ = np.linalg.qr(RngStream(5).normal(size=(4, 4)))
    a = supervised_contrastive(z, labels, 0.2).value
    b = supervised_contrastive(z @ q, labels, 0.2).value
    assert abs(a - b) < 1e-10


@pytest.mark.parametrize("include_anchor", [False, True])
@pytest.mark.parametrize("n", [4, 6, 8])
def test_sc_gradient_through_normalization(n, include_anchor):
    """Check d SC / d h where z = h / |h|, so off-sphere perturbations are allowed."""
    h = RngStream(n).normal(size=(n, 3))
    labels = np.arange(n) % 2

    def fn(x):
        z, cache = ops.l2_normalize_forward(x, axis=1)
        res = supervised_contrastive(z, labels, 0.5, include_anchor)
        return res.value, ops.l2_normalize_backward(res.grad, cache)

    assert grad_check(fn, h) < 1e-6


def test_sc_temperature_monotonicity_probe():
    """Lower temperature widens the gap between a separated and a mixed batch."""
    labels = np.array([0, 0, 1, 1])
    separated = ops.l2_normalize(np.array([[1.0, 0.1], [1.0, -0.1], [-1.0, 0.1], [-1.0, -0.1]]), axis=1)
    mixed = ops.l2_normalize(np.array([[1.0, 0.1], [-1.0, -0.1], [1.0, -0.1], [-1.0, 0.1]]), axis=1)
    gaps = [supervised_contrastive(mixed, labels, t).value - supervised_contrastive(separated, labels, t).value
            for t in (1.0, 0.5, 0.1)]
    assert gaps[0] > 0
    assert gaps[0] < gaps[1] < gaps[2]


# --- hybrid ----------------------------------------------------------------

def test_hybrid_identities():
    ce = LossResult(0.6, np.array([[0.1, -0.1]]))
    sc = LossResult(0.4, np.array([[0.3, 0.2, 0.1]]))
    h1 = hybrid(ce, sc, 1.0)
    assert h1.value == ce.value
    np.testing.assert_array_equal(h1.grad_logits, ce.grad)
    np.testing.assert_array_equal(h1.grad_z, 0.0)
    h0 = hybrid(ce, sc, 0.0)
    assert h0.value == sc.value
    np.testing.assert_array_equal(h0.grad_logits, 0.0)
    np.testing.assert_array_equal(h0.grad_z, sc.grad)
    assert hybrid(ce, sc, 0.5).value == pytest.approx(0.5, abs=1e-15)


def test_hybrid_gradient_is_convex_combination():
    ce = LossResult(1.3, RngStream(1).normal(size=(4, 2)))
    sc = LossResult(2.1, RngStream(2).normal(size=(4, 3)))
    h = hybrid(ce, sc, 0.3)
    np.testing.assert_array_equal(h.grad_logits, 0.3 * ce.grad)
    np.testing.assert_array_equal(h.grad_z, 0.7 * sc.grad)


def test_hybrid_rejects_bad_lambda():
    r = LossResult(0.0, np.zeros(1))
    with pytest.raises(ValueError):
        hybrid(r, r, 1.5)
    with pytest.raises(ValueError):
        LossConfig(lam=-0.1)
    with pytest.raises(ValueError):
        LossConfig(tau=0.0)
