import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genrenet.errors import ConfigError, LabelError
from genrenet.losses import (ContrastiveParams, MultitaskConfig, PairBatch,
                             PairConvention, TripletBatch, TripletParams,
                             combine, contrastive, cross_entropy,
                             euclidean_distance, triplet)
from genrenet.tensor import Rng


def central_diff(f, x, h=1e-6):
    """Elementwise central differences of a scalar function of a matrix."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, tol=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    mask = np.maximum(np.abs(analytic), np.abs(numeric)) > 1e-8
    assert (np.abs(analytic - numeric)[mask] / denom[mask] < tol).all()


# --------------------------------------------------------------------------
# cross-entropy
# --------------------------------------------------------------------------

def test_cross_entropy_confident_prediction():
    logits = np.array([[50.0, 0.0, 0.0]])
    loss, _ = cross_entropy(logits, [0])
    assert loss < 1e-6


def test_cross_entropy_uniform_logits():
    logits = np.zeros((4, 10))
    loss, _ = cross_entropy(logits, [0, 3, 5, 9])
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_cross_entropy_matches_direct_formula():
    # independent oracle: per-sample -log(exp(l_t) / sum exp(l_k))
    logits = np.array([[0.3, -1.2, 2.0], [1.5, 1.5, -0.5]])
    labels = [2, 0]
    expected = 0.0
    for row, lab in zip(logits, labels):
        z = sum(math.exp(v) for v in row)
        expected -= math.log(math.exp(row[lab]) / z)
    expected /= 2
    loss, _ = cross_entropy(logits, labels)
    assert loss == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 2 ** 32), st.floats(-100, 100))
def test_cross_entropy_shift_invariance(seed, c):
    rng = Rng(seed)
    logits = rng.normal(5, 7)
    labels = np.arange(5) % 7
    base, _ = cross_entropy(logits, labels)
    shifted, _ = cross_entropy(logits + c, labels)
    assert shifted == pytest.approx(base, abs=1e-10)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((2, 3)), [-1, 0])


def test_cross_entropy_gradient_matches_finite_differences():
    for seed in range(20):
        rng = Rng(seed)
        logits = rng.normal(4, 5)
        labels = np.arange(4) % 5
        _, grad = cross_entropy(logits, labels)
        numeric = central_diff(lambda: cross_entropy(logits, labels)[0], logits)
        assert_grad_close(grad, numeric)


# --------------------------------------------------------------------------
# distance
# --------------------------------------------------------------------------

def test_distance_of_identical_vectors_is_sqrt_eps():
    d = euclidean_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], eps=1e-6)
    assert d == pytest.approx(1e-3, rel=1e-12)


def test_distance_hand_case():
    assert euclidean_distance([0.0, 0.0], [3.0, 4.0], eps=0.0) == 5.0


@given(st.integers(0, 2 ** 32))
def test_distance_symmetry(seed):
    rng = Rng(seed)
    a, b = rng.normal(1, 6).ravel(), rng.normal(1, 6).ravel()
    assert euclidean_distance(a, b) == euclidean_distance(b, a)


# --------------------------------------------------------------------------
# contrastive
# --------------------------------------------------------------------------

def _pair(z1, z2, y):
    return PairBatch(np.atleast_2d(z1), np.atleast_2d(z2), [y])


def test_contrastive_similar_identical_vectors():
    params = ContrastiveParams(epsilon=1e-6)
    loss, g1, g2 = contrastive(_pair([1.0, 1.0], [1.0, 1.0], 0), params)
    assert loss == 1e-6          # D^2 with D = sqrt(eps)
    assert np.all(g1 == 0) and np.all(g2 == 0)


def test_contrastive_dissimilar_past_margin_is_zero():
    params = ContrastiveParams(margin=1.0, epsilon=1e-12)
    loss, g1, g2 = contrastive(_pair([0.0, 0.0], [3.0, 4.0], 1), params)   # D = 5
    assert loss == 0.0
    assert np.all(g1 == 0) and np.all(g2 == 0)


def test_contrastive_dissimilar_identical_vectors():
    params = ContrastiveParams(margin=1.0, epsilon=1e-12)
    loss, _, _ = contrastive(_pair([2.0, 2.0], [2.0, 2.0], 1), params)
    assert loss == pytest.approx(1.0, rel=1e-5)    # (m - D)^2 with D ~ 0


def test_contrastive_swapped_convention_exchanges_terms():
    std = ContrastiveParams()
    swp = ContrastiveParams(convention=PairConvention.SWAPPED)
    z1, z2 = [0.0, 0.0], [0.3, 0.4]
    assert contrastive(_pair(z1, z2, 0), std)[0] == \
        contrastive(_pair(z1, z2, 1), swp)[0]
    assert contrastive(_pair(z1, z2, 1), std)[0] == \
        contrastive(_pair(z1, z2, 0), swp)[0]


def test_contrastive_monotonic_in_distance():
    params = ContrastiveParams(margin=1.0)
    ds = np.linspace(0.05, 2.0, 30)

    def loss_at(d, y):
        return contrastive(_pair([0.0, 0.0], [d, 0.0], y), params)[0]

    similar = [loss_at(d, 0) for d in ds]
    assert all(b > a for a, b in zip(similar, similar[1:]))
    dissimilar = [loss_at(d, 1) for d in ds]
    assert all(b <= a for a, b in zip(dissimilar, dissimilar[1:]))
    assert all(loss_at(d, 1) == 0.0 for d in ds if d >= 1.0 + 1e-3)


@pytest.mark.parametrize("convention", list(PairConvention))
def test_contrastive_gradient_matches_finite_differences(convention):
    params = ContrastiveParams(convention=convention)
    for seed in range(20):
        rng = Rng(seed)
        z1, z2 = rng.normal(6, 4), rng.normal(6, 4)
        y = np.arange(6) % 2
        batch = PairBatch(z1, z2, y)
        _, g1, g2 = contrastive(batch, params)
        n1 = central_diff(lambda: contrastive(PairBatch(z1, z2, y), params)[0], z1)
        n2 = central_diff(lambda: contrastive(PairBatch(z1, z2, y), params)[0], z2)
        assert_grad_close(g1, n1)
        assert_grad_close(g2, n2)


@given(st.integers(0, 2 ** 32))
def test_contrastive_nonnegative_under_standard_convention(seed):
    rng = Rng(seed)
    batch = PairBatch(rng.normal(5, 3), rng.normal(5, 3), np.arange(5) % 2)
    assert contrastive(batch, ContrastiveParams())[0] >= 0.0


# --------------------------------------------------------------------------
# triplet
# --------------------------------------------------------------------------

def test_triplet_hand_case_inactive_hinge():
    # distances 0.2 vs 0.9 with margin 0.3 -> raw -0.4 -> hinged to 0
    params = TripletParams(margin=0.3, epsilon=1e-18)
    batch = TripletBatch([[0.0]], [[0.2]], [[0.9]])
    loss, ga, gp, gn = triplet(batch, params)
    assert loss == 0.0
    assert np.all(ga == 0) and np.all(gp == 0) and np.all(gn == 0)


def test_triplet_positive_equals_negative_gives_margin():
    params = TripletParams(margin=0.2)
    batch = TripletBatch([[1.0, 0.0]], [[0.0, 3.0]], [[0.0, 3.0]])
    loss, _, _, _ = triplet(batch, params)
    assert loss == pytest.approx(0.2, abs=1e-15)   # distances cancel exactly


def test_triplet_anchor_equals_positive_far_negative():
    params = TripletParams(margin=0.3)
    batch = TripletBatch([[0.0, 0.0]], [[0.0, 0.0]], [[5.0, 0.0]])
    loss, _, _, _ = triplet(batch, params)
    assert loss == 0.0


def test_triplet_unhinged_can_go_negative():
    params = TripletParams(margin=0.1, hinge=False, epsilon=1e-18)
    batch = TripletBatch([[0.0]], [[0.1]], [[3.0]])
    loss, _, _, _ = triplet(batch, params)
    assert loss == pytest.approx(0.1 - 3.0 + 0.1, abs=1e-9)


@pytest.mark.parametrize("hinge", [True, False])
def test_triplet_gradient_matches_finite_differences(hinge):
    params = TripletParams(margin=0.5, hinge=hinge)
    for seed in range(20):
        rng = Rng(seed)
        a, p, n = rng.normal(6, 4), rng.normal(6, 4), rng.normal(6, 4)
        loss_fn = lambda: triplet(TripletBatch(a, p, n), params)[0]
        _, ga, gp, gn = triplet(TripletBatch(a, p, n), params)
        assert_grad_close(ga, central_diff(loss_fn, a))
        assert_grad_close(gp, central_diff(loss_fn, p))
        assert_grad_close(gn, central_diff(loss_fn, n))


@given(st.integers(0, 2 ** 32))
def test_triplet_nonnegative_with_hinge(seed):
    rng = Rng(seed)
    batch = TripletBatch(rng.normal(4, 3), rng.normal(4, 3), rng.normal(4, 3))
    assert triplet(batch, TripletParams())[0] >= 0.0


# --------------------------------------------------------------------------
# multitask combination
# --------------------------------------------------------------------------

def test_combine_degenerate_single_ce():
    mt = MultitaskConfig.single_ce()
    grads = (np.ones((2, 3)),)
    total, scaled = combine([("ce", 1.25, grads)], mt)
    assert total == 1.25
    assert len(scaled) == 1
    assert np.array_equal(scaled[0][0], grads[0])


def test_combine_weighted_sum_exact():
    mt = MultitaskConfig(head_weights=(("ce", 0.35), ("ce", 0.35),
                                       ("contrastive", 0.3)))
    parts = [("ce", 1.1, (np.ones((1, 2)),)),
             ("ce", 0.7, (np.ones((1, 2)),)),
             ("contrastive", 2.0, (np.ones((1, 2)), np.ones((1, 2))))]
    total, scaled = combine(parts, mt)
    assert total == 0.35 * 1.1 + 0.35 * 0.7 + 0.3 * 2.0
    assert np.all(scaled[2][0] == 0.3)


def test_combine_rejects_mismatched_tags():
    mt = MultitaskConfig(head_weights=(("ce", 0.5), ("triplet", 0.5)))
    with pytest.raises(ConfigError):
        combine([("ce", 1.0, ()), ("contrastive", 1.0, ())], mt)


@given(st.integers(0, 2 ** 32), st.floats(0.1, 10))
def test_combine_linearity(seed, scale):
    rng = Rng(seed)
    mt = MultitaskConfig(head_weights=(("ce", 0.6), ("triplet", 0.4)))
    g_ce = rng.normal(3, 2)
    g_tr = tuple(rng.normal(3, 2) for _ in range(3))
    parts = [("ce", 0.9, (g_ce,)), ("triplet", 0.4, g_tr)]
    scaled_parts = [(t, l * scale, tuple(g * scale for g in gs))
                    for t, l, gs in parts]
    base, _ = combine(parts, mt)
    scaled_total, _ = combine(scaled_parts, mt)
    assert scaled_total == pytest.approx(base * scale, rel=1e-12)


def test_multitask_config_normalizes_with_warning():
    with pytest.warns(UserWarning, match="normalizing"):
        mt = MultitaskConfig.from_weights(
            [("ce", 0.23), ("ce", 0.23), ("ce", 0.23), ("triplet", 0.3)])
    assert sum(mt.weights) == pytest.approx(1.0, abs=1e-15)
    assert mt.n_ce_heads == 3 and mt.metric_tag == "triplet"


def test_multitask_config_validation():
    with pytest.raises(ConfigError):
        MultitaskConfig(head_weights=(("ce", 0.5), ("ce", 0.6)))   # sum != 1
    with pytest.raises(ConfigError):
        MultitaskConfig(head_weights=(("ce", -0.2), ("ce", 1.2)))
    with pytest.raises(ConfigError):
        MultitaskConfig(head_weights=(("contrastive", 0.5), ("triplet", 0.5)))
    with pytest.raises(ConfigError):
        MultitaskConfig(head_weights=(("ce", 0.5), ("banana", 0.5)))


def test_multitask_parse_round_trip():
    mt = MultitaskConfig.parse("ce:0.35,ce:0.35,contrastive:0.3")
    assert mt.describe() == "ce:0.35,ce:0.35,contrastive:0.3"
    assert mt.metric_weight == 0.3
    with pytest.raises(ConfigError):
        MultitaskConfig.parse("ce=1.0")


def test_losses_are_pure():
    rng = Rng(5)
    z1, z2 = rng.normal(4, 3), rng.normal(4, 3)
    y = np.arange(4) % 2
    snap1, snap2 = z1.copy(), z2.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        contrastive(PairBatch(z1, z2, y), ContrastiveParams())
    assert np.array_equal(z1, snap1) and np.array_equal(z2, snap2)
