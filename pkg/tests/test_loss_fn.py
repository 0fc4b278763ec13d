import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from densegrasp.loss_fn import (adaptive_weight_mask, as_one_hot, finite_difference_check, penalty_weights,
                                weighted_ce_grad, weighted_ce_loss)


def _ref_loss(pred, classes):
    """Loop-based evaluation of the weighted cross-entropy, pixel by pixel."""
    h, w, _ = pred.shape
    counts = np.bincount(classes.ravel(), minlength=3)
    total = 0.0
    for i in range(h):
        for j in range(w):
            c = classes[i, j]
            lam = h * w / counts[c]
            z = pred[i, j]
            total += lam * -(z[c] - np.log(np.sum(np.exp(z))))
    return total / (3 * h * w)


def _random_case(rng, h=8, w=8):
    return rng.normal(scale=2.0, size=(h, w, 3)), rng.integers(0, 3, (h, w))


def test_penalty_examples():
    np.testing.assert_allclose(penalty_weights([90000, 5000, 5000]), [100000 / 90000, 20.0, 20.0])
    np.testing.assert_array_equal(penalty_weights([0, 10, 30]), [0.0, 4.0, 4.0 / 3.0])
    np.testing.assert_array_equal(penalty_weights([0, 0, 7]), [0.0, 0.0, 1.0])


def test_mask_support_is_one_hot():
    classes = np.array([[0, 1], [2, 2]])
    m = adaptive_weight_mask(classes)
    np.testing.assert_array_equal(m.sum(axis=-1), [[4.0, 4.0], [2.0, 2.0]])
    assert np.all((m > 0) == (as_one_hot(classes) == 1))


def test_single_pixel_case():
    loss = weighted_ce_loss(np.zeros((1, 1, 3)), np.array([[2]]))
    assert loss == pytest.approx(np.log(3) / 3, abs=1e-9)


def test_confident_prediction_has_zero_loss():
    classes = np.array([[0, 1, 2]])
    pred = 50.0 * as_one_hot(classes)
    assert weighted_ce_loss(pred, classes) < 1e-15
    assert np.abs(weighted_ce_grad(pred, classes)).max() < 1e-15


def test_matches_loop_reference():
    rng = np.random.default_rng(0)
    for _ in range(5):
        pred, classes = _random_case(rng, 5, 6)
        assert weighted_ce_loss(pred, classes) == pytest.approx(_ref_loss(pred, classes), rel=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    pred, classes = _random_case(rng)
    perm = rng.permutation(64)
    p2 = pred.reshape(64, 3)[perm].reshape(8, 8, 3)
    c2 = classes.reshape(64)[perm].reshape(8, 8)
    assert weighted_ce_loss(p2, c2) == pytest.approx(weighted_ce_loss(pred, classes), rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        pred, classes = _random_case(rng)
        worst = max(worst, finite_difference_check(pred, classes)["max_rel_error"])
    assert worst <= 1e-4


def test_gradient_sums_to_zero_per_pixel():
    pred, classes = _random_case(np.random.default_rng(3))
    np.testing.assert_allclose(weighted_ce_grad(pred, classes).sum(axis=-1), 0.0, atol=1e-15)


def test_zero_count_class_contributes_nothing():
    rng = np.random.default_rng(4)
    pred = rng.normal(size=(6, 6, 3))
    classes = rng.integers(0, 2, (6, 6))  # no background pixels
    g = weighted_ce_grad(pred, classes)
    bg = as_one_hot(classes)[..., 2] == 1
    assert not bg.any()
    # changing the logits of the absent class only moves probability mass; its mask column is zero
    assert np.all(adaptive_weight_mask(classes)[..., 2] == 0)
    assert weighted_ce_loss(pred, classes) == pytest.approx(_ref_loss(pred, classes), rel=1e-12)
    assert np.all(np.isfinite(g))


def test_shape_mismatch_and_bad_labels():
    with pytest.raises(ValueError):
        weighted_ce_loss(np.zeros((2, 2, 3)), np.zeros((3, 2), dtype=int))
    with pytest.raises(ValueError):
        weighted_ce_loss(np.zeros((1, 1, 3)), np.array([[3]]))
    with pytest.raises(ValueError):
        weighted_ce_loss(np.full((1, 1, 3), np.nan), np.array([[0]]))


def test_gradient_descent_decreases_loss():
    rng = np.random.default_rng(5)
    pred, classes = _random_case(rng, 10, 10)
    classes[:8] = 2
    losses = []
    for _ in range(200):
        losses.append(weighted_ce_loss(pred, classes))
        pred = pred - 0.5 * weighted_ce_grad(pred, classes) * 3 * 100
    assert np.all(np.diff(losses) < 0)


def test_batch_modes():
    rng = np.random.default_rng(6)
    preds = rng.normal(size=(2, 4, 4, 3))
    classes = rng.integers(0, 3, (2, 4, 4))
    per_sample = weighted_ce_loss(preds, classes)
    assert per_sample == pytest.approx(np.mean([weighted_ce_loss(p, c) for p, c in zip(preds, classes)]))
    pooled = adaptive_weight_mask(classes, per_batch=True)
    counts = np.bincount(classes.ravel(), minlength=3)
    np.testing.assert_allclose(pooled.sum(axis=-1), (32 / counts)[classes])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4, 3), elements=st.floats(-20, 20)),
       arrays(np.int64, (3, 4), elements=st.integers(0, 2)),
       arrays(np.float64, (3, 4, 1), elements=st.floats(-50, 50)))
def test_loss_nonnegative_and_shift_invariant(pred, classes, shift):
    loss = weighted_ce_loss(pred, classes)
    assert loss >= 0.0
    assert weighted_ce_loss(pred + shift, classes) == pytest.approx(loss, rel=1e-9, abs=1e-12)
