import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taetlab import autodiff as ad
from taetlab.losses import (
    BslConfig,
    BslLoss,
    CeLoss,
    ClassLossVector,
    HelLoss,
    HelWeights,
    balanced_softmax_loss,
    bcl,
    class_losses,
    cross_entropy,
    hdl,
    hel,
    per_sample_cross_entropy,
    rcel,
)

from fd import fd_gradient, rel_err

rng = np.random.default_rng(31)


def clv(losses, mask=None):
    losses = np.asarray(losses, dtype=float)
    return ClassLossVector(losses, np.ones_like(losses, bool) if mask is None else np.asarray(mask, bool))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.array([[0.0, 0.0]]), [0]) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_huge_margin_is_stable(self):
        value = cross_entropy(np.array([[1000.0, 0.0]]), [0])
        assert 0.0 <= value < 1e-9

    def test_two_row_batch_matches_hand_softmax(self):
        logits = np.array([[1.0, 0.0], [0.0, 2.0]])
        expected = np.mean([
            -np.log(np.e / (np.e + 1.0)),
            -np.log(np.e**2 / (1.0 + np.e**2)),
        ])
        assert cross_entropy(logits, [0, 1]) == pytest.approx(expected, abs=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            cross_entropy(np.zeros((0, 3)), [])


class TestBalancedSoftmax:
    def test_tau_zero_equals_cross_entropy(self):
        logits = rng.standard_normal((6, 4))
        y = rng.integers(0, 4, 6)
        cfg = BslConfig(np.array([40, 10, 5, 1]), tau_b=0.0)
        assert abs(balanced_softmax_loss(logits, y, cfg) - cross_entropy(logits, y)) <= 1e-12

    def test_two_class_hand_value(self):
        cfg = BslConfig(np.array([9, 1]), tau_b=1.0)
        value = balanced_softmax_loss(np.array([[0.0, 0.0]]), [1], cfg)
        assert value == pytest.approx(np.log(10.0), abs=1e-12)

    def test_uniform_counts_equal_cross_entropy(self):
        logits = rng.standard_normal((5, 3))
        y = rng.integers(0, 3, 5)
        cfg = BslConfig(np.array([7, 7, 7]), tau_b=2.5)
        assert abs(balanced_softmax_loss(logits, y, cfg) - cross_entropy(logits, y)) <= 1e-12

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            BslConfig(np.array([3, 0]))


class TestClassLosses:
    def test_hand_means(self):
        v = class_losses([1.0, 3.0, 2.0], [0, 0, 1], num_classes=2)
        np.testing.assert_allclose(v.per_class_loss, [2.0, 2.0])
        assert v.s_c == 2

    def test_single_class_batch_masks_rest(self):
        v = class_losses([0.5, 1.5], [2, 2], num_classes=4)
        assert v.s_c == 1
        np.testing.assert_array_equal(v.present_mask, [False, False, True, False])

    def test_all_zero_losses(self):
        v = class_losses([0.0, 0.0], [0, 1], num_classes=2)
        np.testing.assert_array_equal(v.present_losses, [0.0, 0.0])


class TestHelComponents:
    def test_bcl_hand_value(self):
        assert bcl(clv([1.0, 3.0])) == pytest.approx(2.0)

    def test_bcl_of_constant_losses(self):
        assert bcl(clv([0.7, 0.7, 0.7])) == pytest.approx(0.7)

    def test_bcl_singleton(self):
        assert bcl(clv([0.0, 4.2, 0.0], mask=[False, True, False])) == pytest.approx(4.2)

    def test_hdl_hand_value(self):
        assert hdl(clv([1.0, 3.0])) == pytest.approx(1.0)

    def test_hdl_zero_on_equal_losses(self):
        assert hdl(clv([2.0, 2.0, 2.0])) == 0.0

    def test_hdl_singleton_is_zero(self):
        assert hdl(clv([5.0], mask=[True])) == 0.0

    def test_rcel_hand_value(self):
        assert rcel(clv([1.0, 3.0])) == pytest.approx(0.625)

    def test_rcel_equal_losses(self):
        for s in (2, 3, 5):
            assert rcel(clv([1.3] * s)) == pytest.approx(1.0 / s)

    def test_rcel_dominant_class_tends_to_one(self):
        assert rcel(clv([10.0, 1e-9])) == pytest.approx(1.0, abs=1e-9)

    def test_rcel_all_zero_is_zero(self):
        assert rcel(clv([0.0, 0.0])) == 0.0

    def test_hel_composition(self):
        w = HelWeights(0.1, 0.1, 0.1)
        assert hel(clv([1.0, 3.0]), w) == pytest.approx(0.3625, abs=1e-12)

    def test_hel_component_isolation(self):
        v = clv([1.0, 3.0])
        assert hel(v, HelWeights(0.4, 0.0, 0.0)) == pytest.approx(0.4 * bcl(v), abs=1e-15)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            HelWeights(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            HelWeights(-0.1, 0.1, 0.1)


class TestGraphLossesAgree:
    """The autodiff builders must reproduce the plain-numpy scalars exactly."""

    def test_ce_graph_value(self):
        logits = rng.standard_normal((7, 3))
        y = rng.integers(0, 3, 7)
        out = CeLoss().graph(ad.leaf(logits), y)
        assert abs(float(out.value) - cross_entropy(logits, y)) <= 1e-12

    def test_bsl_graph_value(self):
        logits = rng.standard_normal((7, 3))
        y = rng.integers(0, 3, 7)
        cfg = BslConfig(np.array([20, 5, 2]), tau_b=1.0)
        out = BslLoss(cfg).graph(ad.leaf(logits), y)
        assert abs(float(out.value) - balanced_softmax_loss(logits, y, cfg)) <= 1e-12

    def test_hel_graph_value_matches_component_oracle(self):
        logits = rng.standard_normal((9, 4))
        y = np.array([0, 0, 1, 1, 1, 3, 3, 3, 3])  # class 2 absent
        w = HelWeights(0.1, 0.1, 0.1)
        out = HelLoss(w).graph(ad.leaf(logits), y)
        v = class_losses(per_sample_cross_entropy(logits, y), y, num_classes=4)
        assert v.s_c == 3
        assert abs(float(out.value) - hel(v, w)) <= 1e-12

    def test_hel_gradient_matches_finite_differences(self):
        logits = rng.standard_normal((6, 3))
        y = np.array([0, 0, 1, 1, 2, 2])
        w = HelWeights(0.1, 0.1, 0.1)
        z = ad.leaf(logits)
        out = HelLoss(w).graph(z, y)
        ad.backward(out)

        def f(v):
            vec = class_losses(per_sample_cross_entropy(v, y), y, num_classes=3)
            return hel(vec, w)

        assert rel_err(z.grad, fd_gradient(f, logits)).max() < 1e-4


@st.composite
def loss_vectors(draw):
    s = draw(st.integers(min_value=1, max_value=6))
    vals = draw(st.lists(st.floats(min_value=0.0, max_value=50.0), min_size=s, max_size=s))
    return clv(vals)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(loss_vectors())
    def test_hdl_nonnegative_zero_iff_equal(self, v):
        value = hdl(v)
        assert value >= 0.0
        if np.ptp(v.present_losses) == 0.0:
            assert value == 0.0

    @settings(max_examples=60, deadline=None)
    @given(loss_vectors())
    def test_rcel_bounds(self, v):
        if v.present_losses.sum() > 0:
            value = rcel(v)
            assert 1.0 / v.s_c - 1e-12 <= value <= 1.0 + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_permutation_equivariance(self, seed):
        local = np.random.default_rng(seed)
        c = int(local.integers(2, 6))
        n = int(local.integers(c, 24))
        logits = local.standard_normal((n, c))
        y = np.concatenate([np.arange(c), local.integers(0, c, n - c)])
        counts = local.integers(1, 50, c)
        perm = local.permutation(c)

        logits_p = logits[:, perm]
        y_p = np.argsort(perm)[y]
        counts_p = counts[perm]

        assert cross_entropy(logits, y) == pytest.approx(cross_entropy(logits_p, y_p), abs=1e-12)
        assert balanced_softmax_loss(logits, y, BslConfig(counts)) == pytest.approx(
            balanced_softmax_loss(logits_p, y_p, BslConfig(counts_p)), abs=1e-12
        )
        w = HelWeights(0.1, 0.2, 0.3)
        v = class_losses(per_sample_cross_entropy(logits, y), y, c)
        v_p = class_losses(per_sample_cross_entropy(logits_p, y_p), y_p, c)
        assert hel(v, w) == pytest.approx(hel(v_p, w), abs=1e-12)
