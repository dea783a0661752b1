"""Numerical verification of every loss component.

Frozen scalar cases were computed by direct evaluation of the defining
formulas; every analytic gradient is checked against central finite
differences on randomized 64-bit inputs.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actembed.losses import (LossGrad, PROB_FLOOR, adversarial_loss,
                             combined_loss_value, discriminator_loss,
                             discriminator_probs, neighbor_context_loss,
                             ordinal_class_probs, ordinal_loss,
                             segment_content_loss, sigmoid, smoothing_loss)
from oracles import central_difference, max_rel_error

GRAD_TOL = 1e-5


def _grad(lg: LossGrad, slc, idx=None):
    for s, i, g in lg.grads:
        if s == slc and i == idx:
            return g
    raise AssertionError(f"no gradient entry ({slc}, {idx})")


def _accumulate_w(lg: LossGrad, n_rows, d):
    """Dense output-weight gradient; duplicate row entries must add up."""
    dense = np.zeros((n_rows, d))
    for s, i, g in lg.grads:
        if s == "w":
            dense[i] += g
    return dense


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_value(self):
        assert sigmoid(2.0) == pytest.approx(0.880797, abs=1e-6)

    def test_extreme_negative_no_overflow(self):
        v = sigmoid(-700.0)
        assert 0.0 < v < 1e-300 or v > 0.0
        assert math.isfinite(v)

    def test_extreme_positive(self):
        assert sigmoid(700.0) == 1.0 or sigmoid(700.0) < 1.0 + 1e-12

    @given(st.floats(min_value=-500, max_value=500))
    def test_complement(self, x):
        assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-12)

    def test_array_matches_scalar(self):
        xs = np.linspace(-30, 30, 41)
        out = sigmoid(xs)
        for x, o in zip(xs, out):
            assert o == pytest.approx(sigmoid(float(x)), abs=1e-15)


class TestSegmentContentLoss:
    def test_zero_scores_is_thirteen_log_two(self):
        lg = segment_content_loss(np.zeros(4), 1,
                                  np.array([0, 2, 3] * 4), np.zeros((5, 4)))
        assert lg.value == pytest.approx(13 * math.log(2), abs=1e-12)

    def test_frozen_scalar_case(self):
        # -ln s(2) - ln s(3) with phi=[1,0], w_pos=[2,0], w_neg=[-3,0]
        w = np.array([[2.0, 0.0], [-3.0, 0.0]])
        lg = segment_content_loss(np.array([1.0, 0.0]), 0, np.array([1]), w)
        assert lg.value == pytest.approx(0.175515, abs=1e-6)
        np.testing.assert_allclose(_grad(lg, "anchor"), [-0.380684, 0.0],
                                   atol=1e-6)

    def test_rejects_negative_equal_to_positive(self):
        with pytest.raises(ValueError, match="equals the positive"):
            segment_content_loss(np.zeros(3), 2, np.array([1, 2]),
                                 np.zeros((4, 3)))

    def test_requires_a_negative(self):
        with pytest.raises(ValueError, match="negative"):
            segment_content_loss(np.zeros(3), 0, np.array([], dtype=int),
                                 np.zeros((4, 3)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(8, 5))
        phi = rng.normal(size=5)
        negs = np.array([1, 4, 6, 1, 2])
        a = segment_content_loss(phi, 0, negs, w)
        b = segment_content_loss(phi, 0, negs[::-1].copy(), w)
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            d, v = 8, 6
            w = rng.normal(scale=1.0, size=(v, d))
            phi = rng.normal(scale=1.0, size=d)
            pos = int(rng.integers(v))
            negs = rng.integers(0, v, size=4)
            negs[negs == pos] = (pos + 1) % v  # duplicates stay legal
            lg = segment_content_loss(phi, pos, negs, w)

            fd_phi = central_difference(
                lambda x: segment_content_loss(x, pos, negs, w).value, phi)
            assert max_rel_error(_grad(lg, "anchor"), fd_phi) < GRAD_TOL

            fd_w = central_difference(
                lambda x: segment_content_loss(phi, pos, negs, x).value, w)
            assert max_rel_error(_accumulate_w(lg, v, d), fd_w) < GRAD_TOL


class TestNeighborContextLoss:
    def test_same_form_as_content(self):
        lg = neighbor_context_loss(np.zeros(4), 1, np.array([0, 2, 3] * 4),
                                   np.zeros((5, 4)), neighbor_ids=[1])
        assert lg.value == pytest.approx(13 * math.log(2), abs=1e-12)

    def test_frozen_scalar_case(self):
        w = np.array([[2.0, 0.0], [-3.0, 0.0]])
        lg = neighbor_context_loss(np.array([1.0, 0.0]), 0, np.array([1]), w,
                                   neighbor_ids=[0])
        assert lg.value == pytest.approx(0.175515, abs=1e-6)
        # d/dw_pos = (s(2) - 1) * phi
        np.testing.assert_allclose(_grad(lg, "w", 0), [-0.119203, 0.0],
                                   atol=1e-6)

    def test_positive_must_be_a_neighbor(self):
        with pytest.raises(ValueError, match="not a neighbor"):
            neighbor_context_loss(np.zeros(3), 5, np.array([1]),
                                  np.zeros((6, 3)), neighbor_ids=[2, 4])

    def test_rejects_anchor_as_negative(self):
        with pytest.raises(ValueError, match="anchor"):
            neighbor_context_loss(np.zeros(3), 2, np.array([7]),
                                  np.zeros((8, 3)), neighbor_ids=[2],
                                  anchor_id=7)


class TestOrdinalLoss:
    W2 = np.zeros(2)
    THETA = np.array([-1.0, 1.0])

    def test_frozen_middle_rank(self):
        # -ln(s(1) - s(-1)) at z=0; direct evaluation gives 0.771937
        lg = ordinal_loss(np.array([1.0, 0.0]), 2, self.W2, self.THETA)
        expected = -math.log(sigmoid(1.0) - sigmoid(-1.0))
        assert expected == pytest.approx(0.771937, abs=1e-6)
        assert lg.value == pytest.approx(expected, abs=1e-12)

    def test_frozen_lowest_rank(self):
        lg = ordinal_loss(np.array([1.0, 0.0]), 1, self.W2, self.THETA)
        assert lg.value == pytest.approx(1.313262, abs=1e-6)

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError, match="rank"):
            ordinal_loss(np.zeros(2), 4, self.W2, self.THETA)
        with pytest.raises(ValueError, match="rank"):
            ordinal_loss(np.zeros(2), 0, self.W2, self.THETA)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError, match="classes"):
            ordinal_loss(np.zeros(2), 1, self.W2, np.zeros(0))

    @given(st.floats(min_value=-20, max_value=20))
    @settings(max_examples=50)
    def test_class_probs_sum_to_one(self, z):
        theta = np.array([-2.0, -0.5, 0.1, 3.0])
        probs = ordinal_class_probs(z, theta)
        assert np.all(probs >= 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_collapsed_thresholds_stay_finite(self):
        theta = np.array([0.0, 0.0 + 1e-13])
        lg = ordinal_loss(np.zeros(3), 2, np.zeros(3), theta)
        assert math.isfinite(lg.value)
        assert lg.value <= -math.log(PROB_FLOOR) + 1e-9

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            d, c = 8, 5
            phi = rng.normal(size=d)
            w_o = rng.normal(size=d)
            theta = np.sort(rng.normal(scale=2.0, size=c - 1))
            theta += np.arange(c - 1) * 0.1  # keep gaps healthy
            rank = int(rng.integers(1, c + 1))
            lg = ordinal_loss(phi, rank, w_o, theta)

            fd_phi = central_difference(
                lambda x: ordinal_loss(x, rank, w_o, theta).value, phi)
            assert max_rel_error(_grad(lg, "anchor"), fd_phi) < GRAD_TOL
            fd_wo = central_difference(
                lambda x: ordinal_loss(phi, rank, x, theta).value, w_o)
            assert max_rel_error(_grad(lg, "w_o"), fd_wo) < GRAD_TOL

            dense = np.zeros(c - 1)
            for s, i, g in lg.grads:
                if s == "theta":
                    dense[i] += g
            fd_theta = central_difference(
                lambda x: ordinal_loss(phi, rank, w_o, x).value, theta)
            assert max_rel_error(dense, fd_theta) < GRAD_TOL


class TestSmoothingLoss:
    def test_identical_neighbors_zero(self):
        phi = np.array([0.3, -0.2])
        lg = smoothing_loss(phi, np.stack([phi, phi]), 0.5)
        assert lg.value == 0.0
        np.testing.assert_array_equal(_grad(lg, "anchor"), np.zeros(2))

    def test_frozen_single_neighbor(self):
        lg = smoothing_loss(np.array([1.0, 0.0]), np.array([[0.0, 0.0]]), 0.25)
        assert lg.value == pytest.approx(0.25, abs=1e-12)

    def test_frozen_two_neighbors_cancel(self):
        lg = smoothing_loss(np.array([1.0, 0.0]),
                            np.array([[0.0, 0.0], [2.0, 0.0]]), 0.25)
        assert lg.value == pytest.approx(0.25, abs=1e-12)
        np.testing.assert_allclose(_grad(lg, "anchor"), [0.0, 0.0], atol=1e-12)

    def test_empty_neighbors_rejected(self):
        with pytest.raises(ValueError, match="neighbor"):
            smoothing_loss(np.zeros(2), np.zeros((0, 2)), 0.25)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            d = 8
            phi = rng.normal(size=d)
            nbrs = rng.normal(size=(3, d))
            eta = float(rng.uniform(0.05, 1.0))
            lg = smoothing_loss(phi, nbrs, eta)
            fd_phi = central_difference(
                lambda x: smoothing_loss(x, nbrs, eta).value, phi)
            assert max_rel_error(_grad(lg, "anchor"), fd_phi) < GRAD_TOL
            fd_n = central_difference(
                lambda x: smoothing_loss(phi, x, eta).value, nbrs)
            for j in range(3):
                assert max_rel_error(_grad(lg, "neighbor", j), fd_n[j]) < GRAD_TOL


class TestDiscriminator:
    def test_uniform_probs(self):
        probs = discriminator_probs(np.zeros(3), np.zeros((4, 3)))
        np.testing.assert_allclose(probs, 0.25, atol=1e-12)

    def test_frozen_two_subject_case(self):
        u = np.array([[1.0, 0.0], [0.0, 0.0]])
        probs = discriminator_probs(np.array([1.0, 0.0]), u)
        np.testing.assert_allclose(probs, [0.731059, 0.268941], atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        u = rng.normal(size=(6, 4))
        phi = rng.normal(size=4)
        base = discriminator_probs(phi, u)
        # adding a constant direction to all rows shifts all logits equally
        shifted = discriminator_probs(phi, u + 1000.0 * phi / (phi @ phi))
        np.testing.assert_allclose(base, shifted, atol=1e-9)
        assert base.sum() == pytest.approx(1.0, abs=1e-12)

    def test_perfect_prediction_zero_loss(self):
        probs = np.array([0.0, 1.0, 0.0])
        lg = discriminator_loss(probs, 1, np.ones(2))
        assert lg.value == pytest.approx(0.0, abs=1e-12)

    def test_uniform_loss_is_log_p(self):
        lg = discriminator_loss(np.full(4, 0.25), 2, np.ones(3))
        assert lg.value == pytest.approx(math.log(4), abs=1e-12)

    def test_frozen_gradient_case(self):
        u = np.array([[1.0, 0.0], [0.0, 0.0]])
        phi = np.array([1.0, 0.0])
        lg = discriminator_loss(discriminator_probs(phi, u), 1, phi)
        grad = _grad(lg, "u")
        np.testing.assert_allclose(grad[0], [0.731059, 0.0], atol=1e-6)
        np.testing.assert_allclose(grad[1], [-0.731059, 0.0], atol=1e-6)

    def test_no_gradient_reaches_phi(self):
        lg = discriminator_loss(np.full(4, 0.25), 0, np.ones(3))
        assert all(s != "anchor" for s, _, _ in lg.grads)

    def test_unknown_subject(self):
        with pytest.raises(ValueError, match="subject"):
            discriminator_loss(np.full(4, 0.25), 7, np.ones(3))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            p, d = 5, 8
            u = rng.normal(size=(p, d))
            phi = rng.normal(size=d)
            subject = int(rng.integers(p))
            lg = discriminator_loss(discriminator_probs(phi, u), subject, phi)
            fd_u = central_difference(
                lambda x: discriminator_loss(
                    discriminator_probs(phi, x), subject, phi).value, u)
            assert max_rel_error(_grad(lg, "u"), fd_u) < GRAD_TOL


class TestAdversarialLoss:
    def test_exact_negation_of_discriminator(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            p, d = 6, 5
            u = rng.normal(size=(p, d))
            phi = rng.normal(size=d)
            subject = int(rng.integers(p))
            probs = discriminator_probs(phi, u)
            l_d = discriminator_loss(probs, subject, phi).value
            l_a = adversarial_loss(probs, subject, u).value
            assert l_a == -l_d

    def test_equal_rows_zero_gradient(self):
        u = np.tile(np.array([0.4, -0.1]), (5, 1))
        probs = discriminator_probs(np.ones(2), u)
        lg = adversarial_loss(probs, 3, u)
        np.testing.assert_allclose(_grad(lg, "anchor"), 0.0, atol=1e-12)

    def test_frozen_gradient_case(self):
        u = np.array([[1.0, 0.0], [0.0, 0.0]])
        phi = np.array([1.0, 0.0])
        lg = adversarial_loss(discriminator_probs(phi, u), 0, u)
        np.testing.assert_allclose(_grad(lg, "anchor"), [0.268941, 0.0],
                                   atol=1e-6)

    def test_no_gradient_reaches_u(self):
        lg = adversarial_loss(np.full(3, 1 / 3), 0, np.ones((3, 2)))
        assert all(s == "anchor" for s, _, _ in lg.grads)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            p, d = 5, 8
            u = rng.normal(size=(p, d))
            phi = rng.normal(size=d)
            subject = int(rng.integers(p))
            lg = adversarial_loss(discriminator_probs(phi, u), subject, u)
            fd_phi = central_difference(
                lambda x: adversarial_loss(
                    discriminator_probs(x, u), subject, u).value, phi)
            assert max_rel_error(_grad(lg, "anchor"), fd_phi) < GRAD_TOL


class TestCombinedLoss:
    def test_all_zero(self):
        assert combined_loss_value(0, 0, 0, 0, 0) == 0.0

    def test_frozen_weighted_sum(self):
        value = combined_loss_value(1, 2, 3, 4, 5, beta=0.5, lam=0.05)
        assert value == pytest.approx(9.25, abs=1e-12)

    def test_absent_components_are_omitted(self):
        assert combined_loss_value(l_s=2.0, l_o=None, l_nc=None, l_r=None,
                                   l_a=None) == 2.0

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            combined_loss_value(1, 1, 1, 1, 1, beta=-0.1)


class TestFiniteness:
    def test_losses_finite_on_extreme_inputs(self):
        big = np.full(4, 1e8)
        w = np.vstack([big, -big, big])
        lg = segment_content_loss(big, 0, np.array([1, 2]), w)
        assert math.isfinite(lg.value)
        probs = discriminator_probs(big, w)
        assert math.isfinite(discriminator_loss(probs, 2, big).value)
        assert math.isfinite(adversarial_loss(probs, 2, w).value)
        assert math.isfinite(
            ordinal_loss(big, 1, np.ones(4), np.array([0.0, 5.0])).value)
