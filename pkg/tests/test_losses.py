import math
import random

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from contrank.losses import (
    LossConfig,
    combined_loss,
    dwa_weights,
    l2_distance,
    l2_distance_grad,
    mhl,
    shl,
    tml,
)

scores = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)
score_lists = st.lists(scores, min_size=1, max_size=8)
margins = st.floats(min_value=1e-3, max_value=10, allow_nan=False)


class TestShl:
    def test_margin_satisfied(self):
        value, d_pos, d_neg = shl(1.5, 0.2, 1.0)
        assert value == 0.0
        assert (d_pos, d_neg) == (0.0, 0.0)

    def test_active(self):
        value, d_pos, d_neg = shl(0.2, 1.5, 1.0)
        assert value == pytest.approx(2.3, abs=1e-12)
        assert (d_pos, d_neg) == (-1.0, 1.0)

    def test_equal_scores_give_the_margin(self):
        for s in (-3.0, 0.0, 7.25):
            value, _, _ = shl(s, s, 2.0)
            assert value == 2.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            shl(math.nan, 0.0, 1.0)
        with pytest.raises(ValueError):
            shl(0.0, math.inf, 1.0)

    @given(s_pos=scores, s_neg=scores, margin=margins)
    def test_non_negative_and_deadzone(self, s_pos, s_neg, margin):
        value, d_pos, d_neg = shl(s_pos, s_neg, margin)
        assert value >= 0.0
        if value == 0.0:
            assert d_pos == 0.0 and d_neg == 0.0

    @given(s_pos=scores, s_neg=scores, margin=margins, shift=scores)
    def test_translation_invariance(self, s_pos, s_neg, margin, shift):
        # rounding can flip the hinge's active state right at the kink
        assume(abs(margin - s_pos + s_neg) > 1e-6)
        assert shl(s_pos + shift, s_neg + shift, margin) == pytest.approx(
            shl(s_pos, s_neg, margin), abs=1e-9
        )


class TestMhl:
    def test_gradient_goes_to_the_hardest_negative(self):
        value, d_pos, d_negs = mhl(1.0, [0.1, 0.9, 0.4], 2.0)
        assert value == pytest.approx(1.9, abs=1e-12)
        assert d_pos == -1.0
        assert d_negs == [0.0, 1.0, 0.0]

    def test_inactive_hinge(self):
        value, d_pos, d_negs = mhl(10.0, [0.1, 0.9], 1.0)
        assert value == 0.0
        assert d_pos == 0.0
        assert d_negs == [0.0, 0.0]

    def test_empty_negatives_rejected(self):
        with pytest.raises(ValueError):
            mhl(1.0, [], 2.0)

    def test_tie_goes_to_the_lowest_index(self):
        _, _, d_negs = mhl(0.0, [0.7, 0.7, 0.2], 1.0)
        assert d_negs == [1.0, 0.0, 0.0]

    @given(s_pos=scores, s_neg=scores, margin=margins)
    def test_single_negative_equals_shl(self, s_pos, s_neg, margin):
        value, d_pos, d_negs = mhl(s_pos, [s_neg], margin)
        expected_value, expected_d_pos, expected_d_neg = shl(s_pos, s_neg, margin)
        assert value == expected_value
        assert d_pos == expected_d_pos
        assert d_negs == [expected_d_neg]

    def test_equals_max_over_shl(self):
        rng = random.Random(41)
        for _ in range(1000):
            margin = rng.uniform(0.1, 3.0)
            s_pos = rng.uniform(-5, 5)
            s_negs = [rng.uniform(-5, 5) for _ in range(rng.randint(1, 6))]
            value, _, _ = mhl(s_pos, s_negs, margin)
            best = max(shl(s_pos, s, margin)[0] for s in s_negs)
            assert value == best

    @given(s_pos=scores, s_negs=score_lists, margin=margins, shift=scores)
    def test_translation_invariance(self, s_pos, s_negs, margin, shift):
        assume(abs(margin - s_pos + max(s_negs)) > 1e-6)
        # ties between negatives can resolve differently after the shift
        assume(all(abs(a - b) > 1e-6 for i, a in enumerate(s_negs) for b in s_negs[:i]))
        value, d_pos, d_negs = mhl(s_pos, s_negs, margin)
        shifted_value, shifted_d_pos, shifted_d_negs = mhl(
            s_pos + shift, [s + shift for s in s_negs], margin
        )
        assert shifted_value == pytest.approx(value, abs=1e-9)
        assert shifted_d_pos == d_pos
        assert shifted_d_negs == d_negs


class TestL2Distance:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        assert l2_distance(x, x) == 0.0

    def test_three_four_five(self):
        assert l2_distance(np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(5.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            l2_distance(np.zeros(3), np.zeros(4))

    def test_matches_naive_summation(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.normal(size=32)
            y = rng.normal(size=32)
            naive = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(x, y)))
            assert l2_distance(x, y) == pytest.approx(naive, rel=1e-12)

    def test_gradient_direction(self):
        x = np.array([3.0, 0.0])
        y = np.array([0.0, 4.0])
        g = l2_distance_grad(x, y)
        np.testing.assert_allclose(g, np.array([0.6, -0.8]), atol=1e-12)

    def test_gradient_at_zero_distance_is_zero(self):
        x = np.ones(4)
        np.testing.assert_array_equal(l2_distance_grad(x, x.copy()), np.zeros(4))


def _central_difference(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        x[i] += eps
        plus = f()
        x[i] -= 2 * eps
        minus = f()
        x[i] += eps
        grad[i] = (plus - minus) / (2 * eps)
    return grad


class TestTml:
    def test_margin_satisfied(self):
        value, *grads = tml(np.zeros(2), np.array([0.0, 1.0]), np.array([3.0, 4.0]), 0.05)
        assert value == 0.0
        for g in grads:
            np.testing.assert_array_equal(g, np.zeros(2))

    def test_active_value(self):
        value, *_ = tml(np.zeros(2), np.array([3.0, 4.0]), np.array([0.0, 1.0]), 0.1)
        assert value == pytest.approx(4.1, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tml(np.zeros(3), np.zeros(3), np.zeros(2), 0.05)

    def test_zero_positive_distance_gradient_is_zero(self):
        anchor = np.array([1.0, 2.0])
        value, d_a, d_p, d_n = tml(anchor, anchor.copy(), np.array([1.0, 2.5]), 1.0)
        assert value == pytest.approx(0.5, abs=1e-12)
        np.testing.assert_array_equal(d_p, np.zeros(2))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        checked = 0
        while checked < 40:
            anchor = rng.normal(size=8)
            pos = rng.normal(size=8)
            neg = rng.normal(size=8)
            margin = rng.uniform(0.01, 1.0)
            raw = margin + l2_distance(anchor, pos) - l2_distance(anchor, neg)
            if abs(raw) < 1e-3:
                continue  # the hinge kink has no two-sided derivative
            checked += 1
            value, d_a, d_p, d_n = tml(anchor, pos, neg, margin)
            for x, analytic in ((anchor, d_a), (pos, d_p), (neg, d_n)):
                numeric = _central_difference(lambda: tml(anchor, pos, neg, margin)[0], x)
                np.testing.assert_allclose(analytic, numeric, rtol=1e-3, atol=1e-6)


class TestCombinedLoss:
    def test_weighted_average(self):
        assert combined_loss(2.0, 4.0, 0.5, 0.5) == pytest.approx(3.0, abs=1e-12)

    def test_zero_contrastive_weight_reduces_to_ranking(self):
        assert combined_loss(1.7, 99.0, 1.0, 0.0) == pytest.approx(1.7, abs=1e-12)

    @given(l_rank=scores, l_con=scores)
    def test_equal_weights_halve_the_sum(self, l_rank, l_con):
        assert combined_loss(l_rank, l_con, 0.5, 0.5) == pytest.approx(
            0.5 * (l_rank + l_con), rel=1e-12, abs=1e-12
        )

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            combined_loss(1.0, 1.0, -0.1, 0.5)


class TestDwaWeights:
    def test_start_is_pure_contrastive(self):
        assert dwa_weights(0, 1000.0) == (0.0, 1.0)

    def test_quarter_period_is_pure_ranking(self):
        w1, w2 = dwa_weights(300, 1200.0)
        assert w1 == pytest.approx(1.0, abs=1e-12)
        assert w2 == pytest.approx(0.0, abs=1e-12)

    def test_twelfth_period_is_balanced(self):
        w1, w2 = dwa_weights(100, 1200.0)
        assert w1 == pytest.approx(0.5, abs=1e-12)
        assert w2 == pytest.approx(0.5, abs=1e-12)

    @settings(max_examples=200)
    @given(t=st.integers(min_value=0, max_value=100_000))
    def test_weights_sum_to_one_and_stay_in_range(self, t):
        w1, w2 = dwa_weights(t, 1000.0)
        assert w1 + w2 == 1.0
        assert 0.0 <= w1 <= 1.0

    @given(t=st.integers(min_value=0, max_value=10_000))
    def test_half_period_periodicity(self, t):
        period = 500.0
        w1_now, _ = dwa_weights(t, period)
        w1_later, _ = dwa_weights(t + 250, period)
        assert w1_later == pytest.approx(w1_now, abs=1e-9)

    def test_non_positive_period_rejected(self):
        with pytest.raises(ValueError):
            dwa_weights(5, 0.0)


class TestLossConfig:
    def test_defaults_validate(self):
        LossConfig().validate()

    def test_margin_must_be_positive(self):
        with pytest.raises(ValueError):
            LossConfig(hinge_margin=0.0).validate()

    def test_negative_triplet_margin_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(triplet_margin=-0.01).validate()

    def test_all_zero_static_weights_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(w1=0.0, w2=0.0).validate()

    def test_all_zero_weights_fine_under_dwa(self):
        LossConfig(w1=0.0, w2=0.0, dwa_enabled=True).validate()

    def test_contrastive_active(self):
        assert LossConfig(w2=0.5).contrastive_active
        assert not LossConfig(w1=1.0, w2=0.0).contrastive_active
        assert LossConfig(w1=1.0, w2=0.0, dwa_enabled=True).contrastive_active
