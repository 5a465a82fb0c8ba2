import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from utrl.reward import (
    RewardConfig,
    functional_reward,
    sequence_kl,
    total_reward,
    update_kl_coef,
)
from utrl.sandbox import ExecutionOutcome


def outcome(passed, total):
    return ExecutionOutcome(
        compiled=True, per_test=["passed"] * passed + ["failed"] * (total - passed),
        total_tests=total, passed_tests=passed,
    )


NOT_COMPILED = ExecutionOutcome(compiled=False)
CFG = RewardConfig()


class TestFunctionalReward:
    def test_full_pass(self):
        assert functional_reward(outcome(4, 4), CFG) == pytest.approx(50.0, abs=1e-9)

    def test_not_compiled(self):
        assert functional_reward(NOT_COMPILED, CFG) == pytest.approx(-10.0, abs=1e-9)

    def test_quarter_pass(self):
        # 50 * sqrt(1/4) = 25
        assert functional_reward(outcome(1, 4), CFG) == pytest.approx(25.0, abs=1e-9)

    def test_zero_pass(self):
        assert functional_reward(outcome(0, 4), CFG) == pytest.approx(0.0, abs=1e-9)

    def test_compiled_with_no_tests_rejected(self):
        with pytest.raises(ValueError):
            functional_reward(outcome(0, 0), CFG)

    @given(total=st.integers(1, 50), passed=st.integers(0, 50))
    def test_bounded_and_nondecreasing(self, total, passed):
        passed = min(passed, total)
        value = functional_reward(outcome(passed, total), CFG)
        assert 0.0 <= value <= CFG.reward_scale
        if passed < total:
            better = functional_reward(outcome(passed + 1, total), CFG)
            assert better > value

    @given(total=st.integers(2, 40), m=st.integers(2, 40))
    def test_concave_first_test_worth_most(self, total, m):
        # the 0 -> 1 gain strictly exceeds any (m-1) -> m gain for m >= 2
        m = min(m, total)
        first_gain = functional_reward(outcome(1, total), CFG) - functional_reward(
            outcome(0, total), CFG
        )
        later_gain = functional_reward(outcome(m, total), CFG) - functional_reward(
            outcome(m - 1, total), CFG
        )
        assert first_gain > later_gain


class TestSequenceKl:
    def test_identical_tracks(self):
        assert sequence_kl([-1.0, -2.0], [-1.0, -2.0]) == 0.0

    def test_hand_sum(self):
        assert sequence_kl([-1.0, -1.0], [-1.5, -1.5]) == pytest.approx(1.0)

    def test_empty(self):
        assert sequence_kl([], []) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sequence_kl([-1.0], [-1.0, -2.0])


class TestTotalReward:
    def test_arithmetic(self):
        assert total_reward(50.0, 0.1, 1.0).total == pytest.approx(49.9)

    def test_zero_kl(self):
        record = total_reward(33.0, 0.0, 7.0)
        assert record.total == record.functional == 33.0

    def test_negative_functional(self):
        assert total_reward(-10.0, 0.5, 2.0).total == pytest.approx(-11.0)

    def test_bit_exact_order(self):
        functional, kl, coef = 1.234567, 0.891011, 1.31415
        assert total_reward(functional, kl, coef).total == functional - coef * kl


class TestController:
    def test_on_target_unchanged(self):
        assert update_kl_coef(CFG.kl_target, CFG, 1.0) == 1.0

    def test_above_target_increases(self):
        # error (2rho-rho)/rho = 1 clips to 0.2 -> factor 1.02
        assert update_kl_coef(2 * CFG.kl_target, CFG, 1.0) == pytest.approx(1.02)

    def test_below_target_decreases(self):
        assert update_kl_coef(0.0, CFG, 1.0) == pytest.approx(0.98)

    def test_zero_target_is_config_error(self):
        with pytest.raises(ValueError):
            RewardConfig(kl_target=0.0)

    def test_infinite_target_decays(self):
        cfg = RewardConfig(kl_target=math.inf)
        coef = 1.0
        for _ in range(10):
            nxt = update_kl_coef(123.0, cfg, coef)
            assert nxt == pytest.approx(coef * 0.98)
            coef = nxt

    @given(
        st.floats(0.0, 10.0),
        st.floats(min_value=1e-3, max_value=5.0),
        st.floats(min_value=0.0, max_value=100.0),
    )
    def test_stays_nonnegative_and_directional(self, measured, target, coef):
        cfg = RewardConfig(kl_target=target)
        result = update_kl_coef(measured, cfg, coef)
        assert result >= 0.0
        if measured > target:
            assert result >= coef
        elif measured < target:
            assert result <= coef

    def test_persistent_direction_strict(self):
        coef = 1.0
        for _ in range(5):
            nxt = update_kl_coef(10 * CFG.kl_target, CFG, coef)
            assert nxt > coef
            coef = nxt
        for _ in range(5):
            nxt = update_kl_coef(CFG.kl_target / 10, CFG, coef)
            assert nxt < coef
            coef = nxt


def test_max_reward_is_scale():
    assert CFG.max_reward == CFG.reward_scale == 50.0


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(reward_scale=-1)
    with pytest.raises(ValueError):
        RewardConfig(pass_exponent=0)
    with pytest.raises(ValueError):
        RewardConfig(controller_gain=1.5)
