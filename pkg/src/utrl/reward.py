"""Functional reward, sequence-level KL penalty, and the adaptive coefficient.

A compiling solution earns ``reward_scale * (passed/total) ** pass_exponent``;
a non-compiling one earns a fixed penalty.  The total per-trajectory reward
subtracts ``kl_coef`` times the sequence KL estimate against the frozen
reference policy, and ``kl_coef`` is nudged once per epoch by a proportional
controller toward the target divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .sandbox import ExecutionOutcome


@dataclass(frozen=True)
class RewardConfig:
    reward_scale: float = 50.0
    pass_exponent: float = 0.5
    compile_penalty: float = -10.0
    kl_target: float = 0.07
    kl_coef_init: float = 1.0
    controller_gain: float = 0.1
    controller_clip: float = 0.2

    def __post_init__(self) -> None:
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.pass_exponent <= 0:
            raise ValueError("pass_exponent must be positive")
        if self.kl_target <= 0:
            raise ValueError("kl_target must be positive (use inf to disable)")
        if not 0 < self.controller_gain < 1:
            raise ValueError("controller_gain must be in (0, 1)")
        if self.controller_clip <= 0:
            raise ValueError("controller_clip must be positive")
        if self.kl_coef_init < 0:
            raise ValueError("kl_coef_init must be nonnegative")

    @property
    def max_reward(self) -> float:
        """Reward of a full pass: scale * 1 ** exponent."""
        return self.reward_scale


@dataclass(frozen=True)
class RewardRecord:
    functional: float
    kl_estimate: float
    kl_coef_used: float
    total: float


def functional_reward(outcome: ExecutionOutcome, config: RewardConfig) -> float:
    """Graded pass-fraction reward for compiling code, fixed penalty otherwise."""
    if not outcome.compiled:
        return config.compile_penalty
    if outcome.total_tests < 1:
        raise ValueError("compiled outcome must have at least one test")
    fraction = outcome.passed_tests / outcome.total_tests
    return config.reward_scale * fraction**config.pass_exponent


def sequence_kl(logp_policy: list[float], logp_reference: list[float]) -> float:
    """Single-sample estimate of the summed per-step KL along a trajectory.

    The sum of log-ratios of the chosen tokens; unbiased for the summed KL
    when the tokens were sampled from the current policy.
    """
    if len(logp_policy) != len(logp_reference):
        raise ValueError(
            f"log-prob tracks differ in length: {len(logp_policy)} vs {len(logp_reference)}"
        )
    return float(sum(p - r for p, r in zip(logp_policy, logp_reference)))


def total_reward(functional: float, kl: float, kl_coef: float) -> RewardRecord:
    return RewardRecord(
        functional=functional,
        kl_estimate=kl,
        kl_coef_used=kl_coef,
        total=functional - kl_coef * kl,
    )


def update_kl_coef(measured_mean_kl: float, config: RewardConfig, kl_coef: float) -> float:
    """One proportional-controller step on the KL coefficient.

    Applied once per epoch on the epoch's mean per-trajectory KL.  An
    infinite target pins the error at the negative clip, so the coefficient
    decays geometrically toward zero.
    """
    if kl_coef < 0:
        raise ValueError("kl_coef must be nonnegative")
    clip = config.controller_clip
    if math.isinf(config.kl_target):
        error = -clip
    else:
        error = (measured_mean_kl - config.kl_target) / config.kl_target
        error = max(-clip, min(clip, error))
    return kl_coef * (1.0 + config.controller_gain * error)
