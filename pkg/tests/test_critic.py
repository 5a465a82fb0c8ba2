import math

import numpy as np
import pytest

from utrl.critic import CriticModel, advantage, hashed_features


class TestAdvantage:
    def test_equal_is_zero(self):
        assert advantage(50.0, 50.0) == 0.0

    def test_arithmetic(self):
        assert advantage(25.0, 10.0) == 15.0

    def test_negative_reward(self):
        assert advantage(-10.0, 0.0) == -10.0


class TestFeatures:
    def test_deterministic_across_calls(self):
        a = hashed_features("def f(x): return x + 1", 512)
        b = hashed_features("def f(x): return x + 1", 512)
        assert np.array_equal(a, b)

    def test_normalized(self):
        feats = hashed_features("a b c d", 64)
        assert feats.sum() == pytest.approx(1.0)

    def test_empty_text(self):
        assert hashed_features("", 32).sum() == 0.0


def synthetic_batch(n=24, seed=5):
    rng = np.random.default_rng(seed)
    words = ["add", "mul", "sub", "loop", "ret", "zero", "x", "y"]
    batch = []
    for i in range(n):
        prompt = " ".join(rng.choice(words, size=6))
        solution = " ".join(rng.choice(words, size=8))
        batch.append((prompt, solution, float(rng.uniform(-10, 50))))
    return batch


class TestCriticModel:
    def test_zero_init_scores_zero(self):
        critic = CriticModel(init="zeros")
        assert critic.score("anything", "at all") == 0.0
        linear = CriticModel(hidden_dim=None, init="zeros")
        assert linear.score("more", "text") == 0.0

    def test_deterministic_scoring(self):
        critic = CriticModel(seed=3)
        a = critic.score("same prompt", "same solution")
        b = critic.score("same prompt", "same solution")
        assert a == b

    def test_constant_reward_convergence(self):
        # least-squares limit of an intercept-bearing linear head is the mean
        critic = CriticModel(hidden_dim=None, init="zeros")
        batch = [(p, s, 50.0) for p, s, _ in synthetic_batch(16)]
        for _ in range(400):
            critic.update(batch, learning_rate=0.5)
        for prompt, solution, _ in batch:
            assert critic.score(prompt, solution) == pytest.approx(50.0, abs=0.5)

    def test_loss_zero_when_predictions_match(self):
        critic = CriticModel(hidden_dim=None, init="zeros")
        batch = [("p", "s", 0.0), ("q", "t", 0.0)]
        before = np.copy(critic.w)
        loss = critic.update(batch, learning_rate=0.1)
        assert loss == 0.0
        assert np.array_equal(critic.w, before)

    def test_loss_decreases_on_fixed_batch(self):
        critic = CriticModel(hidden_dim=None, init="zeros")
        batch = synthetic_batch()
        losses = [critic.update(batch, learning_rate=0.3) for _ in range(100)]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_mlp_loss_decreases(self):
        critic = CriticModel(seed=11)
        batch = synthetic_batch()
        losses = [critic.update(batch, learning_rate=0.05) for _ in range(120)]
        assert losses[-1] < losses[0]

    def test_non_finite_reward_rejected(self):
        critic = CriticModel()
        with pytest.raises(ValueError):
            critic.update([("p", "s", math.nan)], 0.1)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            CriticModel().update([], 0.1)

    def test_tanh_option(self):
        critic = CriticModel(activation="tanh", seed=2)
        batch = synthetic_batch(8)
        losses = [critic.update(batch, learning_rate=0.05) for _ in range(80)]
        assert losses[-1] < losses[0]

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            CriticModel(activation="gelu")

    def test_embedding_feature_mode(self):
        critic = CriticModel(feature_dim=4, hidden_dim=None, init="zeros")
        emb = [1.0, 0.0, 0.0, 0.0]
        critic.update([("p", "s", 10.0, emb)], learning_rate=0.25)
        assert critic.score("p", "s", embedding=emb) != 0.0
        with pytest.raises(ValueError):
            critic.score("p", "s", embedding=[1.0, 2.0])

    def test_save_load_round_trip(self, tmp_path):
        critic = CriticModel(seed=9)
        critic.update(synthetic_batch(8), learning_rate=0.05)
        critic.save(tmp_path)
        clone = CriticModel.load(tmp_path)
        assert clone.score("a b", "c d") == critic.score("a b", "c d")


def least_squares_optimum(batch, critic):
    """Closed-form minimum of the batch-mean squared error for the linear head."""
    X = np.stack([critic._features(p, s) for p, s, _ in batch])
    y = np.array([r for _, _, r in batch])
    Xb = np.hstack([X, np.ones((len(batch), 1))])
    theta, *_ = np.linalg.lstsq(Xb, y, rcond=None)
    residual = Xb @ theta - y
    return float(np.mean(residual**2))


class TestLeastSquaresOracle:
    def test_linear_critic_reaches_optimum(self):
        critic = CriticModel(hidden_dim=None, init="zeros")
        batch = synthetic_batch(24, seed=13)
        optimum = least_squares_optimum(batch, critic)
        loss = None
        for _ in range(500):
            loss = critic.update(batch, learning_rate=0.8)
        final = critic.update(batch, learning_rate=0.0)
        assert final <= optimum * 1.01 + 1e-9

    def test_monotone_nonincreasing_window(self):
        critic = CriticModel(hidden_dim=None, init="zeros")
        batch = synthetic_batch(24, seed=13)
        losses = [critic.update(batch, learning_rate=0.8) for _ in range(500)]
        for i in range(len(losses) - 100):
            assert losses[i + 100] <= losses[i] + 1e-12
