"""Scalar value model used as the REINFORCE baseline.

The default extractor hashes token counts of prompt+solution into a fixed
512-dimensional vector (frozen, parameter-free); the trainable part is the
head: either a two-layer perceptron (512 -> 256 -> 1, ReLU by default,
hyperbolic tangent available) or a plain linear layer with intercept
(``hidden_dim=None``).  Trained online by mean-squared-error regression on
observed total rewards, including the KL term.  The critic scores a whole
sequence exactly once; there is no per-token application.

When an external policy supplies a final-token embedding through the wire
protocol, pass it as ``embedding=`` and it replaces the hashed features.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np

from .seeding import stable_hash

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

ACTIVATIONS = ("relu", "tanh")


def advantage(reward: float, baseline: float) -> float:
    """Observed reward minus the critic's prediction."""
    return reward - baseline


def hashed_features(text: str, dim: int) -> np.ndarray:
    """Relative token frequencies folded into ``dim`` buckets."""
    tokens = _TOKEN_RE.findall(text)
    out = np.zeros(dim, dtype=np.float64)
    if not tokens:
        return out
    for token in tokens:
        out[stable_hash(token) % dim] += 1.0
    return out / len(tokens)


class CriticModel:
    def __init__(
        self,
        feature_dim: int = 512,
        hidden_dim: int | None = 256,
        activation: str = "relu",
        init: str = "random",
        seed: int = 0,
        max_grad_norm: float | None = 100.0,
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if init not in ("random", "zeros"):
            raise ValueError("init must be 'random' or 'zeros'")
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.max_grad_norm = max_grad_norm
        rng = np.random.default_rng(seed)
        scale = 0.0 if init == "zeros" else 0.1
        if hidden_dim is None:
            self.w = rng.normal(0.0, scale, feature_dim) if scale else np.zeros(feature_dim)
            self.b = 0.0
        else:
            shape1 = (hidden_dim, feature_dim)
            self.w1 = rng.normal(0.0, scale, shape1) if scale else np.zeros(shape1)
            self.b1 = np.zeros(hidden_dim)
            self.w2 = rng.normal(0.0, scale, hidden_dim) if scale else np.zeros(hidden_dim)
            self.b2 = 0.0

    # -- forward -----------------------------------------------------------

    def _features(self, prompt: str, solution: str, embedding=None) -> np.ndarray:
        if embedding is not None:
            x = np.asarray(embedding, dtype=np.float64)
            if x.shape != (self.feature_dim,):
                raise ValueError(
                    f"embedding must have dimension {self.feature_dim}, got {x.shape}"
                )
            return x
        return hashed_features(prompt + "\n" + solution, self.feature_dim)

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z: np.ndarray, h: np.ndarray) -> np.ndarray:
        return (z > 0).astype(np.float64) if self.activation == "relu" else 1.0 - h * h

    def _forward(self, x: np.ndarray) -> float:
        if self.hidden_dim is None:
            return float(self.w @ x + self.b)
        h = self._act(self.w1 @ x + self.b1)
        return float(self.w2 @ h + self.b2)

    def score(self, prompt: str, solution: str, embedding=None) -> float:
        """Predicted total reward; deterministic given parameters."""
        return self._forward(self._features(prompt, solution, embedding))

    # -- training ----------------------------------------------------------

    def update(self, batch: list[tuple], learning_rate: float) -> float:
        """One gradient descent step on the batch-mean squared error.

        ``batch`` holds (prompt, solution, reward) or (prompt, solution,
        reward, embedding) tuples.  Returns the pre-step loss.
        """
        if not batch:
            raise ValueError("batch must be non-empty")
        features, targets = [], []
        for entry in batch:
            prompt, solution, reward = entry[0], entry[1], entry[2]
            embedding = entry[3] if len(entry) > 3 else None
            if not math.isfinite(reward):
                raise ValueError("non-finite reward; batch rejected")
            features.append(self._features(prompt, solution, embedding))
            targets.append(float(reward))
        X = np.stack(features)
        y = np.asarray(targets)
        n = len(batch)

        if self.hidden_dim is None:
            pred = X @ self.w + self.b
            err = pred - y
            loss = float(np.mean(err**2))
            grad_out = 2.0 * err / n
            grads = [X.T @ grad_out, np.array(grad_out.sum())]
            grads = self._clip(grads)
            self.w -= learning_rate * grads[0]
            self.b -= learning_rate * float(grads[1])
            return loss

        z1 = X @ self.w1.T + self.b1
        h = self._act(z1)
        pred = h @ self.w2 + self.b2
        err = pred - y
        loss = float(np.mean(err**2))
        grad_out = 2.0 * err / n
        grad_h = np.outer(grad_out, self.w2) * self._act_grad(z1, h)
        grads = [
            grad_h.T @ X,
            grad_h.sum(axis=0),
            h.T @ grad_out,
            np.array(grad_out.sum()),
        ]
        grads = self._clip(grads)
        self.w1 -= learning_rate * grads[0]
        self.b1 -= learning_rate * grads[1]
        self.w2 -= learning_rate * grads[2]
        self.b2 -= learning_rate * float(grads[3])
        return loss

    def _clip(self, grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.max_grad_norm is None:
            return grads
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm <= self.max_grad_norm:
            return grads
        scale = self.max_grad_norm / norm
        return [g * scale for g in grads]

    # -- persistence -------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "activation": self.activation,
        }
        (directory / "critic.json").write_text(json.dumps(meta), encoding="utf-8")
        if self.hidden_dim is None:
            np.savez_compressed(directory / "critic.npz", w=self.w, b=np.array(self.b))
        else:
            np.savez_compressed(
                directory / "critic.npz",
                w1=self.w1,
                b1=self.b1,
                w2=self.w2,
                b2=np.array(self.b2),
            )

    @classmethod
    def load(cls, directory) -> "CriticModel":
        directory = Path(directory)
        meta = json.loads((directory / "critic.json").read_text(encoding="utf-8"))
        critic = cls(
            feature_dim=meta["feature_dim"],
            hidden_dim=meta["hidden_dim"],
            activation=meta["activation"],
            init="zeros",
        )
        with np.load(directory / "critic.npz") as arrays:
            if critic.hidden_dim is None:
                critic.w = arrays["w"]
                critic.b = float(arrays["b"])
            else:
                critic.w1 = arrays["w1"]
                critic.b1 = arrays["b1"]
                critic.w2 = arrays["w2"]
                critic.b2 = float(arrays["b2"])
        return critic
