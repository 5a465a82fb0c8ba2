"""Policy capability surface shared by the built-in model and external adapters."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

ORIGIN_GENERATED = "generated"
ORIGIN_BUFFER = "buffer"

MODE_NUCLEUS = "nucleus"
MODE_GREEDY = "greedy"


@dataclass(frozen=True)
class DecodingParams:
    top_p: float = 0.8
    temperature: float = 0.95
    max_len: int = 512
    mode: str = MODE_NUCLEUS

    def __post_init__(self) -> None:
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")
        if self.mode not in (MODE_NUCLEUS, MODE_GREEDY):
            raise ValueError(f"unknown decoding mode {self.mode!r}")


@dataclass
class Trajectory:
    """A sampled (or replayed) solution with its per-token log-prob tracks."""

    prompt: str
    text: str
    tokens: list[int]
    logp_policy: list[float]
    logp_reference: list[float]
    origin: str = ORIGIN_GENERATED
    problem_id: str = ""
    reward: object | None = None  # RewardRecord once assigned
    advantage: float | None = None

    def __post_init__(self) -> None:
        if not (len(self.tokens) == len(self.logp_policy) == len(self.logp_reference)):
            raise ValueError("tokens and log-prob tracks must have equal lengths")

    def sequence_logp(self) -> float:
        return float(sum(self.logp_policy))


@dataclass
class ScoreResult:
    """Per-token log-probs of a completion under current and reference params."""

    logp_policy: list[float]
    logp_reference: list[float]
    tokens: list[int] = field(default_factory=list)
    embedding: list[float] | None = None


@dataclass
class UpdateItem:
    trajectory: Trajectory
    advantage: float
    weight: float = 1.0


def nucleus_filter(distribution: np.ndarray, top_p: float) -> np.ndarray:
    """Keep the smallest probability-mass prefix reaching ``top_p``, renormalized.

    Tokens are ranked by descending probability with ties broken by stable
    index order.
    """
    if top_p <= 0:
        raise ValueError("top_p must be positive")
    probs = np.asarray(distribution, dtype=float)
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError(f"distribution must sum to 1, got {probs.sum()!r}")
    if top_p >= 1.0:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(cumulative, top_p)) + 1
    kept = order[:cutoff]
    out = np.zeros_like(probs)
    out[kept] = probs[kept]
    return out / out.sum()


class PolicyHandle(ABC):
    """Opaque policy capability used by the trainer and evaluator."""

    @abstractmethod
    def sample_batch(self, prompt: str, n: int, params: DecodingParams) -> list[Trajectory]:
        """Draw n trajectories, each ended by the end-of-sequence token or max_len."""

    @abstractmethod
    def greedy(self, prompt: str, params: DecodingParams) -> Trajectory:
        """Deterministic argmax decoding."""

    @abstractmethod
    def score(self, prompt: str, completion: str) -> ScoreResult:
        """Per-token log-probs of ``completion`` under current and reference params."""

    @abstractmethod
    def apply_update(self, batch: list[UpdateItem], learning_rate: float) -> float:
        """One advantage-weighted log-likelihood ascent step; returns the objective."""

    @abstractmethod
    def freeze_reference(self) -> None:
        """Snapshot the current parameters as the immutable reference policy."""

    @abstractmethod
    def save(self, directory) -> None:
        """Persist parameters (and reference) under ``directory``."""

    def close(self) -> None:
        """Release any external resources (no-op by default)."""
