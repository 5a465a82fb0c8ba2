"""Built-in toy policy: a log-linear autoregressive character model.

Next-token logits live in a hashed table indexed by the previous
``context_len`` token ids, so unseen contexts back off onto shared rows.
Gradients are analytic, which keeps the finite-difference oracle exact and
training free of any neural-network dependency.  Real language models plug
in through the wire protocol instead (see :mod:`utrl.policy.external`).
"""

from __future__ import annotations

import json
import math
import string
from pathlib import Path

import numpy as np

from ..seeding import mix_ints
from .base import (
    MODE_GREEDY,
    ORIGIN_GENERATED,
    DecodingParams,
    PolicyHandle,
    ScoreResult,
    Trajectory,
    UpdateItem,
    nucleus_filter,
)

EOS_ID = 0
UNK_ID = 1
_RESERVED = 2

DEFAULT_VOCABULARY = "".join(sorted(set(string.printable) - set("\x0b\x0c\r")))

_PARAMS_FILE = "policy.npz"
_META_FILE = "policy.json"


def derive_vocabulary(texts) -> str:
    """Smallest character vocabulary covering the given texts."""
    chars = set()
    for t in texts:
        chars.update(t)
    return "".join(sorted(chars))


class ToyPolicy(PolicyHandle):
    def __init__(
        self,
        vocabulary: str = DEFAULT_VOCABULARY,
        context_len: int = 16,
        rows: int = 1 << 16,
        seed: int = 0,
    ):
        if not vocabulary:
            raise ValueError("vocabulary must be non-empty")
        if len(set(vocabulary)) != len(vocabulary):
            raise ValueError("vocabulary must not contain duplicates")
        if context_len < 1 or rows < 1:
            raise ValueError("context_len and rows must be positive")
        self.vocabulary = vocabulary
        self.context_len = context_len
        self.rows = rows
        self.seed = seed
        self.vocab_size = len(vocabulary) + _RESERVED
        self._char_to_id = {c: i + _RESERVED for i, c in enumerate(vocabulary)}
        self._table = np.zeros((rows, self.vocab_size), dtype=np.float64)
        self._reference: np.ndarray | None = None
        self._rng = np.random.default_rng(seed)
        # per-row caches, invalidated on any parameter change
        self._dist_cache: dict[int, np.ndarray] = {}
        self._sample_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._ref_dist_cache: dict[int, np.ndarray] = {}

    # -- tokenization ------------------------------------------------------

    def encode_context(self, text: str) -> list[int]:
        """Encode conditioning text; characters outside the vocabulary map to UNK."""
        return [self._char_to_id.get(c, UNK_ID) for c in text]

    def encode_completion(self, text: str) -> list[int]:
        """Encode a completion plus terminal EOS; rejects out-of-vocabulary chars."""
        ids = []
        for c in text:
            cid = self._char_to_id.get(c)
            if cid is None:
                raise ValueError(f"character {c!r} not in policy vocabulary")
            ids.append(cid)
        ids.append(EOS_ID)
        return ids

    def decode(self, tokens: list[int]) -> str:
        return "".join(self.vocabulary[t - _RESERVED] for t in tokens if t >= _RESERVED)

    # -- distributions -----------------------------------------------------

    def _row(self, context: list[int]) -> int:
        return mix_ints(context[-self.context_len :], seed=1) % self.rows

    @staticmethod
    def _softmax(logits: np.ndarray) -> np.ndarray:
        # UNK is a context-only symbol, never an action: zero probability
        z = logits - logits[np.arange(len(logits)) != UNK_ID].max()
        e = np.exp(z)
        e[UNK_ID] = 0.0
        return e / e.sum()

    def _dist(self, row: int) -> np.ndarray:
        cached = self._dist_cache.get(row)
        if cached is None:
            cached = self._softmax(self._table[row])
            self._dist_cache[row] = cached
        return cached

    def _reference_dist(self, row: int) -> np.ndarray:
        if self._reference is None:
            raise RuntimeError("reference policy not frozen")
        cached = self._ref_dist_cache.get(row)
        if cached is None:
            cached = self._softmax(self._reference[row])
            self._ref_dist_cache[row] = cached
        return cached

    def _sampling_cdf(self, row: int, params: DecodingParams) -> tuple[np.ndarray, np.ndarray]:
        key = (row, params.temperature, params.top_p)
        cached = self._sample_cache.get(key)
        if cached is None:
            tempered = self._softmax(self._table[row] / params.temperature)
            filtered = nucleus_filter(tempered, params.top_p)
            support = np.flatnonzero(filtered)
            cached = (np.cumsum(filtered[support]), support)
            self._sample_cache[key] = cached
        return cached

    def _invalidate(self) -> None:
        self._dist_cache.clear()
        self._sample_cache.clear()

    # -- decoding ----------------------------------------------------------

    def _generate(self, prompt: str, params: DecodingParams, greedy: bool) -> Trajectory:
        if len(prompt) > params.max_len:
            raise ValueError(f"prompt length {len(prompt)} exceeds max_len {params.max_len}")
        if self._reference is None:
            raise RuntimeError("freeze_reference must be called before sampling")
        context = self.encode_context(prompt)
        tokens: list[int] = []
        logp_policy: list[float] = []
        logp_reference: list[float] = []
        for _ in range(params.max_len):
            row = self._row(context)
            if greedy:
                action = int(np.argmax(self._dist(row)))
            else:
                cdf, support = self._sampling_cdf(row, params)
                u = self._rng.random()
                action = int(support[min(int(np.searchsorted(cdf, u)), len(support) - 1)])
            logp_policy.append(float(math.log(self._dist(row)[action])))
            logp_reference.append(float(math.log(self._reference_dist(row)[action])))
            tokens.append(action)
            context.append(action)
            if action == EOS_ID:
                break
        return Trajectory(
            prompt=prompt,
            text=self.decode(tokens),
            tokens=tokens,
            logp_policy=logp_policy,
            logp_reference=logp_reference,
            origin=ORIGIN_GENERATED,
        )

    def sample_batch(self, prompt: str, n: int, params: DecodingParams) -> list[Trajectory]:
        greedy = params.mode == MODE_GREEDY
        return [self._generate(prompt, params, greedy) for _ in range(n)]

    def greedy(self, prompt: str, params: DecodingParams) -> Trajectory:
        return self._generate(prompt, params, greedy=True)

    # -- scoring and updates -----------------------------------------------

    def score(self, prompt: str, completion: str) -> ScoreResult:
        if self._reference is None:
            raise RuntimeError("freeze_reference must be called before scoring")
        context = self.encode_context(prompt)
        tokens = self.encode_completion(completion)
        logp_policy = []
        logp_reference = []
        for action in tokens:
            row = self._row(context)
            logp_policy.append(float(math.log(self._dist(row)[action])))
            logp_reference.append(float(math.log(self._reference_dist(row)[action])))
            context.append(action)
        return ScoreResult(
            logp_policy=logp_policy, logp_reference=logp_reference, tokens=tokens
        )

    def sequence_logp(self, prompt_ids: list[int], tokens: list[int]) -> float:
        """Log-probability of a token sequence given already-encoded context."""
        context = list(prompt_ids)
        total = 0.0
        for action in tokens:
            total += math.log(self._dist(self._row(context))[action])
            context.append(action)
        return total

    def apply_update(self, batch: list[UpdateItem], learning_rate: float) -> float:
        """Ascend sum_i weight_i * advantage_i * log p(completion_i | prompt_i)."""
        for item in batch:
            if not math.isfinite(item.advantage):
                raise ValueError("non-finite advantage; batch rejected")
        objective = 0.0
        grads: dict[int, np.ndarray] = {}
        for item in batch:
            scale = item.weight * item.advantage
            context = self.encode_context(item.trajectory.prompt)
            for action in item.trajectory.tokens:
                row = self._row(context)
                probs = self._dist(row)
                grad = grads.get(row)
                if grad is None:
                    grad = grads.setdefault(row, np.zeros(self.vocab_size))
                grad -= scale * probs
                grad[action] += scale
                objective += scale * math.log(probs[action])
                context.append(action)
        for row, grad in grads.items():
            self._table[row] += learning_rate * grad
        self._invalidate()
        return float(objective)

    def freeze_reference(self) -> None:
        self._reference = self._table.copy()
        self._ref_dist_cache.clear()

    @property
    def reference_frozen(self) -> bool:
        return self._reference is not None

    # -- persistence -------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {"table": self._table}
        if self._reference is not None:
            arrays["reference"] = self._reference
        np.savez_compressed(directory / _PARAMS_FILE, **arrays)
        meta = {
            "kind": "toy",
            "vocabulary": self.vocabulary,
            "context_len": self.context_len,
            "rows": self.rows,
            "seed": self.seed,
            "rng_state": self._rng.bit_generator.state,
        }
        (directory / _META_FILE).write_text(json.dumps(meta), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ToyPolicy":
        directory = Path(directory)
        meta = json.loads((directory / _META_FILE).read_text(encoding="utf-8"))
        policy = cls(
            vocabulary=meta["vocabulary"],
            context_len=meta["context_len"],
            rows=meta["rows"],
            seed=meta["seed"],
        )
        with np.load(directory / _PARAMS_FILE) as arrays:
            policy._table = arrays["table"]
            if "reference" in arrays:
                policy._reference = arrays["reference"]
        policy._rng.bit_generator.state = meta["rng_state"]
        return policy
