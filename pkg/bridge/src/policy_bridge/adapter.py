"""Adapter core: sampling, scoring, and updates on a model backend.

Gradient updates happen here, adapter-side; the harness only ships
advantages and a learning rate over the wire.  The reference snapshot is
taken before the first update (or on demand) and never mutated afterwards.
Updates are serialized by a lock shared across connections.
"""

from __future__ import annotations

import json
import math
import threading
from pathlib import Path

import torch


class AdapterError(ValueError):
    pass


class Adapter:
    def __init__(self, backend, seed: int = 0, max_batch: int = 256):
        self.backend = backend
        self.reference = backend.clone_frozen()
        self.max_batch = max_batch
        self.generator = torch.Generator(device="cpu").manual_seed(seed)
        self.lock = threading.Lock()

    # -- helpers -------------------------------------------------------------

    def _completion_ids(self, completion: str) -> list[int]:
        return self.backend.encode(completion) + [self.backend.eos_id]

    def _sequence_logps(self, backend, prompt_ids, completion_ids) -> torch.Tensor:
        """Log-probs of each completion token given prompt + prefix."""
        full = prompt_ids + completion_ids
        logits, _ = backend.logits_and_states(full)
        logps = torch.log_softmax(logits, dim=-1)
        start = len(prompt_ids) - 1
        targets = torch.tensor(completion_ids, dtype=torch.long)
        return logps[start : start + len(completion_ids)].gather(
            1, targets.unsqueeze(1)
        ).squeeze(1)

    # -- protocol ops ----------------------------------------------------------

    def sample(self, prompt: str, n: int, top_p: float, temperature: float,
               max_len: int, mode: str = "nucleus") -> list[dict]:
        if n < 1 or n > self.max_batch:
            raise AdapterError(f"n must be in [1, {self.max_batch}]")
        if not 0 < top_p <= 1 or temperature <= 0 or max_len < 1:
            raise AdapterError("invalid decoding parameters")
        prompt_ids = self.backend.encode(prompt)
        if len(prompt_ids) > max_len:
            raise AdapterError(f"prompt length {len(prompt_ids)} exceeds max_len {max_len}")
        solutions = []
        with self.lock, torch.no_grad():
            for _ in range(n):
                tokens = self._decode_one(prompt_ids, top_p, temperature, max_len, mode)
                scored = self._score_ids(prompt_ids, tokens)
                solutions.append(
                    {
                        "text": self.backend.decode(tokens),
                        "tokens": tokens,
                        "logp_policy": scored[0],
                        "logp_reference": scored[1],
                    }
                )
        return solutions

    def _decode_one(self, prompt_ids, top_p, temperature, max_len, mode) -> list[int]:
        tokens: list[int] = []
        logits, hidden = None, None
        context = prompt_ids
        for _ in range(max_len):
            logits, hidden = self.backend.step(context, hidden)
            if mode == "greedy":
                nxt = int(torch.argmax(logits).item())
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                nxt = int(self._nucleus_draw(probs, top_p))
            tokens.append(nxt)
            context = [nxt]
            if nxt == self.backend.eos_id:
                break
        return tokens

    def _nucleus_draw(self, probs: torch.Tensor, top_p: float) -> int:
        sorted_probs, order = torch.sort(probs, descending=True, stable=True)
        cumulative = torch.cumsum(sorted_probs, dim=0)
        cutoff = int(torch.searchsorted(cumulative, top_p).item()) + 1
        kept = order[:cutoff]
        kept_probs = probs[kept] / probs[kept].sum()
        index = torch.multinomial(kept_probs, 1, generator=self.generator)
        return int(kept[index].item())

    def score(self, prompt: str, completion: str) -> dict:
        prompt_ids = self.backend.encode(prompt)
        completion_ids = self._completion_ids(completion)
        with self.lock, torch.no_grad():
            policy_lp, reference_lp = self._score_ids(prompt_ids, completion_ids)
            _, states = self.backend.logits_and_states(prompt_ids + completion_ids)
            embedding = states[-1].tolist()
        return {
            "logp_policy": policy_lp,
            "logp_reference": reference_lp,
            "tokens": completion_ids,
            "embedding": embedding,
        }

    def _score_ids(self, prompt_ids, completion_ids):
        policy_lp = self._sequence_logps(self.backend, prompt_ids, completion_ids)
        reference_lp = self._sequence_logps(self.reference, prompt_ids, completion_ids)
        return policy_lp.tolist(), reference_lp.tolist()

    def update(self, items: list[dict], learning_rate: float) -> float:
        if not items:
            raise AdapterError("update requires at least one item")
        if len(items) > self.max_batch:
            raise AdapterError(f"batch exceeds max_batch {self.max_batch}")
        for item in items:
            if not math.isfinite(float(item["advantage"])):
                raise AdapterError("non-finite advantage; batch rejected")
        with self.lock:
            self.backend.model.train()
            objective = torch.zeros((), dtype=torch.float32)
            for item in items:
                prompt_ids = self.backend.encode(item["prompt"])
                completion_ids = self._completion_ids(item["completion"])
                logps = self._sequence_logps(self.backend, prompt_ids, completion_ids)
                weight = float(item.get("weight", 1.0)) * float(item["advantage"])
                objective = objective + weight * logps.sum()
            loss = -objective
            self.backend.model.zero_grad(set_to_none=True)
            loss.backward()
            with torch.no_grad():
                for parameter in self.backend.parameters():
                    if parameter.grad is not None:
                        parameter -= learning_rate * parameter.grad
            self.backend.model.eval()
            return float(objective.item())

    def freeze_reference(self) -> None:
        with self.lock:
            self.reference = self.backend.clone_frozen()

    def save(self, path: str) -> None:
        with self.lock:
            directory = Path(path)
            directory.mkdir(parents=True, exist_ok=True)
            torch.save(self.backend.state_dict(), directory / "model.pt")
            torch.save(self.reference.state_dict(), directory / "reference.pt")
            meta = {"backend": self.backend.name}
            (directory / "adapter.json").write_text(json.dumps(meta), encoding="utf-8")
