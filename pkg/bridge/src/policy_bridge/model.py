"""Model backends: a deterministic tiny character LM and a Hugging Face shim.

Both expose the same minimal surface the adapter needs: a tokenizer pair,
an end-of-sequence id, a forward pass producing next-token logits, and a
factory for a frozen deep copy.
"""

from __future__ import annotations

import copy
import string

import torch
from torch import nn

PRINTABLE = "".join(sorted(set(string.printable) - set("\x0b\x0c\r")))


class CharTokenizer:
    """Characters over printable ASCII; id 0 is reserved for end-of-sequence."""

    eos_id = 0

    def __init__(self, alphabet: str = PRINTABLE):
        self.alphabet = alphabet
        self._to_id = {c: i + 1 for i, c in enumerate(alphabet)}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 1

    def encode(self, text: str) -> list[int]:
        # out-of-alphabet characters collapse onto the last id
        fallback = len(self.alphabet)
        return [self._to_id.get(c, fallback) for c in text]

    def decode(self, ids: list[int]) -> str:
        return "".join(self.alphabet[i - 1] for i in ids if 0 < i <= len(self.alphabet))


class TinyCharLM(nn.Module):
    """Embedding -> GRU -> projection; small enough to step on any CPU."""

    def __init__(self, vocab_size: int, embed_dim: int = 32, hidden_dim: int = 64):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim)
        self.rnn = nn.GRU(embed_dim, hidden_dim, batch_first=True)
        self.head = nn.Linear(hidden_dim, vocab_size)
        self.hidden_dim = hidden_dim

    def forward(self, ids: torch.Tensor, hidden: torch.Tensor | None = None):
        emb = self.embed(ids)
        out, hidden = self.rnn(emb, hidden)
        return self.head(out), out, hidden


class StubBackend:
    """Deterministic tiny stand-in model; the CI face of the adapter."""

    name = "stub"

    def __init__(self, seed: int = 0, device: str = "cpu"):
        torch.manual_seed(seed)
        torch.set_num_threads(1)
        self.device = torch.device(device)
        self.tokenizer = CharTokenizer()
        self.model = TinyCharLM(self.tokenizer.vocab_size).to(self.device)
        self.model.eval()

    @property
    def eos_id(self) -> int:
        return self.tokenizer.eos_id

    def encode(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)

    def decode(self, ids: list[int]) -> str:
        return self.tokenizer.decode(ids)

    def logits_and_states(self, ids: list[int]):
        """Full-sequence forward; returns (logits [T, V], states [T, H])."""
        tensor = torch.tensor([ids], dtype=torch.long, device=self.device)
        logits, states, _ = self.model(tensor)
        return logits[0], states[0]

    def step(self, token_ids: list[int], hidden):
        """Incremental decoding step; returns (next-token logits, hidden)."""
        tensor = torch.tensor([token_ids], dtype=torch.long, device=self.device)
        logits, _, hidden = self.model(tensor, hidden)
        return logits[0, -1], hidden

    def clone_frozen(self) -> "StubBackend":
        frozen = copy.copy(self)
        frozen.model = copy.deepcopy(self.model)
        for parameter in frozen.model.parameters():
            parameter.requires_grad_(False)
        frozen.model.eval()
        return frozen

    def parameters(self):
        return self.model.parameters()

    def state_dict(self):
        return self.model.state_dict()

    def load_state_dict(self, state):
        self.model.load_state_dict(state)


class HFBackend:
    """Causal-LM backend over transformers; loaded lazily, never in CI."""

    name = "lm"

    def __init__(self, model_path: str, device: str = "cpu"):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.device = torch.device(device)
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForCausalLM.from_pretrained(model_path).to(self.device)
        self.model.eval()
        if self.tokenizer.eos_token_id is None:
            raise ValueError("model tokenizer must define an end-of-sequence token")

    @property
    def eos_id(self) -> int:
        return int(self.tokenizer.eos_token_id)

    def encode(self, text: str) -> list[int]:
        return self.tokenizer.encode(text, add_special_tokens=False)

    def decode(self, ids: list[int]) -> str:
        return self.tokenizer.decode(
            [i for i in ids if i != self.eos_id], skip_special_tokens=True
        )

    def logits_and_states(self, ids: list[int]):
        tensor = torch.tensor([ids], dtype=torch.long, device=self.device)
        out = self.model(tensor, output_hidden_states=True)
        return out.logits[0], out.hidden_states[-1][0]

    def step(self, token_ids: list[int], hidden):
        tensor = torch.tensor([token_ids], dtype=torch.long, device=self.device)
        out = self.model(tensor, past_key_values=hidden, use_cache=True)
        return out.logits[0, -1], out.past_key_values

    def clone_frozen(self) -> "HFBackend":
        frozen = copy.copy(self)
        frozen.model = copy.deepcopy(self.model)
        for parameter in frozen.model.parameters():
            parameter.requires_grad_(False)
        frozen.model.eval()
        return frozen

    def parameters(self):
        return self.model.parameters()

    def state_dict(self):
        return self.model.state_dict()

    def load_state_dict(self, state):
        self.model.load_state_dict(state)
