"""Character-level GRU language model.

Small enough (~80k parameters) to pretrain on a laptop CPU in seconds,
big enough to memorize a few hundred short documents verbatim, which is
exactly the regime where forgetting and recovery are observable.
"""

from __future__ import annotations

import random
import string
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

PAD_ID = 0
BOS_ID = 1
_CHARS = "\n" + " " + string.digits + string.ascii_letters + string.punctuation
_STOI = {ch: i + 2 for i, ch in enumerate(_CHARS)}
_ITOS = {i: ch for ch, i in _STOI.items()}
_UNKNOWN = _STOI["?"]

VOCAB_SIZE = len(_CHARS) + 2


def encode(text: str) -> list[int]:
    return [_STOI.get(ch, _UNKNOWN) for ch in text]


def decode(ids: list[int]) -> str:
    return "".join(_ITOS.get(i, "") for i in ids)


class CharLM(nn.Module):
    def __init__(self, emb_dim: int = 32, hidden_dim: int = 128, num_layers: int = 1):
        super().__init__()
        self.arch = {"emb_dim": emb_dim, "hidden_dim": hidden_dim, "num_layers": num_layers}
        self.embed = nn.Embedding(VOCAB_SIZE, emb_dim, padding_idx=PAD_ID)
        self.rnn = nn.GRU(emb_dim, hidden_dim, num_layers=num_layers, batch_first=True)
        self.head = nn.Linear(hidden_dim, VOCAB_SIZE)

    def forward(self, ids: torch.Tensor, hidden: torch.Tensor | None = None):
        out, hidden = self.rnn(self.embed(ids), hidden)
        return self.head(out), hidden

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def snapshot(model: CharLM) -> dict:
    """Detached full copy of the weights; versions must stay immutable."""
    return {name: tensor.detach().clone() for name, tensor in model.state_dict().items()}


def restore(arch: dict, state: dict) -> CharLM:
    model = CharLM(**arch)
    model.load_state_dict({name: tensor.clone() for name, tensor in state.items()})
    model.eval()
    return model


def train(
    model: CharLM,
    texts: list[str],
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    max_len: int = 200,
    checkpoint_every: int = 0,
    on_checkpoint: Callable[[int, float], None] | None = None,
) -> list[tuple[int, float]]:
    """Teacher-forced cross-entropy over whole sequences.

    Each document is terminated with a newline so greedy decoding learns
    to stop at document boundaries. Returns the per-step loss log.
    ``on_checkpoint(step, recent_loss)`` fires every ``checkpoint_every``
    steps and once more at the end.
    """
    if not texts:
        raise ValueError("no training texts")
    torch.manual_seed(seed)
    order_rng = random.Random(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    sequences = [encode(t + "\n")[:max_len] for t in texts if t.strip()]
    log: list[tuple[int, float]] = []
    step = 0
    last_checkpointed = 0

    def fire_checkpoint():
        nonlocal last_checkpointed
        recent = [loss for s, loss in log if s > last_checkpointed]
        if on_checkpoint is not None and recent:
            on_checkpoint(step, sum(recent) / len(recent))
        last_checkpointed = step

    model.train()
    for _ in range(epochs):
        order = list(range(len(sequences)))
        order_rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = [sequences[i] for i in order[start : start + batch_size]]
            width = max(len(seq) for seq in batch)
            inputs = torch.full((len(batch), width), PAD_ID, dtype=torch.long)
            targets = torch.full((len(batch), width), -100, dtype=torch.long)
            for row, seq in enumerate(batch):
                inputs[row, 0] = BOS_ID
                if len(seq) > 1:
                    inputs[row, 1 : len(seq)] = torch.tensor(seq[:-1], dtype=torch.long)
                targets[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            logits, _ = model(inputs)
            loss = F.cross_entropy(
                logits.reshape(-1, VOCAB_SIZE), targets.reshape(-1), ignore_index=-100
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            log.append((step, loss.item()))
            if checkpoint_every and step % checkpoint_every == 0:
                fire_checkpoint()
    if step != last_checkpointed:
        fire_checkpoint()
    model.eval()
    return log


@torch.no_grad()
def greedy_decode(model: CharLM, prompt: str, max_new_chars: int, stop_at_newline: bool = True) -> str:
    """Deterministic argmax decoding, one character at a time."""
    model.eval()
    ids = [BOS_ID] + encode(prompt)
    logits, hidden = model(torch.tensor([ids], dtype=torch.long))
    out: list[str] = []
    next_logits = logits[0, -1]
    for _ in range(max_new_chars):
        next_id = int(next_logits.argmax())
        if next_id in (PAD_ID, BOS_ID):
            break
        ch = _ITOS[next_id]
        if ch == "\n" and stop_at_newline:
            break
        out.append(ch)
        logits, hidden = model(torch.tensor([[next_id]], dtype=torch.long), hidden)
        next_logits = logits[0, -1]
    return "".join(out)
