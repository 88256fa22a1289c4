"""Character-to-norm-unit transducer: manufactures parallel targets for
stage-1 fine-tuning when the reference speaker never recorded a training
utterance. A small encoder-decoder transformer trained with teacher
forcing and decoded greedily."""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import DomainError, EmptyDatasetError, EmptyTextError, UnitRangeError
from .normalizer import TrainingLogEntry, _sinusoidal_positions
from .units import NormUnitSequence

PAD, BOS, EOS, OOV = 0, 1, 2, 3
_PUNCT = re.compile(r"[^\w\s']", flags=re.UNICODE)
_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation except apostrophes, collapse whitespace."""
    text = _PUNCT.sub(" ", text.lower())
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class CharVocab:
    chars: tuple[str, ...]

    @classmethod
    def from_corpus(cls, texts: Sequence[str]) -> "CharVocab":
        seen = sorted({c for t in texts for c in normalize_text(t)})
        return cls(tuple(seen))

    @property
    def size(self) -> int:
        return len(self.chars) + 4  # pad/bos/eos/oov

    def encode(self, text: str) -> list[int]:
        index = {c: i + 4 for i, c in enumerate(self.chars)}
        return [index.get(c, OOV) for c in normalize_text(text)]


class TextToUnitModel(nn.Module):
    """Desk-scale 2+2 layer transformer; unit vocabulary plus BOS/EOS."""

    def __init__(self, vocab: CharVocab, num_units: int, width: int = 128,
                 layers: int = 2, heads: int = 4):
        super().__init__()
        self.vocab = vocab
        self.num_units = num_units
        # decoder symbols: unit ids 0..K-1, then PAD, BOS, EOS
        self.unit_pad = num_units
        self.unit_bos = num_units + 1
        self.unit_eos = num_units + 2
        self.src_embed = nn.Embedding(vocab.size, width, padding_idx=PAD)
        self.tgt_embed = nn.Embedding(num_units + 3, width, padding_idx=self.unit_pad)
        self.register_buffer(
            "positions", _sinusoidal_positions(1024, width), persistent=False
        )
        self.transformer = nn.Transformer(
            d_model=width,
            nhead=heads,
            num_encoder_layers=layers,
            num_decoder_layers=layers,
            dim_feedforward=2 * width,
            dropout=0.0,
            batch_first=True,
        )
        self.out_proj = nn.Linear(width, num_units + 3)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        src_x = self.src_embed(src) + self.positions[: src.shape[1]].unsqueeze(0)
        tgt_x = self.tgt_embed(tgt_in) + self.positions[: tgt_in.shape[1]].unsqueeze(0)
        n = tgt_in.shape[1]
        causal = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        out = self.transformer(
            src_x,
            tgt_x,
            tgt_mask=causal,
            src_key_padding_mask=src == PAD,
            tgt_key_padding_mask=tgt_in == self.unit_pad,
        )
        return self.out_proj(out)


def train_text_to_unit(
    corpus: Sequence[tuple[str, NormUnitSequence]],
    num_units: int,
    seed: int,
    max_updates: int,
    learning_rate: float = 1e-3,
    batch_size: int = 8,
) -> tuple[TextToUnitModel, list[TrainingLogEntry]]:
    """Teacher-forced cross-entropy training, deterministic given seed."""
    corpus = list(corpus)
    if not corpus:
        raise EmptyDatasetError("text-to-unit corpus is empty")
    for text, units in corpus:
        if max(units.units, default=-1) >= num_units:
            raise UnitRangeError(
                f"target for {text!r} contains a unit id >= {num_units}"
            )
    vocab = CharVocab.from_corpus([t for t, _ in corpus])
    torch.manual_seed(seed)
    model = TextToUnitModel(vocab, num_units)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = nn.CrossEntropyLoss(ignore_index=model.unit_pad)

    encoded = [
        (vocab.encode(text), list(units.units)) for text, units in corpus
    ]
    rng = np.random.default_rng(seed)
    order: list[int] = []
    log: list[TrainingLogEntry] = []
    model.train()
    for step in range(max_updates):
        if len(order) < batch_size:
            order += list(rng.permutation(len(encoded)))
        batch_idx, order = order[:batch_size], order[batch_size:]
        batch = [encoded[i] for i in batch_idx]
        s_max = max(max(len(s) for s, _ in batch), 1)
        t_max = max(len(u) for _, u in batch) + 1
        src = torch.full((len(batch), s_max), PAD, dtype=torch.long)
        tgt_in = torch.full((len(batch), t_max), model.unit_pad, dtype=torch.long)
        tgt_out = torch.full((len(batch), t_max), model.unit_pad, dtype=torch.long)
        for i, (s, u) in enumerate(batch):
            src[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            tgt_in[i, 0] = model.unit_bos
            tgt_in[i, 1 : len(u) + 1] = torch.tensor(u, dtype=torch.long)
            tgt_out[i, : len(u)] = torch.tensor(u, dtype=torch.long)
            tgt_out[i, len(u)] = model.unit_eos

        t0 = time.perf_counter()
        optimizer.zero_grad()
        logits = model(src, tgt_in)
        loss = loss_fn(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1))
        loss.backward()
        optimizer.step()
        log.append(
            TrainingLogEntry(
                step, float(loss.item()), learning_rate,
                (time.perf_counter() - t0) * 1000.0,
            )
        )
    model.eval()
    return model, log


def translate_text_to_units(
    m: TextToUnitModel, text: str, max_len: int = 200
) -> NormUnitSequence:
    """Greedy decoding until EOS or max_len; duplicates collapsed."""
    encoded = m.vocab.encode(text)
    if not encoded:
        raise EmptyTextError(f"text {text!r} is empty after normalization")
    m.eval()
    src = torch.tensor([encoded], dtype=torch.long)
    tokens = [m.unit_bos]
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_len):
            tgt_in = torch.tensor([tokens], dtype=torch.long)
            logits = m(src, tgt_in)[0, -1]
            logits[m.unit_pad] = -torch.inf
            logits[m.unit_bos] = -torch.inf
            nxt = int(torch.argmax(logits).item())
            if nxt == m.unit_eos:
                break
            if nxt >= m.num_units:
                raise DomainError(f"decoder emitted invalid symbol {nxt}")
            out.append(nxt)
            tokens.append(nxt)
    deduped: list[int] = []
    for u in out:
        if not deduped or deduped[-1] != u:
            deduped.append(u)
    return NormUnitSequence(tuple(deduped[:max_len]), m.num_units)
