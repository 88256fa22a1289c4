"""Speech unit normalizer: convolutional downsampler + transformer encoder
+ CTC projection, mapping arbitrary input speech to the reference speaker's
norm-unit sequence. Fine-tuned in up to three stages that differ only in
their reference/random speaker pairing; the conv frontend stays frozen.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .ctc import ctc_forward_batched, ctc_greedy_decode, min_frames_required
from .dsp import FeatureConfig, FrameFeatures, Waveform, extract_features, trim_silence
from .errors import (
    DomainError,
    EmptyDatasetError,
    SpeakerFilterViolation,
    TooShortError,
)
from .units import NormUnitSequence

MAX_POSITIONS = 4096


@dataclass(frozen=True)
class NormalizerConfig:
    """Architecture hyperparameters. Defaults are desk scale; the
    full-scale preset mirrors a base-size SSL encoder."""

    num_units: int
    feature_dim: int = 80
    downsample: int = 2  # power of two; one strided conv per factor of 2
    layers: int = 4
    width: int = 256
    heads: int = 4
    ff_width: int | None = None

    def __post_init__(self):
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise DomainError("downsample must be a power of two >= 1")
        if self.ff_width is None:
            object.__setattr__(self, "ff_width", 2 * self.width)


def full_scale_config(num_units: int = 1000, feature_dim: int = 80) -> NormalizerConfig:
    return NormalizerConfig(
        num_units=num_units, feature_dim=feature_dim, layers=12, width=768, heads=12,
        ff_width=3072,
    )


@dataclass(frozen=True)
class StageConfig:
    stage_id: int
    reference_speaker: str
    random_speaker_filter: frozenset[str]
    max_updates: int = 10000
    learning_rate: float = 3e-4
    warmup_fraction: float = 0.1
    batch_size: int = 8
    seed: int = 0
    checkpoint_interval: int | None = None

    def __post_init__(self):
        if self.stage_id not in (1, 2, 3):
            raise DomainError(f"stage_id must be 1, 2 or 3, got {self.stage_id}")
        if self.max_updates < 1:
            raise DomainError("max_updates must be >= 1")
        if self.stage_id == 3 and len(self.random_speaker_filter) != 1:
            raise DomainError("stage 3 uses exactly one dysarthric random speaker")
        object.__setattr__(
            self, "random_speaker_filter", frozenset(self.random_speaker_filter)
        )


@dataclass(frozen=True)
class TrainingPair:
    """One (random-speaker input, reference norm-unit target) pair sharing
    a content key."""

    input_features: FrameFeatures
    target: NormUnitSequence
    content_key: str
    input_speaker: str
    reference_speaker: str
    utterance_id: str = ""


@dataclass
class TrainingLogEntry:
    step: int
    loss: float
    lr: float
    wall_ms: float


def _sinusoidal_positions(max_len: int, width: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, width, 2, dtype=torch.float32) * (-math.log(10000.0) / width)
    )
    table = torch.zeros(max_len, width)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)
    return table


class NormalizerModel(nn.Module):
    def __init__(self, cfg: NormalizerConfig):
        super().__init__()
        self.cfg = cfg
        n_strided = cfg.downsample.bit_length() - 1
        convs: list[nn.Module] = [
            nn.Conv1d(cfg.feature_dim, cfg.width, kernel_size=3, padding=1),
            nn.GELU(),
        ]
        for _ in range(n_strided):
            convs += [nn.Conv1d(cfg.width, cfg.width, kernel_size=2, stride=2), nn.GELU()]
        self.frontend = nn.Sequential(*convs)
        self.register_buffer(
            "positions", _sinusoidal_positions(MAX_POSITIONS, cfg.width), persistent=False
        )
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.width,
            nhead=cfg.heads,
            dim_feedforward=cfg.ff_width,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=cfg.layers, enable_nested_tensor=False
        )
        self.ctc_head = nn.Linear(cfg.width, cfg.num_units + 1)

    @property
    def blank_index(self) -> int:
        return self.cfg.num_units

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "frontend": list(self.frontend.parameters()),
            "encoder": list(self.encoder.parameters()),
            "ctc": list(self.ctc_head.parameters()),
        }

    def output_length(self, t: int) -> int:
        return t // self.cfg.downsample

    def forward(
        self, feats: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """feats (B, T, D), lengths (B,) -> logits (B, T', K+1), out lengths."""
        x = self.frontend(feats.transpose(1, 2)).transpose(1, 2)
        out_lengths = lengths // self.cfg.downsample
        x = x + self.positions[: x.shape[1]].unsqueeze(0)
        pad_mask = (
            torch.arange(x.shape[1], device=x.device)[None, :] >= out_lengths[:, None]
        )
        x = self.encoder(x, src_key_padding_mask=pad_mask)
        return self.ctc_head(x), out_lengths


def create_normalizer(cfg: NormalizerConfig, seed: int = 0) -> NormalizerModel:
    """Seeded construction so initial weights are reproducible."""
    torch.manual_seed(seed)
    model = NormalizerModel(cfg)
    model.eval()
    return model


def forward_logits(m: NormalizerModel, f: FrameFeatures) -> np.ndarray:
    """Inference logits for one utterance, shape (floor(T/S), K+1)."""
    frames = np.asarray(f.frames, dtype=np.float64)
    if frames.shape[1] != m.cfg.feature_dim:
        raise DomainError(
            f"feature dim {frames.shape[1]} != model input dim {m.cfg.feature_dim}"
        )
    t = frames.shape[0]
    if t < m.cfg.downsample:
        raise TooShortError(f"need at least {m.cfg.downsample} frames, got {t}")
    was_training = m.training
    m.eval()
    with torch.no_grad():
        x = torch.from_numpy(frames).to(torch.float32).unsqueeze(0)
        logits, _ = m(x, torch.tensor([t]))
    if was_training:
        m.train()
    out = logits.squeeze(0).numpy().astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise DomainError("normalizer produced non-finite logits")
    return out


def normalize(m: NormalizerModel, w: Waveform, feat_cfg: FeatureConfig) -> NormUnitSequence:
    """trim -> features -> logits -> greedy CTC decode."""
    feats = extract_features(trim_silence(w), feat_cfg)
    return ctc_greedy_decode(forward_logits(m, feats), m.cfg.num_units)


# --------------------------------------------------------------------------
# Fine-tuning
# --------------------------------------------------------------------------

def _validate_pairs(cfg: StageConfig, pairs: Sequence[TrainingPair]) -> None:
    for p in pairs:
        if cfg.random_speaker_filter and p.input_speaker not in cfg.random_speaker_filter:
            raise SpeakerFilterViolation(
                f"pair {p.utterance_id or p.content_key}: input speaker "
                f"{p.input_speaker} not allowed in stage {cfg.stage_id}"
            )
        if p.reference_speaker != cfg.reference_speaker:
            raise SpeakerFilterViolation(
                f"pair {p.utterance_id or p.content_key}: target speaker "
                f"{p.reference_speaker} != stage reference {cfg.reference_speaker}"
            )


def _schedule_lr(step: int, total: int, base: float, warmup_fraction: float) -> float:
    warmup = max(1, int(total * warmup_fraction))
    if step < warmup:
        return base * (step + 1) / warmup
    if total == warmup:
        return base
    frac = (total - step) / (total - warmup)
    return base * max(frac, 0.0)


def _make_batch(
    model: NormalizerModel, batch_pairs: Sequence[TrainingPair]
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    t_max = max(p.input_features.num_frames for p in batch_pairs)
    l_max = max((len(p.target) for p in batch_pairs), default=0)
    feats = torch.zeros(len(batch_pairs), t_max, model.cfg.feature_dim)
    lengths = torch.zeros(len(batch_pairs), dtype=torch.long)
    targets = torch.zeros(len(batch_pairs), max(l_max, 1), dtype=torch.long)
    target_lengths = torch.zeros(len(batch_pairs), dtype=torch.long)
    for i, p in enumerate(batch_pairs):
        t = p.input_features.num_frames
        feats[i, :t] = torch.from_numpy(np.asarray(p.input_features.frames)).to(
            torch.float32
        )
        lengths[i] = t
        targets[i, : len(p.target)] = torch.tensor(p.target.units, dtype=torch.long)
        target_lengths[i] = len(p.target)
    return feats, lengths, targets, target_lengths


def run_finetune_stage(
    m: NormalizerModel,
    cfg: StageConfig,
    pairs: Sequence[TrainingPair],
    checkpoint_callback=None,
) -> tuple[NormalizerModel, list[TrainingLogEntry]]:
    """Adam fine-tuning of the encoder and CTC head; the frontend stays
    bit-identical. Returns the model and a per-step loss log."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyDatasetError(f"stage {cfg.stage_id}: no training pairs")
    _validate_pairs(cfg, pairs)
    for p in pairs:
        if max(p.target.units, default=-1) >= m.cfg.num_units:
            raise DomainError(
                f"pair {p.utterance_id or p.content_key}: target unit out of model range"
            )
    feasible = [
        p
        for p in pairs
        if min_frames_required(p.target.units) <= m.output_length(p.input_features.num_frames)
    ]
    if not feasible:
        raise EmptyDatasetError(
            f"stage {cfg.stage_id}: no pair admits a feasible CTC alignment"
        )

    groups = m.parameter_groups()
    frozen_flags = [p.requires_grad for p in groups["frontend"]]
    for p in groups["frontend"]:
        p.requires_grad_(False)
    trainable = groups["encoder"] + groups["ctc"]
    optimizer = torch.optim.Adam(trainable, lr=cfg.learning_rate)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    log: list[TrainingLogEntry] = []
    m.train()
    blank = m.blank_index
    for step in range(cfg.max_updates):
        if len(order) < cfg.batch_size:
            order += list(rng.permutation(len(feasible)))
        batch_idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        batch = [feasible[i] for i in batch_idx]
        feats, lengths, targets, target_lengths = _make_batch(m, batch)

        t0 = time.perf_counter()
        lr = _schedule_lr(step, cfg.max_updates, cfg.learning_rate, cfg.warmup_fraction)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        logits, out_lengths = m(feats, lengths)
        log_probs = torch.log_softmax(logits, dim=-1)
        losses = ctc_forward_batched(log_probs, targets, out_lengths, target_lengths, blank)
        loss = losses.mean()
        loss.backward()
        optimizer.step()
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log.append(TrainingLogEntry(step, float(loss.item()), lr, wall_ms))
        if (
            checkpoint_callback is not None
            and cfg.checkpoint_interval
            and (step + 1) % cfg.checkpoint_interval == 0
        ):
            checkpoint_callback(m, step + 1)

    m.eval()
    for p, flag in zip(groups["frontend"], frozen_flags):
        p.requires_grad_(flag)
    return m, log


def write_training_log(log: Sequence[TrainingLogEntry], path) -> None:
    """CSV `step,loss,lr,wall_ms`."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss,lr,wall_ms\n")
        for e in log:
            f.write(f"{e.step},{e.loss:.6f},{e.lr:.8f},{e.wall_ms:.3f}\n")
