"""Unit vocoder: embed norm units, predict per-unit durations, upsample
with a speaker embedding, and generate waveforms adversarially
(multi-period + multi-scale discriminators).

Desk-scale generator: upsample factors (8, 5, 4, 2) for 320 samples per
20 ms frame at 16 kHz. Training teacher-forces ground-truth durations;
the duration predictor is used at inference only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import Waveform, mel_filterbank
from .errors import (
    DomainError,
    EmptyDatasetError,
    LengthMismatchError,
    UnitRangeError,
    UnknownSpeakerError,
)
from .units import DurationSequence, NormUnitSequence

HOP_SAMPLES = 320
SAMPLE_RATE = 16000
DURATION_FLOOR = 0.1  # frames; added to the softplus output


@dataclass(frozen=True)
class VocoderConfig:
    num_units: int
    unit_embed: int = 64
    speaker_embed: int = 16
    base_channels: int = 64
    upsample_factors: tuple[int, ...] = (8, 5, 4, 2)
    mel_weight: float = 45.0
    feature_matching_weight: float = 2.0
    duration_weight: float = 1.0
    n_mels: int = 80

    def __post_init__(self):
        if math.prod(self.upsample_factors) != HOP_SAMPLES:
            raise DomainError(
                f"upsample factors {self.upsample_factors} must multiply to {HOP_SAMPLES}"
            )


@dataclass(frozen=True)
class VocoderTrainItem:
    units: NormUnitSequence
    durations: DurationSequence
    speaker: str
    waveform: Waveform

    def __post_init__(self):
        if len(self.units) != len(self.durations):
            raise LengthMismatchError("units and durations differ in length")
        total = sum(self.durations.durations) * HOP_SAMPLES
        if abs(total - len(self.waveform)) > HOP_SAMPLES:
            raise DomainError(
                f"waveform length {len(self.waveform)} more than one hop away "
                f"from duration total {total}"
            )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3, dilations=(1, 3)):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(
                channels, channels, kernel, dilation=d, padding=(kernel - 1) * d // 2
            )
            for d in dilations
        )

    def forward(self, x):
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, 0.1))
        return x


class Generator(nn.Module):
    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        c = cfg.base_channels
        self.pre = nn.Conv1d(cfg.unit_embed + cfg.speaker_embed, c, 7, padding=3)
        ups, blocks = [], []
        for u in cfg.upsample_factors:
            c_out = max(c // 2, 8)
            if u % 2 == 0:
                ups.append(nn.ConvTranspose1d(c, c_out, 2 * u, stride=u, padding=u // 2))
            else:
                ups.append(nn.ConvTranspose1d(c, c_out, u, stride=u))
            blocks.append(ResidualBlock(c_out))
            c = c_out
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.post = nn.Conv1d(c, 1, 7, padding=3)

    def forward(self, x):
        x = self.pre(x)
        for up, block in zip(self.ups, self.blocks):
            x = block(up(F.leaky_relu(x, 0.1)))
        return torch.tanh(self.post(F.leaky_relu(x, 0.1)))


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int):
        super().__init__()
        self.period = period
        chans = [1, 16, 32, 64]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], (5, 1), stride=(3, 1), padding=(2, 0))
            for i in range(len(chans) - 1)
        )
        self.post = nn.Conv2d(chans[-1], 1, (3, 1), padding=(1, 0))

    def forward(self, x):
        b, _, t = x.shape
        pad = (self.period - t % self.period) % self.period
        x = F.pad(x, (0, pad), mode="reflect" if t > 1 else "constant")
        x = x.view(b, 1, -1, self.period)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            feats.append(x)
        out = self.post(x)
        feats.append(out)
        return out.flatten(1), feats


class ScaleDiscriminator(nn.Module):
    def __init__(self, downsample: int):
        super().__init__()
        self.downsample = downsample
        chans = [1, 16, 32, 64]
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], 15, stride=4, padding=7)
            for i in range(len(chans) - 1)
        )
        self.post = nn.Conv1d(chans[-1], 1, 3, padding=1)

    def forward(self, x):
        if self.downsample > 1:
            x = F.avg_pool1d(x, self.downsample, stride=self.downsample)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            feats.append(x)
        out = self.post(x)
        feats.append(out)
        return out.flatten(1), feats


class DiscriminatorSet(nn.Module):
    def __init__(self, periods=(2, 3, 5), scales=(1, 2)):
        super().__init__()
        self.all = nn.ModuleList(
            [PeriodDiscriminator(p) for p in periods]
            + [ScaleDiscriminator(s) for s in scales]
        )

    def forward(self, x):
        return [d(x) for d in self.all]


class UnitVocoder(nn.Module):
    def __init__(self, cfg: VocoderConfig, speakers: Sequence[str]):
        super().__init__()
        if len(speakers) != len(set(speakers)):
            raise DomainError("duplicate speaker ids")
        self.cfg = cfg
        self.speakers = {name: i for i, name in enumerate(speakers)}
        self.unit_lut = nn.Embedding(cfg.num_units, cfg.unit_embed)
        self.speaker_lut = nn.Embedding(len(speakers), cfg.speaker_embed)
        hidden = 64
        self.duration_predictor = nn.Sequential(
            nn.Conv1d(cfg.unit_embed, hidden, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv1d(hidden, 1, 1),
        )
        self.generator = Generator(cfg)
        self.discriminators = DiscriminatorSet()

    def speaker_index(self, speaker: str) -> int:
        if speaker not in self.speakers:
            raise UnknownSpeakerError(f"unknown speaker {speaker!r}")
        return self.speakers[speaker]


def create_vocoder(cfg: VocoderConfig, speakers: Sequence[str], seed: int = 0) -> UnitVocoder:
    torch.manual_seed(seed)
    v = UnitVocoder(cfg, speakers)
    v.eval()
    return v


# --------------------------------------------------------------------------
# Durations
# --------------------------------------------------------------------------

def _unit_tensor(v: UnitVocoder, units: NormUnitSequence) -> torch.Tensor:
    if len(units) == 0:
        raise DomainError("unit sequence is empty")
    if max(units.units) >= v.cfg.num_units:
        raise UnitRangeError("unit id outside the vocoder codebook range")
    return torch.tensor([units.units], dtype=torch.long)


def _duration_forward(v: UnitVocoder, unit_ids: torch.Tensor) -> torch.Tensor:
    """(B, L) unit ids -> (B, L) strictly positive frame counts."""
    emb = v.unit_lut(unit_ids).transpose(1, 2)
    raw = v.duration_predictor(emb).squeeze(1)
    return F.softplus(raw) + DURATION_FLOOR


def predict_durations(v: UnitVocoder, units: NormUnitSequence) -> np.ndarray:
    """One strictly positive real per unit (frames)."""
    ids = _unit_tensor(v, units)
    with torch.no_grad():
        out = _duration_forward(v, ids)
    return out.squeeze(0).numpy().astype(np.float64)


def round_durations(durations: Sequence[float]) -> list[int]:
    """Round half-up with a floor of one frame; applied at upsample time."""
    return [max(1, int(math.floor(d + 0.5))) for d in durations]


def duration_loss(pred: Sequence[float], target: DurationSequence) -> float:
    """Mean squared error of durations in the logarithmic domain."""
    pred = np.asarray(pred, dtype=np.float64)
    if len(pred) != len(target):
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(target)} targets")
    if np.any(pred <= 0):
        raise DomainError("predicted durations must be strictly positive")
    tgt = np.asarray(target.durations, dtype=np.float64)
    return float(np.mean((np.log(pred) - np.log(tgt)) ** 2))


# --------------------------------------------------------------------------
# Upsampling and generation
# --------------------------------------------------------------------------

def _upsample_tensor(
    v: UnitVocoder,
    unit_ids: torch.Tensor,
    durations_frames: Sequence[int],
    speaker_idx: int,
) -> torch.Tensor:
    """(1, L) ids + per-unit frame counts -> (1, E_u + E_s, F)."""
    emb = v.unit_lut(unit_ids).squeeze(0)  # (L, E_u)
    repeated = torch.repeat_interleave(
        emb, torch.tensor(list(durations_frames), dtype=torch.long), dim=0
    )  # (F, E_u)
    spk = v.speaker_lut(torch.tensor([speaker_idx])).expand(repeated.shape[0], -1)
    return torch.cat([repeated, spk], dim=1).T.unsqueeze(0)


def upsample_with_speaker(
    v: UnitVocoder,
    units: NormUnitSequence,
    durations_frames: Sequence[int],
    speaker: str,
) -> np.ndarray:
    """Frame matrix (sum(durations) x (E_u + E_s)): each frame carries the
    embedding of the unit owning it, concatenated with the speaker embedding."""
    if len(units) != len(durations_frames):
        raise LengthMismatchError(
            f"{len(units)} units vs {len(durations_frames)} durations"
        )
    if any(d < 1 for d in durations_frames):
        raise DomainError("frame durations must be >= 1")
    ids = _unit_tensor(v, units)
    idx = v.speaker_index(speaker)
    with torch.no_grad():
        frames = _upsample_tensor(v, ids, durations_frames, idx)
    return frames.squeeze(0).T.numpy().astype(np.float64)


def generate_waveform(
    v: UnitVocoder,
    units: NormUnitSequence,
    speaker: str,
    durations: Sequence[int] | None = None,
) -> Waveform:
    """Waveform of exactly sum(durations) * 320 samples at 16 kHz."""
    ids = _unit_tensor(v, units)
    idx = v.speaker_index(speaker)
    if durations is None:
        durations = round_durations(predict_durations(v, units))
    elif len(durations) != len(units):
        raise LengthMismatchError(f"{len(durations)} durations vs {len(units)} units")
    was_training = v.training
    v.eval()
    with torch.no_grad():
        frames = _upsample_tensor(v, ids, durations, idx)
        audio = v.generator(frames)
    if was_training:
        v.train()
    samples = audio.squeeze().numpy().astype(np.float64)
    expected = sum(durations) * HOP_SAMPLES
    if samples.shape[0] != expected:
        raise DomainError(
            f"generator produced {samples.shape[0]} samples, expected {expected}"
        )
    return Waveform(samples, SAMPLE_RATE)


# --------------------------------------------------------------------------
# Mel loss (differentiable)
# --------------------------------------------------------------------------

class MelSpectrogram(nn.Module):
    def __init__(self, n_mels: int = 80, win: int = 400, hop: int = 160):
        super().__init__()
        self.win, self.hop = win, hop
        self.register_buffer("window", torch.hann_window(win), persistent=False)
        fb = mel_filterbank(n_mels, win, SAMPLE_RATE)
        self.register_buffer("fb", torch.from_numpy(fb).to(torch.float32), persistent=False)

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        """(B, 1, N) or (B, N) audio -> (B, n_mels, frames) log-mel."""
        if audio.dim() == 3:
            audio = audio.squeeze(1)
        spec = torch.stft(
            audio,
            n_fft=self.win,
            hop_length=self.hop,
            win_length=self.win,
            window=self.window,
            center=False,
            return_complex=True,
        )
        power = spec.real**2 + spec.imag**2
        mel = torch.matmul(self.fb, power)
        return torch.log(torch.clamp(mel, min=1e-10))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VocoderTrainConfig:
    seed: int = 0
    max_updates: int = 2000
    learning_rate: float = 2e-4
    segment_frames: int = 24
    log_every: int = 1


@dataclass
class VocoderLogEntry:
    step: int
    total: float
    adversarial: float
    mel: float
    feature_matching: float
    duration: float
    wall_ms: float


def _feature_matching(real_feats, fake_feats) -> torch.Tensor:
    loss = 0.0
    for rf, ff in zip(real_feats, fake_feats):
        loss = loss + F.l1_loss(ff, rf.detach())
    return loss


def train_vocoder(
    v: UnitVocoder,
    items: Sequence[VocoderTrainItem],
    cfg: VocoderTrainConfig,
) -> tuple[UnitVocoder, list[VocoderLogEntry]]:
    """Alternating discriminator/generator updates. Generator objective:
    adversarial + mel_weight * mel + fm_weight * feature-matching +
    dur_weight * duration loss (ground-truth durations teacher-forced)."""
    items = list(items)
    if not items:
        raise EmptyDatasetError("no vocoder training items")
    for item in items:
        v.speaker_index(item.speaker)  # raises UnknownSpeakerError

    lam_mel = v.cfg.mel_weight
    lam_fm = v.cfg.feature_matching_weight
    lam_dur = v.cfg.duration_weight
    mel_fn = MelSpectrogram(v.cfg.n_mels)
    gen_params = (
        list(v.unit_lut.parameters())
        + list(v.speaker_lut.parameters())
        + list(v.duration_predictor.parameters())
        + list(v.generator.parameters())
    )
    opt_g = torch.optim.Adam(gen_params, lr=cfg.learning_rate, betas=(0.8, 0.99))
    opt_d = torch.optim.Adam(
        v.discriminators.parameters(), lr=cfg.learning_rate, betas=(0.8, 0.99)
    )
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    log: list[VocoderLogEntry] = []
    v.train()
    for step in range(cfg.max_updates):
        item = items[int(rng.integers(len(items)))]
        total_frames = sum(item.durations.durations)
        seg = min(cfg.segment_frames, total_frames)
        start = int(rng.integers(0, total_frames - seg + 1))

        # frame-aligned crop; waveform padded to the duration total
        wav = np.zeros(total_frames * HOP_SAMPLES)
        n = min(len(item.waveform), len(wav))
        wav[:n] = item.waveform.samples[:n]
        real = torch.tensor(
            wav[start * HOP_SAMPLES : (start + seg) * HOP_SAMPLES], dtype=torch.float32
        ).view(1, 1, -1)

        ids = torch.tensor([item.units.units], dtype=torch.long)
        spk_idx = v.speaker_index(item.speaker)
        frames = _upsample_tensor(v, ids, item.durations.durations, spk_idx)
        frames = frames[:, :, start : start + seg]

        t0 = time.perf_counter()

        # discriminator step
        fake = v.generator(frames)
        opt_d.zero_grad()
        d_loss = 0.0
        for (real_out, _), (fake_out, _) in zip(
            v.discriminators(real), v.discriminators(fake.detach())
        ):
            d_loss = d_loss + torch.mean((real_out - 1.0) ** 2) + torch.mean(fake_out**2)
        d_loss.backward()
        opt_d.step()

        # generator step
        opt_g.zero_grad()
        fake = v.generator(_upsample_tensor(v, ids, item.durations.durations, spk_idx)[
            :, :, start : start + seg
        ])
        adv = torch.zeros(())
        fm = torch.zeros(())
        for (real_out, real_feats), (fake_out, fake_feats) in zip(
            v.discriminators(real), v.discriminators(fake)
        ):
            adv = adv + torch.mean((fake_out - 1.0) ** 2)
            fm = fm + _feature_matching(real_feats, fake_feats)
        mel = F.l1_loss(mel_fn(fake), mel_fn(real))
        pred = _duration_forward(v, ids.detach()).squeeze(0)
        dur = torch.mean(
            (
                torch.log(pred)
                - torch.log(torch.tensor(item.durations.durations, dtype=torch.float32))
            )
            ** 2
        )
        g_loss = adv + lam_mel * mel + lam_fm * fm + lam_dur * dur
        g_loss.backward()
        opt_g.step()
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log.append(
            VocoderLogEntry(
                step,
                float(g_loss.item()),
                float(adv.item()),
                float(mel.item()),
                float(fm.item()),
                float(dur.item()),
                wall_ms,
            )
        )
    v.eval()
    return v, log


def write_vocoder_log(log: Sequence[VocoderLogEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,total,adversarial,mel,feature_matching,duration,wall_ms\n")
        for e in log:
            f.write(
                f"{e.step},{e.total:.6f},{e.adversarial:.6f},{e.mel:.6f},"
                f"{e.feature_matching:.6f},{e.duration:.6f},{e.wall_ms:.3f}\n"
            )
