"""Waveform ingestion, boundary trimming, controlled degradations, and
frame-level feature extraction.

All operations are pure: noise injection takes an explicit seed, nothing
keeps mutable state, and every function returns new arrays.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    AllSilentError,
    DomainError,
    FeatureFileError,
    StereoInputError,
    TooShortError,
    ZeroSignalError,
)

log = logging.getLogger(__name__)

CANONICAL_SAMPLE_RATE = 16000

FEAT_MAGIC = b"UDSF"
FEAT_VERSION = 1

SPEED_RATIO_MIN = 0.25
SPEED_RATIO_MAX = 4.0


class FeatureMode(str, Enum):
    STANDIN_LOGMEL = "standin_logmel"
    EXTERNAL_SSL = "external_ssl"


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise StereoInputError(f"expected mono 1-D samples, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise DomainError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("waveform contains non-finite samples")
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        if peak > 1.0:
            n_clipped = int(np.sum(np.abs(samples) > 1.0))
            log.warning("clipping %d samples exceeding [-1, 1] (peak %.4f)", n_clipped, peak)
            samples = np.clip(samples, -1.0, 1.0)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureConfig:
    mode: FeatureMode = FeatureMode.STANDIN_LOGMEL
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 20.0
    log_floor: float = 1e-10
    feature_dir: Path | None = None  # external_ssl: directory of <utt>.feat files

    def __post_init__(self):
        if self.hop_ms <= 0:
            raise DomainError("hop_ms must be > 0")
        if self.window_ms < self.hop_ms:
            raise DomainError("window_ms must be >= hop_ms")
        if self.n_mels < 1:
            raise DomainError("n_mels must be >= 1")


@dataclass(frozen=True)
class FrameFeatures:
    """T x D matrix of frame-level features at a fixed hop."""

    frames: np.ndarray
    frame_hop_ms: float = 20.0
    frame_window_ms: float = 25.0
    source: FeatureMode = FeatureMode.STANDIN_LOGMEL
    layer_index: int | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DomainError(f"frames must be a T x D matrix with T,D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DomainError("features contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def load_wav(path: str | Path) -> Waveform:
    """Load a mono 16-bit or float PCM WAV file."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise StereoInputError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DomainError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, int(rate))


def save_wav(w: Waveform, path: str | Path) -> None:
    wavfile.write(str(path), w.sample_rate_hz, w.samples.astype(np.float32))


# --------------------------------------------------------------------------
# Boundary trimming
# --------------------------------------------------------------------------

def _window_rms(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_windows = (len(samples) - win) // hop + 1
    starts = np.arange(n_windows) * hop
    idx = starts[:, None] + np.arange(win)[None, :]
    return np.sqrt(np.mean(samples[idx] ** 2, axis=1))


def trim_silence(
    w: Waveform,
    threshold_db_rel_peak: float = -40.0,
    window_ms: float = 25.0,
    hop_ms: float = 10.0,
) -> Waveform:
    """Remove leading/trailing regions whose window RMS falls below
    peak-window RMS + threshold; interior content is untouched."""
    if len(w) == 0:
        raise DomainError("cannot trim an empty waveform")
    win = int(round(window_ms * w.sample_rate_hz / 1000))
    hop = int(round(hop_ms * w.sample_rate_hz / 1000))
    if len(w) < win:
        return w  # single partial window is its own peak; nothing to trim
    n = len(w)
    # leading boundary from a start-aligned grid, trailing from an
    # end-aligned grid, so the remainder shorter than one hop is covered
    lead_rms = _window_rms(w.samples, win, hop)
    trail_rms = _window_rms(w.samples[::-1], win, hop)
    peak = max(np.max(lead_rms), np.max(trail_rms))
    if peak <= 0.0:
        raise AllSilentError("all analysis windows are silent")
    threshold = peak * 10.0 ** (threshold_db_rel_peak / 20.0)
    lead_above = np.flatnonzero(lead_rms >= threshold)
    trail_above = np.flatnonzero(trail_rms >= threshold)
    if lead_above.size == 0 or trail_above.size == 0:
        raise AllSilentError("no analysis window exceeds the trimming threshold")
    first = int(lead_above[0])
    last = int(trail_above[0])  # windows counted from the end
    # Cut exactly the union of the leading and trailing below-threshold
    # windows; every removed sample was covered only by quiet windows.
    start = 0 if first == 0 else (first - 1) * hop + win
    end = n if last == 0 else n - ((last - 1) * hop + win)
    if start >= end:  # lone above-threshold window swallowed by its neighbours
        start, end = first * hop, n - last * hop
        if start >= end:
            start, end = first * hop, min(n, first * hop + win)
    return Waveform(w.samples[start:end], w.sample_rate_hz)


# --------------------------------------------------------------------------
# Controlled degradations
# --------------------------------------------------------------------------

def speed_perturb(w: Waveform, ratio: float) -> Waveform:
    """Resampling-based speed change: time and pitch scale together.
    Output duration = input duration / ratio (ratio < 1 slows speech)."""
    if not (SPEED_RATIO_MIN <= ratio <= SPEED_RATIO_MAX):
        raise DomainError(
            f"speed ratio {ratio} outside [{SPEED_RATIO_MIN}, {SPEED_RATIO_MAX}]"
        )
    n = len(w)
    if ratio == 1.0:
        return w
    m = int(round(n / ratio))
    positions = np.arange(m) * ratio
    positions = np.minimum(positions, n - 1)
    out = np.interp(positions, np.arange(n), w.samples)
    return Waveform(out, w.sample_rate_hz)


def add_noise_at_snr(w: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add zero-mean Gaussian noise at the requested SNR. Signal power is
    the mean square over the full input; deterministic given seed."""
    signal_power = float(np.mean(w.samples**2))
    if signal_power == 0.0:
        raise ZeroSignalError("input RMS is zero; SNR undefined")
    noise_power = signal_power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(w)) * np.sqrt(noise_power)
    return Waveform(w.samples + noise, w.sample_rate_hz)


# --------------------------------------------------------------------------
# Feature extraction
# --------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate_hz / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel_frames(
    samples: np.ndarray,
    sample_rate_hz: int,
    n_mels: int,
    window_ms: float,
    hop_ms: float,
    log_floor: float,
) -> np.ndarray:
    win = int(round(window_ms * sample_rate_hz / 1000))
    hop = int(round(hop_ms * sample_rate_hz / 1000))
    if len(samples) < win:
        raise TooShortError(f"need at least {win} samples, got {len(samples)}")
    n_frames = (len(samples) - win) // hop + 1
    starts = np.arange(n_frames) * hop
    idx = starts[:, None] + np.arange(win)[None, :]
    windowed = samples[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(windowed, n=win, axis=1)) ** 2
    fb = mel_filterbank(n_mels, win, sample_rate_hz)
    mel = power @ fb.T
    return np.log(np.maximum(mel, log_floor))


def extract_features(
    w: Waveform,
    cfg: FeatureConfig,
    utterance_id: str | None = None,
) -> FrameFeatures:
    """Frame-level features for one utterance.

    standin_logmel computes log-mel energies from the waveform;
    external_ssl loads <utterance_id>.feat from cfg.feature_dir verbatim.
    """
    if cfg.mode == FeatureMode.EXTERNAL_SSL:
        if cfg.feature_dir is None or utterance_id is None:
            raise FeatureFileError(
                "external_ssl mode needs feature_dir and an utterance id"
            )
        path = Path(cfg.feature_dir) / f"{utterance_id}.feat"
        frames, hop_ms, layer = read_feat_file(path)
        if abs(hop_ms - 20.0) > 1e-6:
            raise FeatureFileError(f"{path}: hop_ms {hop_ms} != 20")
        return FrameFeatures(
            frames,
            frame_hop_ms=hop_ms,
            frame_window_ms=cfg.window_ms,
            source=FeatureMode.EXTERNAL_SSL,
            layer_index=layer,
        )
    if w.sample_rate_hz != CANONICAL_SAMPLE_RATE:
        raise DomainError(
            f"feature extraction expects {CANONICAL_SAMPLE_RATE} Hz audio, "
            f"got {w.sample_rate_hz}"
        )
    frames = log_mel_frames(
        w.samples, w.sample_rate_hz, cfg.n_mels, cfg.window_ms, cfg.hop_ms, cfg.log_floor
    )
    return FrameFeatures(
        frames,
        frame_hop_ms=cfg.hop_ms,
        frame_window_ms=cfg.window_ms,
        source=FeatureMode.STANDIN_LOGMEL,
    )


# --------------------------------------------------------------------------
# External SSL feature files
# --------------------------------------------------------------------------
# Layout: magic "UDSF", u32 version=1, u32 T, u32 D, f32 hop_ms, then
# T*D little-endian f32 values, row-major.

def write_feat_file(path: str | Path, frames: np.ndarray, hop_ms: float = 20.0) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise FeatureFileError(f"frames must be 2-D, got shape {frames.shape}")
    t, d = frames.shape
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<IIIf", FEAT_VERSION, t, d, hop_ms))
        f.write(frames.tobytes(order="C"))


def read_feat_file(path: str | Path) -> tuple[np.ndarray, float, int | None]:
    path = Path(path)
    if not path.is_file():
        raise FeatureFileError(f"feature file not found: {path}")
    blob = path.read_bytes()
    header_size = 4 + struct.calcsize("<IIIf")
    if len(blob) < header_size or blob[:4] != FEAT_MAGIC:
        raise FeatureFileError(f"{path}: bad header")
    version, t, d, hop_ms = struct.unpack("<IIIf", blob[4:header_size])
    if version != FEAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    expected = header_size + 4 * t * d
    if len(blob) != expected:
        raise FeatureFileError(f"{path}: expected {expected} bytes, got {len(blob)}")
    frames = np.frombuffer(blob[header_size:], dtype="<f4").reshape(t, d)
    return frames.astype(np.float64), float(hop_ms), None
