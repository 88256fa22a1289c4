"""Deterministic synthetic parallel corpus.

A small vocabulary of "words", each a fixed sequence of tonal "phonemes",
rendered for several pseudo-speakers derived from one reference by
deterministic spectral warps: frequency scaling, tempo change, and (for
the dysarthric analog) inserted pauses and amplitude wobble. Blocks are
assigned round-robin (B1/B2/B3) so block-filtered training mirrors a
words-in-blocks corpus layout.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Waveform, save_wav

SAMPLE_RATE = 16000

# phoneme inventory: harmonic complexes. Identity is carried by the
# harmonic amplitude pattern (timbre), which survives resampling-based
# speed perturbation, not just by the fundamental, which does not.
# The top fundamental keeps harmonic 5 below Nyquist even after a 1.2x
# speaker warp compounded with a 1.6x speed sweep.
PHONEME_FREQS = (220.0, 265.0, 318.0, 382.0, 459.0, 551.0, 662.0, 795.0)

# loud/soft pattern of harmonics 2..5 per phoneme: even-parity 4-bit
# codes, so any two phonemes differ in at least two harmonics and a
# resampling ratio that lands one fundamental on another's slot still
# leaves an unambiguous timbre cue
TIMBRE_PATTERNS = (
    0b0000, 0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100, 0b1111,
)


def phoneme_amps(pid: int) -> tuple[float, ...]:
    pattern = TIMBRE_PATTERNS[pid]
    return (1.0,) + tuple(
        0.85 if (pattern >> bit) & 1 else 0.12 for bit in range(4)
    )


PHONEMES_PER_WORD = 5
SEGMENT_S = 0.14
EDGE_PAD_S = 0.12
AMPLITUDE = 0.3


@dataclass(frozen=True)
class SpeakerProfile:
    name: str
    freq_warp: float
    tempo: float  # < 1 slows speech down
    pause_s: float = 0.04  # gap between phonemes; longer for dysarthric speech
    wobble: float = 0.0  # amplitude modulation depth
    jitter: float = 0.0  # relative segment duration jitter across repetitions
    freq_jitter: float = 0.0  # per-phoneme relative pitch jitter
    slur: float = 0.0  # probability a phoneme is blended with a neighbor
    health: str = "healthy"


# every speaker leaves a small inter-phoneme gap (at least one analysis
# window) so no frame straddles two phonemes and the reference unit
# sequence composes per phoneme; the reference voice renders without
# duration jitter so its norm units are stable across repetitions
DEFAULT_SPEAKERS = (
    SpeakerProfile("REF", 1.00, 1.00),
    SpeakerProfile("SPK1", 1.12, 0.95, jitter=0.06, freq_jitter=0.012),
    # a bridge voice between the healthy pool and the dysarthric analog:
    # warmer warp, slower tempo, longer gaps, a hint of wobble
    SpeakerProfile(
        "SPK2", 1.15, 0.76, pause_s=0.06, wobble=0.08, jitter=0.06,
        freq_jitter=0.012,
    ),
    # the dysarthric analog articulates imprecisely: occasional phonemes
    # are slurred halfway toward a neighboring phoneme, which destroys
    # their identity in a way no amount of training can recover, so the
    # normalizer keeps a small irreducible error floor on this voice that
    # is stable under additional speed or noise degradation
    SpeakerProfile(
        "DYS1", 1.20, 0.70, pause_s=0.08, wobble=0.25, jitter=0.15,
        freq_jitter=0.03, slur=0.16, health="dysarthric",
    ),
)


def word_label(index: int) -> str:
    return f"word{index:02d}"


def word_phonemes(index: int) -> tuple[int, ...]:
    """Deterministic phoneme sequence for a word; no adjacent repeats."""
    rng = np.random.default_rng(1000 + index)
    seq: list[int] = []
    while len(seq) < PHONEMES_PER_WORD:
        p = int(rng.integers(len(PHONEME_FREQS)))
        if not seq or seq[-1] != p:
            seq.append(p)
    return tuple(seq)


def block_for_word(index: int) -> str:
    return ("B1", "B2", "B3")[index % 3]


def render_utterance(
    word_index: int,
    speaker: SpeakerProfile,
    repetition: int = 0,
    sample_rate: int = SAMPLE_RATE,
) -> Waveform:
    """Deterministic rendering; repetitions differ by small seeded jitter."""
    blob = f"{word_index}:{speaker.name}:{repetition}".encode()
    rng = np.random.default_rng(
        int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")
    )
    pieces = [np.zeros(int(EDGE_PAD_S * sample_rate))]
    for pid in word_phonemes(word_index):
        seg_s = SEGMENT_S / speaker.tempo
        if speaker.jitter > 0:
            seg_s *= 1.0 + speaker.jitter * float(rng.uniform(-1.0, 1.0))
        n = int(seg_s * sample_rate)
        t = np.arange(n) / sample_rate
        base_freq = PHONEME_FREQS[pid]
        amps = phoneme_amps(pid)
        if speaker.slur > 0 and float(rng.uniform()) < speaker.slur:
            # articulate halfway toward a neighboring phoneme
            if pid == 0:
                other = 1
            elif pid == len(PHONEME_FREQS) - 1:
                other = pid - 1
            else:
                other = pid + (1 if float(rng.uniform()) < 0.5 else -1)
            base_freq = float(np.sqrt(base_freq * PHONEME_FREQS[other]))
            amps = tuple(
                0.5 * (a + b) for a, b in zip(amps, phoneme_amps(other))
            )
        freq = base_freq * speaker.freq_warp
        if speaker.freq_jitter > 0:
            freq *= 1.0 + speaker.freq_jitter * float(rng.uniform(-1.0, 1.0))
        seg = np.zeros(n)
        for h, amp in enumerate(amps, start=1):
            if freq * h < 0.45 * sample_rate:  # stay clear of Nyquist
                seg += amp * np.sin(2 * np.pi * freq * h * t)
        seg *= AMPLITUDE / sum(amps)
        if speaker.wobble > 0:
            seg *= 1.0 + speaker.wobble * np.sin(2 * np.pi * 4.5 * t)
        fade = int(0.008 * sample_rate)
        ramp = np.linspace(0.0, 1.0, fade)
        seg[:fade] *= ramp
        seg[-fade:] *= ramp[::-1]
        pieces.append(seg)
        if speaker.pause_s > 0:
            pieces.append(np.zeros(int(speaker.pause_s * sample_rate)))
    pieces.append(np.zeros(int(EDGE_PAD_S * sample_rate)))
    return Waveform(np.concatenate(pieces), sample_rate)


def make_toy_corpus(
    root: str | Path,
    num_words: int = 24,
    speakers: tuple[SpeakerProfile, ...] = DEFAULT_SPEAKERS,
    repetitions: int = 2,
) -> Path:
    """Render WAVs and write a 6-column TSV manifest; returns its path."""
    root = Path(root)
    wav_dir = root / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for spk in speakers:
        for wi in range(num_words):
            for rep in range(repetitions):
                utt_id = f"{spk.name}_{word_label(wi)}_r{rep}"
                wav_path = wav_dir / f"{utt_id}.wav"
                save_wav(render_utterance(wi, spk, rep), wav_path)
                lines.append(
                    "\t".join(
                        [
                            utt_id,
                            str(wav_path.relative_to(root)),
                            spk.name,
                            word_label(wi),
                            block_for_word(wi),
                            spk.health,
                        ]
                    )
                )
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
