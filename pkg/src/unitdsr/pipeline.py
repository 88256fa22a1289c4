"""End-to-end orchestration: codebook fitting, unit extraction, staged
normalizer fine-tuning with checkpoint chaining, optional vocoder training,
and held-out evaluation. Everything is keyed off one global seed and a
config hash; re-running with the same inputs reproduces every artifact."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import checkpoint as ckpt
from .config import PipelineConfig, derive_seed
from .dsp import (
    FrameFeatures,
    Waveform,
    add_noise_at_snr,
    extract_features,
    load_wav,
    speed_perturb,
    trim_silence,
)
from .errors import (
    DomainError,
    EmptyDatasetError,
    MissingPrerequisiteError,
    UnitDsrError,
)
from .manifest import ManifestRecord, parse_manifest, resolve_audio_path
from .normalizer import (
    NormalizerModel,
    TrainingPair,
    create_normalizer,
    normalize,
    run_finetune_stage,
    write_training_log,
)
from .units import (
    NormUnitSequence,
    UnitCodebook,
    dedup,
    fit_kmeans,
    quantize,
    run_length_encode,
    save_codebook,
    unit_error_rate,
    write_unit_file,
)
from .vocoder import (
    HOP_SAMPLES,
    UnitVocoder,
    VocoderConfig,
    VocoderTrainConfig,
    VocoderTrainItem,
    create_vocoder,
    train_vocoder,
    write_vocoder_log,
)


@dataclass
class PipelineResult:
    output_dir: Path
    stages: tuple[int, ...]
    codebook: UnitCodebook
    model: NormalizerModel
    reference_units: dict[str, NormUnitSequence]  # content key -> norm units
    checkpoint_paths: dict[str, Path]
    checkpoint_checksums: dict[str, str]
    uer_train: float | None
    uer_test: float | None
    eval_report_path: Path | None
    summary_path: Path
    vocoder: UnitVocoder | None = None
    audit: list[str] = field(default_factory=list)


def _chain_tag(stages: Sequence[int]) -> str:
    return "s" + "".join(str(s) for s in stages)


def _aug_seed(seed: int, stage: int, utterance_id: str, kind: str, value) -> int:
    blob = f"{seed}:aug:{stage}:{utterance_id}:{kind}:{value}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def _features(
    cfg: PipelineConfig, rec: ManifestRecord, w: Waveform
) -> FrameFeatures:
    return extract_features(
        trim_silence(w), cfg.feature_config(), utterance_id=rec.utterance_id
    )


def _load_corpus(
    cfg: PipelineConfig, manifest_path: Path
) -> tuple[list[ManifestRecord], dict[str, Waveform]]:
    records = parse_manifest(manifest_path)
    waves = {
        r.utterance_id: load_wav(resolve_audio_path(r, manifest_path))
        for r in records
    }
    return records, waves


def _reference_units(
    cfg: PipelineConfig,
    records: Sequence[ManifestRecord],
    waves: dict[str, Waveform],
    codebook: UnitCodebook,
    reference_speaker: str,
) -> dict[str, NormUnitSequence]:
    """Norm-unit target per content key: the reference speaker's first
    utterance (by id) of that content, quantized and deduplicated."""
    chosen: dict[str, ManifestRecord] = {}
    for rec in sorted(records, key=lambda r: r.utterance_id):
        if rec.speaker_id == reference_speaker and rec.transcript not in chosen:
            chosen[rec.transcript] = rec
    if not chosen:
        raise EmptyDatasetError(
            f"no utterances from reference speaker {reference_speaker!r}"
        )
    return {
        key: dedup(quantize(_features(cfg, rec, waves[rec.utterance_id]), codebook))
        for key, rec in chosen.items()
    }


def _stage_pairs(
    cfg: PipelineConfig,
    stage_id: int,
    records: Sequence[ManifestRecord],
    waves: dict[str, Waveform],
    reference_units: dict[str, NormUnitSequence],
    audit: list[str],
) -> list[TrainingPair]:
    """Training pairs for one stage: train-block utterances of the stage's
    random speakers, plus seeded speed/noise augmented copies."""
    stage_cfg = cfg.stage_config(stage_id)
    train_blocks = set(cfg["data.train_blocks"])
    test_block = cfg["data.test_block"]
    speed_ratios, snr_dbs = cfg.stage_augmentation(stage_id)
    pairs: list[TrainingPair] = []
    for rec in sorted(records, key=lambda r: r.utterance_id):
        if rec.speaker_id not in stage_cfg.random_speaker_filter:
            continue
        if rec.block_tag == test_block:
            audit.append(
                f"stage {stage_id}: skipped {rec.utterance_id} (test block)"
            )
            continue
        if rec.block_tag not in train_blocks:
            continue
        if rec.transcript not in reference_units:
            audit.append(
                f"stage {stage_id}: skipped {rec.utterance_id} (no reference target)"
            )
            continue
        target = reference_units[rec.transcript]
        w = waves[rec.utterance_id]
        variants: list[tuple[str, Waveform]] = [(rec.utterance_id, w)]
        for ratio in speed_ratios:
            if ratio != 1.0:
                variants.append(
                    (f"{rec.utterance_id}#sp{ratio}", speed_perturb(w, ratio))
                )
        for i, snr in enumerate(snr_dbs):
            # the variant index joins the seed so repeated SNR values yield
            # fresh noise realizations instead of identical copies
            noise_seed = _aug_seed(
                cfg.seed, stage_id, rec.utterance_id, "snr", f"{i}:{snr}"
            )
            variants.append(
                (f"{rec.utterance_id}#snr{i}_{snr}", add_noise_at_snr(w, snr, noise_seed))
            )
        for vid, vw in variants:
            pairs.append(
                TrainingPair(
                    input_features=_features(cfg, rec, vw),
                    target=target,
                    content_key=rec.transcript,
                    input_speaker=rec.speaker_id,
                    reference_speaker=stage_cfg.reference_speaker,
                    utterance_id=vid,
                )
            )
    return pairs


def _save_stage_checkpoint(
    path: Path,
    model: NormalizerModel,
    codebook: UnitCodebook,
    cfg: PipelineConfig,
    chain: Sequence[int],
) -> str:
    state = {
        "model": ckpt.model_state(model),
        "normalizer_config": dataclasses.asdict(cfg.normalizer_config()),
        "stage_chain": tuple(chain),
        "codebook_fingerprint": codebook.fingerprint(),
        "config_hash": cfg.config_hash(),
    }
    ckpt.save_checkpoint(state, path)
    return ckpt.state_checksum(state["model"])


def load_normalizer_checkpoint(
    path: str | Path, codebook: UnitCodebook | None = None
) -> NormalizerModel:
    """Rebuild a normalizer from a self-describing stage checkpoint."""
    from .normalizer import NormalizerConfig

    state = ckpt.load_checkpoint(
        path, codebook.fingerprint() if codebook is not None else None
    )
    model = NormalizerModel(NormalizerConfig(**state["normalizer_config"]))
    ckpt.load_model_state(model, state["model"])
    model.eval()
    return model


def load_vocoder_checkpoint(
    path: str | Path, codebook: UnitCodebook | None = None
) -> UnitVocoder:
    state = ckpt.load_checkpoint(
        path, codebook.fingerprint() if codebook is not None else None
    )
    vcfg_fields = dict(state["vocoder_config"])
    vcfg_fields["upsample_factors"] = tuple(vcfg_fields["upsample_factors"])
    vocoder = UnitVocoder(VocoderConfig(**vcfg_fields), state["speakers"])
    ckpt.load_model_state(vocoder, state["model"])
    vocoder.eval()
    return vocoder


def run_pipeline(
    cfg: PipelineConfig,
    manifest_path: str | Path,
    output_dir: str | Path,
    stages: Sequence[int] = (1, 2, 3),
    reuse_checkpoints: bool = True,
) -> PipelineResult:
    """Run codebook -> units -> fine-tuning chain -> (vocoder) -> eval.

    `stages` must be an ascending subset of {1, 2, 3} containing stage 1.
    Completed stage chains found in `output_dir` are reused when their
    codebook fingerprint and config hash match, so ablation runs over
    different chains share their common prefix.
    """
    stages = tuple(stages)
    if not stages or stages[0] != 1 or list(stages) != sorted(set(stages)):
        raise DomainError(f"stages must be an ascending subset starting at 1: {stages}")
    if any(s not in (1, 2, 3) for s in stages):
        raise DomainError(f"unknown stage in {stages}")
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingPrerequisiteError(f"manifest {manifest_path} does not exist")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    audit: list[str] = []

    records, waves = _load_corpus(cfg, manifest_path)
    reference_speaker = cfg.stage_config(1).reference_speaker

    # 1. unit codebook from the reference speaker's training-block speech
    train_blocks = set(cfg["data.train_blocks"])
    ref_train = [
        r
        for r in sorted(records, key=lambda r: r.utterance_id)
        if r.speaker_id == reference_speaker and r.block_tag in train_blocks
    ]
    if not ref_train:
        raise EmptyDatasetError("no reference-speaker utterances in the train blocks")
    codebook = fit_kmeans(
        [_features(cfg, r, waves[r.utterance_id]) for r in ref_train],
        k=cfg["codebook.k"],
        seed=derive_seed(cfg.seed, "kmeans"),
        max_iter=cfg["codebook.max_iter"],
    )
    save_codebook(codebook, output_dir / "codebook.txt")

    # 2. reference unit inventory (all blocks; test-block targets are the
    # evaluation references, never training material)
    reference_units = _reference_units(cfg, records, waves, codebook, reference_speaker)
    write_unit_file(
        output_dir / "reference.norm",
        {key: reference_units[key].units for key in sorted(reference_units)},
    )

    # 3. staged fine-tuning with prefix-chain checkpoint reuse
    model = create_normalizer(
        cfg.normalizer_config(), seed=derive_seed(cfg.seed, "normalizer")
    )
    checkpoint_paths: dict[str, Path] = {}
    checkpoint_checksums: dict[str, str] = {}
    chain: list[int] = []
    for stage_id in stages:
        chain.append(stage_id)
        tag = _chain_tag(chain)
        path = output_dir / f"normalizer_{tag}.ckpt"
        if reuse_checkpoints and path.exists():
            state = ckpt.load_checkpoint(path, codebook.fingerprint())
            if state.get("config_hash") != cfg.config_hash():
                raise MissingPrerequisiteError(
                    f"{path}: checkpoint was built under a different config"
                )
            ckpt.load_model_state(model, state["model"])
            checkpoint_checksums[tag] = ckpt.state_checksum(state["model"])
            audit.append(f"stage {stage_id}: reused checkpoint {path.name}")
        else:
            pairs = _stage_pairs(
                cfg, stage_id, records, waves, reference_units, audit
            )
            model, log = run_finetune_stage(model, cfg.stage_config(stage_id), pairs)
            write_training_log(log, output_dir / f"train_{tag}.csv")
            checkpoint_checksums[tag] = _save_stage_checkpoint(
                path, model, codebook, cfg, chain
            )
        checkpoint_paths[tag] = path

    # 4. optional vocoder on reference-speaker training speech
    vocoder = None
    if cfg["vocoder.enabled"]:
        items = []
        for rec in ref_train:
            feats = _features(cfg, rec, waves[rec.utterance_id])
            units, durations = run_length_encode(quantize(feats, codebook))
            w = trim_silence(waves[rec.utterance_id])
            total = sum(durations.durations) * HOP_SAMPLES
            items.append(
                VocoderTrainItem(
                    units, durations, rec.speaker_id,
                    Waveform(w.samples[:total], w.sample_rate_hz),
                )
            )
        vcfg = VocoderConfig(
            num_units=cfg["codebook.k"],
            unit_embed=cfg["vocoder.unit_embed"],
            speaker_embed=cfg["vocoder.speaker_embed"],
            base_channels=cfg["vocoder.base_channels"],
            n_mels=cfg["feature.n_mels"],
        )
        vocoder = create_vocoder(
            vcfg, sorted({r.speaker_id for r in records}),
            seed=derive_seed(cfg.seed, "vocoder"),
        )
        vocoder, vlog = train_vocoder(
            vocoder,
            items,
            VocoderTrainConfig(
                seed=derive_seed(cfg.seed, "vocoder", 1),
                max_updates=cfg["vocoder.max_updates"],
                learning_rate=cfg["vocoder.learning_rate"],
                segment_frames=cfg["vocoder.segment_frames"],
            ),
        )
        write_vocoder_log(vlog, output_dir / "train_vocoder.csv")
        ckpt.save_checkpoint(
            {
                "model": ckpt.model_state(vocoder),
                "vocoder_config": dataclasses.asdict(vcfg),
                "speakers": sorted({r.speaker_id for r in records}),
                "codebook_fingerprint": codebook.fingerprint(),
                "config_hash": cfg.config_hash(),
            },
            output_dir / "vocoder.ckpt",
        )
        checkpoint_paths["vocoder"] = output_dir / "vocoder.ckpt"
        checkpoint_checksums["vocoder"] = ckpt.state_checksum(
            ckpt.model_state(vocoder)
        )

    # 5. evaluation: the dysarthric target speaker, train blocks and the
    # held-out test block, scored against the reference norm units
    eval_speakers = sorted(cfg.stage_config(3).random_speaker_filter)
    tag = _chain_tag(stages)
    test_block = cfg["data.test_block"]
    rows: list[tuple[str, str, str, str, float]] = []
    for rec in sorted(records, key=lambda r: r.utterance_id):
        if rec.speaker_id not in eval_speakers or rec.transcript not in reference_units:
            continue
        split = "test" if rec.block_tag == test_block else "train"
        try:
            hyp = normalize(model, waves[rec.utterance_id], cfg.feature_config())
            uer = unit_error_rate(hyp, reference_units[rec.transcript])
        except UnitDsrError:
            uer = 1.0
        rows.append((tag, rec.speaker_id, split, rec.utterance_id, uer))

    eval_path = None
    uer_train = uer_test = None
    if rows:
        eval_path = output_dir / f"eval_{tag}.csv"
        lines = ["system,speaker,split,utterance_id,uer"]
        lines += [f"{s},{spk},{sp},{u},{e:.6f}" for s, spk, sp, u, e in rows]
        eval_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        train_vals = [r[4] for r in rows if r[2] == "train"]
        test_vals = [r[4] for r in rows if r[2] == "test"]
        uer_train = sum(train_vals) / len(train_vals) if train_vals else None
        uer_test = sum(test_vals) / len(test_vals) if test_vals else None

    summary = {
        "stages": list(stages),
        "config_hash": cfg.config_hash(),
        "codebook_fingerprint": list(codebook.fingerprint()),
        "checkpoints": {t: checkpoint_checksums[t] for t in sorted(checkpoint_checksums)},
        "uer_train": uer_train,
        "uer_test": uer_test,
        "audit": audit,
    }
    summary_path = output_dir / f"summary_{tag}.json"
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    return PipelineResult(
        output_dir=output_dir,
        stages=stages,
        codebook=codebook,
        model=model,
        reference_units=reference_units,
        checkpoint_paths=checkpoint_paths,
        checkpoint_checksums=checkpoint_checksums,
        uer_train=uer_train,
        uer_test=uer_test,
        eval_report_path=eval_path,
        summary_path=summary_path,
        vocoder=vocoder,
        audit=audit,
    )
