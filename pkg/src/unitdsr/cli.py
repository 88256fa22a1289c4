"""Command line interface.

Every subcommand accepts `--config FILE` (repeatable; later files win) and
`--set dotted.key=value` overrides on top of the built-in defaults.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PipelineConfig, derive_seed, load_config
from .dsp import add_noise_at_snr, load_wav, save_wav, speed_perturb, trim_silence
from .errors import UnitDsrError
from .evaluation import (
    SNR_AXIS_DEFAULT,
    SPEED_AXIS_DEFAULT,
    SweepItem,
    emit_grid_report,
    robustness_sweep,
)
from .manifest import parse_manifest, resolve_audio_path
from .normalizer import normalize
from .pipeline import (
    load_normalizer_checkpoint,
    load_vocoder_checkpoint,
    run_pipeline,
)
from .text2unit import train_text_to_unit
from .units import (
    dedup,
    fit_kmeans,
    load_codebook,
    quantize,
    save_codebook,
    unit_error_rate,
    write_unit_file,
)
from .vocoder import generate_waveform
from . import checkpoint as ckpt
from .dsp import extract_features


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", default=[], metavar="FILE")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides")


def _build_config(args) -> PipelineConfig:
    overrides = {}
    for item in args.overrides:
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides)


def _utterance_features(cfg: PipelineConfig, rec, manifest_path):
    w = trim_silence(load_wav(resolve_audio_path(rec, manifest_path)))
    return extract_features(w, cfg.feature_config(), utterance_id=rec.utterance_id)


def _cmd_train_kmeans(args) -> int:
    cfg = _build_config(args)
    manifest = Path(args.manifest)
    records = parse_manifest(manifest)
    speaker = args.speaker or cfg.stage_config(1).reference_speaker
    feats = [
        _utterance_features(cfg, r, manifest)
        for r in sorted(records, key=lambda r: r.utterance_id)
        if r.speaker_id == speaker
    ]
    cb = fit_kmeans(
        feats, k=cfg["codebook.k"], seed=derive_seed(cfg.seed, "kmeans"),
        max_iter=cfg["codebook.max_iter"],
    )
    save_codebook(cb, args.output)
    print(f"wrote codebook K={cb.num_units} D={cb.feature_dim} to {args.output}")
    return 0


def _cmd_extract_units(args) -> int:
    cfg = _build_config(args)
    cb = load_codebook(args.codebook)
    manifest = Path(args.manifest)
    raw = {}
    norm = {}
    for rec in sorted(parse_manifest(manifest), key=lambda r: r.utterance_id):
        seq = quantize(_utterance_features(cfg, rec, manifest), cb)
        raw[rec.utterance_id] = seq.units
        norm[rec.utterance_id] = dedup(seq).units
    out = Path(args.output)
    write_unit_file(out.with_suffix(".units"), raw)
    write_unit_file(out.with_suffix(".norm"), norm)
    print(f"wrote {len(raw)} utterances to {out.with_suffix('.units')} / .norm")
    return 0


def _cmd_train_text2unit(args) -> int:
    cfg = _build_config(args)
    cb = load_codebook(args.codebook)
    manifest = Path(args.manifest)
    speaker = args.speaker or cfg.stage_config(1).reference_speaker
    corpus = []
    seen = set()
    for rec in sorted(parse_manifest(manifest), key=lambda r: r.utterance_id):
        if rec.speaker_id != speaker or rec.transcript in seen:
            continue
        seen.add(rec.transcript)
        corpus.append(
            (rec.transcript, dedup(quantize(_utterance_features(cfg, rec, manifest), cb)))
        )
    model, _log = train_text_to_unit(
        corpus, cb.num_units, seed=derive_seed(cfg.seed, "text2unit"),
        max_updates=cfg["text2unit.max_updates"],
        learning_rate=cfg["text2unit.learning_rate"],
    )
    ckpt.save_checkpoint(
        {"model": ckpt.model_state(model), "chars": model.vocab.chars,
         "num_units": cb.num_units, "codebook_fingerprint": cb.fingerprint()},
        args.output,
    )
    print(f"trained text-to-unit on {len(corpus)} texts; saved to {args.output}")
    return 0


def _cmd_pipeline(args, stages=None) -> int:
    cfg = _build_config(args)
    if stages is None:
        stages = tuple(int(s) for s in args.stages.split(","))
    result = run_pipeline(cfg, args.manifest, args.output_dir, stages=stages)
    print(f"stages {result.stages}: checkpoints {sorted(result.checkpoint_paths)}")
    if result.uer_train is not None:
        print(f"train UER {result.uer_train:.4f}")
    if result.uer_test is not None:
        print(f"test UER {result.uer_test:.4f}")
    print(f"summary: {result.summary_path}")
    return 0


def _cmd_train_vocoder(args) -> int:
    args.overrides = list(args.overrides) + ["vocoder.enabled=true"]
    return _cmd_pipeline(args, stages=(1,))


def _cmd_reconstruct(args) -> int:
    cfg = _build_config(args)
    cb = load_codebook(args.codebook)
    model = load_normalizer_checkpoint(args.normalizer, cb)
    vocoder = load_vocoder_checkpoint(args.vocoder, cb)
    w = load_wav(args.input)
    if args.speed_ratio != 1.0:
        w = speed_perturb(w, args.speed_ratio)
    if args.snr_db is not None:
        w = add_noise_at_snr(w, args.snr_db, args.noise_seed)
    units = normalize(model, w, cfg.feature_config())
    out = generate_waveform(vocoder, units, args.speaker)
    save_wav(out, args.output)
    print(f"reconstructed {len(units)} units -> {len(out)} samples at {args.output}")
    return 0


def _load_eval_items(cfg: PipelineConfig, args):
    """Held-out items for the eval speaker: (utterance, waveform, ref units)."""
    cb = load_codebook(args.codebook)
    model = load_normalizer_checkpoint(args.normalizer, cb)
    manifest = Path(args.manifest)
    records = sorted(parse_manifest(manifest), key=lambda r: r.utterance_id)
    reference_speaker = cfg.stage_config(1).reference_speaker
    refs = {}
    for rec in records:
        if rec.speaker_id == reference_speaker and rec.transcript not in refs:
            refs[rec.transcript] = dedup(
                quantize(_utterance_features(cfg, rec, manifest), cb)
            )
    eval_speakers = (
        {args.speaker} if args.speaker else cfg.stage_config(3).random_speaker_filter
    )
    test_block = cfg["data.test_block"]
    items = [
        SweepItem(
            rec.utterance_id,
            load_wav(resolve_audio_path(rec, manifest)),
            refs[rec.transcript],
        )
        for rec in records
        if rec.speaker_id in eval_speakers
        and rec.block_tag == test_block
        and rec.transcript in refs
    ]
    return model, items


def _cmd_evaluate(args) -> int:
    cfg = _build_config(args)
    model, items = _load_eval_items(cfg, args)
    lines = ["utterance_id,uer"]
    scores = []
    for item in items:
        hyp = normalize(model, item.waveform, cfg.feature_config())
        uer = unit_error_rate(hyp, item.reference)
        scores.append(uer)
        lines.append(f"{item.utterance_id},{uer:.6f}")
    Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    mean = sum(scores) / len(scores) if scores else float("nan")
    print(f"evaluated {len(scores)} utterances, mean UER {mean:.4f} -> {args.output}")
    return 0


def _cmd_robustness(args) -> int:
    cfg = _build_config(args)
    model, items = _load_eval_items(cfg, args)
    if args.axis == "speed":
        axis, values = "speed_ratio", (
            tuple(float(v) for v in args.values.split(",")) if args.values
            else SPEED_AXIS_DEFAULT
        )
    else:
        axis, values = "snr_db", (
            tuple(float(v) for v in args.values.split(",")) if args.values
            else SNR_AXIS_DEFAULT
        )
    grid = robustness_sweep(
        lambda w: normalize(model, w, cfg.feature_config()),
        items, axis, values, metric="uer", seed=args.noise_seed,
    )
    emit_grid_report(grid, args.output)
    print(f"robustness grid ({axis}, {len(items)} utterances) -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unitdsr",
        description="Dysarthric speech reconstruction with discrete speech units",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-kmeans", help="fit the unit codebook")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--speaker", default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_train_kmeans)

    p = sub.add_parser("extract-units", help="quantize a corpus to unit files")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--output", required=True, help="basename for .units/.norm")
    p.set_defaults(func=_cmd_extract_units)

    p = sub.add_parser("train-text2unit", help="train the character-to-unit model")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--speaker", default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_train_text2unit)

    p = sub.add_parser("train-normalizer", help="run the fine-tuning chain")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--stages", default="1,2,3")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("train-vocoder", help="train the unit vocoder")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=_cmd_train_vocoder)

    p = sub.add_parser("reconstruct", help="speech in, reconstructed speech out")
    _add_common(p)
    p.add_argument("--normalizer", required=True)
    p.add_argument("--vocoder", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--speaker", required=True, help="target voice")
    p.add_argument("--speed-ratio", type=float, default=1.0)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("evaluate", help="held-out UER for the eval speaker")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--normalizer", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--speaker", default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("robustness", help="UER sweep over speed or SNR")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--normalizer", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--speaker", default=None)
    p.add_argument("--axis", choices=("speed", "snr"), required=True)
    p.add_argument("--values", default=None, help="comma-separated axis values")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("pipeline", help="full run: codebook to evaluation")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--stages", default="1,2,3")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnitDsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
