"""End-to-end acceptance suite.

Eight criteria, one pass/fail line each (visible with ``pytest -s`` and in
captured output on failure). The slow criteria share the session-scoped
toy corpus and pipeline runs from conftest; gate thresholds were fixed
from that configuration's reference run before being frozen here.
"""

import itertools
import time

import numpy as np
import pytest
import torch

import test_ctc as ctc_oracles
from conftest import TOY_OVERRIDES

from unitdsr.config import load_config
from unitdsr.ctc import ctc_forward_batched, ctc_loss, min_frames_required
from unitdsr.dsp import (
    Waveform,
    add_noise_at_snr,
    extract_features,
    load_wav,
    speed_perturb,
    trim_silence,
)
from unitdsr.evaluation import (
    CLEAN,
    SNR_AXIS_DEFAULT,
    SPEED_AXIS_DEFAULT,
    ReductionRow,
    SweepItem,
    aggregate_deltas,
    check_reported_reductions,
    relative_reduction,
    robustness_sweep,
)
from unitdsr.manifest import parse_manifest, resolve_audio_path
from unitdsr.normalizer import normalize
from unitdsr.pipeline import run_pipeline
from unitdsr.units import (
    DurationSequence,
    NormUnitSequence,
    UnitCodebook,
    UnitSequence,
    dedup,
    expand_units,
    fit_kmeans,
    quantize,
    run_length_encode,
)
from unitdsr.vocoder import (
    HOP_SAMPLES,
    VocoderConfig,
    VocoderTrainConfig,
    VocoderTrainItem,
    create_vocoder,
    duration_loss,
    generate_waveform,
    round_durations,
    train_vocoder,
)


def _gate(number: int, name: str, checks: list[tuple[bool, str]]) -> None:
    failures = [msg for ok, msg in checks if not ok]
    status = "FAIL" if failures else "PASS"
    print(f"[acceptance {number}] {name}: {status}")
    assert not failures, f"criterion {number} ({name}): " + "; ".join(failures)


# --------------------------------------------------------------------------
# 1. Reported-results arithmetic
# --------------------------------------------------------------------------

def test_criterion_1_reported_arithmetic():
    t0 = time.perf_counter()
    rows = [
        ReductionRow("M05", 81.7, 64.4, 29.2),
        ReductionRow("F04", 81.7, 65.5, 19.8),
        ReductionRow("M07", 95.6, 62.1, 35.0),
        ReductionRow("F02", 95.9, 68.3, 28.8),
    ]
    mean = aggregate_deltas([r.reported_delta for r in rows])
    checks = [
        (f"{mean:.1f}" == "28.2", f"mean delta {mean!r} != 28.2 at one decimal"),
    ]
    for row in rows[1:]:  # the three self-consistent speakers
        delta = relative_reduction(row.wer_system, row.wer_original)
        checks.append(
            (f"{delta:.1f}" == f"{row.reported_delta:.1f}",
             f"{row.speaker}: computed {delta:.1f} != reported {row.reported_delta}"),
        )
    flagged = [c for c in check_reported_reductions(rows) if not c.consistent]
    checks.append(
        (len(flagged) == 1 and flagged[0].speaker == "M05",
         f"expected exactly M05 flagged, got {[c.speaker for c in flagged]}"),
    )
    if flagged:
        checks.append(
            (f"{flagged[0].computed_delta:.1f}" == "21.2",
             f"M05 computed delta {flagged[0].computed_delta:.1f} != 21.2"),
        )
    checks.append((time.perf_counter() - t0 < 1.0, "runtime exceeded 1 s"))
    _gate(1, "reported-results arithmetic", checks)


# --------------------------------------------------------------------------
# 2. CTC against exhaustive path enumeration
# --------------------------------------------------------------------------

def test_criterion_2_ctc_oracle():
    t0 = time.perf_counter()
    checks: list[tuple[bool, str]] = []
    rng = np.random.default_rng(20240501)

    n_checked = 0
    worst = 0.0
    while n_checked < 200:
        t_frames = int(rng.integers(1, 7))
        k = int(rng.integers(1, 5))
        length = int(rng.integers(0, min(3, t_frames) + 1))
        target = [int(rng.integers(0, k)) for _ in range(length)]
        while min_frames_required(target) > t_frames:
            target.pop()
        logits = rng.normal(0, 2, (t_frames, k + 1))
        got = ctc_loss(logits, target)
        want = ctc_oracles.brute_force_ctc_nll(logits, target)
        rel = abs(got - want) / max(abs(want), 1e-12)
        worst = max(worst, rel)
        n_checked += 1
    checks.append((worst < 1e-4, f"worst relative loss error {worst:.2e} >= 1e-4"))

    worst_grad = 0.0
    for _ in range(20):
        t_frames = int(rng.integers(2, 6))
        k = int(rng.integers(2, 5))
        length = int(rng.integers(1, min(3, t_frames) + 1))
        target = [int(rng.integers(0, k)) for _ in range(length)]
        while min_frames_required(target) > t_frames:
            target.pop()
        logits = rng.normal(0, 1, (t_frames, k + 1))
        x = torch.tensor(logits, dtype=torch.float64, requires_grad=True)
        lp = torch.log_softmax(x, dim=-1).unsqueeze(0)
        tgt = torch.tensor([target], dtype=torch.long) if target else torch.zeros(
            (1, 0), dtype=torch.long
        )
        loss = ctc_forward_batched(
            lp, tgt, torch.tensor([t_frames]), torch.tensor([len(target)]), k
        )[0]
        loss.backward()
        analytic = x.grad.numpy()
        eps = 1e-4
        for idx in [(0, 0), (t_frames - 1, k), (t_frames // 2, k // 2)]:
            plus, minus = logits.copy(), logits.copy()
            plus[idx] += eps
            minus[idx] -= eps
            fd = (ctc_loss(plus, target) - ctc_loss(minus, target)) / (2 * eps)
            scale = max(abs(fd), abs(analytic[idx]), 1e-6)
            worst_grad = max(worst_grad, abs(fd - analytic[idx]) / scale)
    checks.append((worst_grad < 1e-3, f"worst gradient error {worst_grad:.2e} >= 1e-3"))
    checks.append((time.perf_counter() - t0 < 120.0, "runtime exceeded 2 min"))
    _gate(2, "CTC oracle equivalence", checks)


# --------------------------------------------------------------------------
# 3. Codec property suite
# --------------------------------------------------------------------------

def test_criterion_3_codec_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checks: list[tuple[bool, str]] = []

    dedup_ok = rle_ok = 0
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        n = int(rng.integers(1, 40))
        s = UnitSequence(tuple(int(u) for u in rng.integers(0, k, size=n)), k)
        d = dedup(s)
        if dedup(d).units == d.units:
            dedup_ok += 1
        units, durs = run_length_encode(s)
        if expand_units(units, durs).units == s.units:
            rle_ok += 1
    checks.append((dedup_ok == 1000, f"dedup idempotence {dedup_ok}/1000"))
    checks.append((rle_ok == 1000, f"run-length round-trip {rle_ok}/1000"))

    quant_ok = 0
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        d = int(rng.integers(1, 6))
        n = int(rng.integers(1, 12))
        cents = rng.normal(0, 1, (k, d))
        frames = rng.normal(0, 1, (n, d))
        if rng.random() < 0.2:  # force exact ties sometimes
            frames[0] = cents[0]
            cents[-1] = cents[0]
        cb = UnitCodebook(centroids=cents, seed=0)
        got = quantize(frames, cb).units
        brute = tuple(
            min(range(k), key=lambda j: float(np.sum((frames[i] - cents[j]) ** 2)))
            for i in range(n)
        )
        if got == brute:
            quant_ok += 1
    checks.append((quant_ok == 1000, f"quantize-vs-brute-force {quant_ok}/1000"))

    mono_ok = 0
    for _ in range(1000):
        k = int(rng.integers(2, 5))
        pts = rng.normal(0, 1, (int(rng.integers(k + 2, 40)), int(rng.integers(1, 4))))
        cb = fit_kmeans([pts], k, seed=int(rng.integers(2**31)), max_iter=8)
        tr = cb.inertia_trace
        if all(b <= a + 1e-9 * max(a, 1.0) for a, b in zip(tr, tr[1:])):
            mono_ok += 1
    checks.append((mono_ok == 1000, f"k-means inertia monotonicity {mono_ok}/1000"))
    checks.append((time.perf_counter() - t0 < 60.0, "runtime exceeded 1 min"))
    _gate(3, "codec property suite", checks)


# --------------------------------------------------------------------------
# 4. DSP calibration
# --------------------------------------------------------------------------

def test_criterion_4_dsp_calibration():
    t0 = time.perf_counter()
    checks: list[tuple[bool, str]] = []
    rng = np.random.default_rng(4)

    n = 6 * 16000  # 6 s
    t = np.arange(n) / 16000.0
    base = 0.3 * np.sin(2 * np.pi * 180 * t) + 0.05 * rng.standard_normal(n)
    clean = Waveform(base, 16000)
    worst_db = 0.0
    for snr in range(0, 31):
        noisy = add_noise_at_snr(clean, float(snr), seed=snr + 17)
        noise = noisy.samples - clean.samples
        measured = 10.0 * np.log10(
            np.mean(clean.samples**2) / np.mean(noise**2)
        )
        worst_db = max(worst_db, abs(measured - snr))
    checks.append((worst_db <= 0.1, f"worst SNR deviation {worst_db:.3f} dB > 0.1"))

    worst_len = 0
    for _ in range(500):
        m = int(rng.integers(1000, 50000))
        ratio = float(rng.uniform(0.4, 1.6))
        out = speed_perturb(Waveform(rng.standard_normal(m), 16000), ratio)
        worst_len = max(worst_len, abs(len(out) - round(m / ratio)))
    checks.append((worst_len <= 2, f"worst length deviation {worst_len} samples > 2"))
    checks.append((time.perf_counter() - t0 < 60.0, "runtime exceeded 1 min"))
    _gate(4, "DSP calibration", checks)


# --------------------------------------------------------------------------
# 5. Toy end-to-end normalization
# --------------------------------------------------------------------------

def test_criterion_5_toy_end_to_end(toy_runs):
    results, wall_s = toy_runs
    full = results[(1, 2, 3)]
    checks = [
        (full.uer_train < 0.05,
         f"training-set UER {full.uer_train:.4f} >= 5%"),
        (full.uer_test < 0.15,
         f"heldout same-content UER {full.uer_test:.4f} >= 15%"),
        (results[(1, 2, 3)].uer_test <= results[(1, 3)].uer_test,
         f"UER(1+2+3)={results[(1, 2, 3)].uer_test:.4f} > "
         f"UER(1+3)={results[(1, 3)].uer_test:.4f}"),
        (results[(1, 3)].uer_test <= results[(1,)].uer_test,
         f"UER(1+3)={results[(1, 3)].uer_test:.4f} > "
         f"UER(1)={results[(1,)].uer_test:.4f}"),
        (wall_s < 900.0, f"runtime {wall_s:.0f} s exceeded 15 min"),
    ]
    _gate(5, "toy end-to-end normalization", checks)


# --------------------------------------------------------------------------
# 6. Robustness shape
# --------------------------------------------------------------------------

def _heldout_items(manifest_path, result):
    records = parse_manifest(manifest_path)
    items = []
    for rec in sorted(records, key=lambda r: r.utterance_id):
        if rec.speaker_id == "DYS1" and rec.block_tag == "B2":
            w = load_wav(resolve_audio_path(rec, manifest_path))
            items.append(
                SweepItem(rec.utterance_id, w, result.reference_units[rec.transcript])
            )
    return items


def test_criterion_6_robustness_shape(toy_runs, toy_manifest, toy_config):
    results, _ = toy_runs
    full = results[(1, 2, 3)]
    items = _heldout_items(toy_manifest, full)
    fc = toy_config.feature_config()

    def system(w):
        return normalize(full.model, w, fc)

    speed = robustness_sweep(system, items, "speed_ratio", SPEED_AXIS_DEFAULT,
                             "uer", seed=123)
    snr = robustness_sweep(system, items, "snr_db", SNR_AXIS_DEFAULT,
                           "uer", seed=123)

    checks: list[tuple[bool, str]] = []
    base = speed.cell(1.0).mean
    for ratio in (0.8, 1.2, 1.4, 1.6):
        cell = speed.cell(ratio).mean
        checks.append(
            (cell <= 2.0 * base,
             f"speed {ratio}: UER {cell:.4f} > 2x unperturbed {base:.4f}"),
        )
    checks.append(
        (speed.cell(0.4).mean > 2.0 * base,
         f"speed 0.4: UER {speed.cell(0.4).mean:.4f} does not exceed 2x baseline"),
    )
    clean = snr.cell(CLEAN).mean
    for db in (15.0, 20.0, 30.0):
        cell = snr.cell(db).mean
        checks.append(
            (cell <= 2.0 * clean,
             f"SNR {db:g} dB: UER {cell:.4f} > 2x clean {clean:.4f}"),
        )
    checks.append(
        (snr.cell(0.0).mean > 2.0 * clean,
         f"SNR 0 dB: UER {snr.cell(0.0).mean:.4f} does not exceed 2x clean"),
    )
    _gate(6, "robustness shape", checks)


# --------------------------------------------------------------------------
# 7. Vocoder contracts
# --------------------------------------------------------------------------

def _vocoder_train_items(manifest_path, codebook, feature_config):
    records = parse_manifest(manifest_path)
    items = []
    for rec in sorted(records, key=lambda r: r.utterance_id):
        if rec.speaker_id != "REF" or rec.block_tag == "B2":
            continue
        w = trim_silence(load_wav(resolve_audio_path(rec, manifest_path)))
        feats = extract_features(w, feature_config, rec.utterance_id)
        units, durs = run_length_encode(quantize(feats, codebook))
        total = sum(durs.durations) * HOP_SAMPLES
        items.append(
            VocoderTrainItem(units, durs, "REF",
                             Waveform(w.samples[:total], w.sample_rate_hz))
        )
    return items


def test_criterion_7_vocoder_contracts(toy_runs, toy_manifest, toy_config):
    t0 = time.perf_counter()
    checks: list[tuple[bool, str]] = []

    small = VocoderConfig(num_units=16, unit_embed=16, speaker_embed=8,
                          base_channels=16)
    v = create_vocoder(small, ("REF", "DYS1"), seed=0)
    rng = np.random.default_rng(7)
    length_ok = 0
    for _ in range(100):
        n = int(rng.integers(1, 8))
        units = []
        for _ in range(n):
            u = int(rng.integers(16))
            if units and units[-1] == u:
                u = (u + 1) % 16
            units.append(u)
        raw = [float(d) for d in rng.uniform(0.2, 4.0, size=n)]
        durations = round_durations(raw)
        w = generate_waveform(v, NormUnitSequence(tuple(units), 16), "REF", durations)
        if len(w) == sum(durations) * HOP_SAMPLES:
            length_ok += 1
    checks.append((length_ok == 100, f"exact length on {length_ok}/100 inputs"))

    target = DurationSequence((2, 4, 8))
    zero = duration_loss([2.0, 4.0, 8.0], target)
    one = duration_loss([d * np.e for d in target.durations], target)
    checks.append((zero == pytest.approx(0.0, abs=1e-12),
                   f"duration_loss exact-match case {zero!r} != 0"))
    checks.append((one == pytest.approx(1.0, rel=1e-12),
                   f"duration_loss e-scaled case {one!r} != 1.0"))

    results, _ = toy_runs
    items = _vocoder_train_items(toy_manifest, results[(1, 2, 3)].codebook,
                                 toy_config.feature_config())
    toy_voc_cfg = VocoderConfig(num_units=16, unit_embed=16, speaker_embed=8,
                                base_channels=32)
    voc = create_vocoder(toy_voc_cfg, ("REF",), seed=11)
    train_cfg = VocoderTrainConfig(seed=5, max_updates=2000, learning_rate=4e-4,
                                   segment_frames=24)
    voc, log = train_vocoder(voc, items, train_cfg)
    mels = [e.mel for e in log]
    early = float(np.mean(mels[:20]))
    late = float(np.mean(mels[-200:]))
    checks.append(
        (late <= 0.5 * early,
         f"mel term {late:.3f} not halved from early mean {early:.3f} "
         f"within 2000 updates"),
    )
    checks.append((time.perf_counter() - t0 < 600.0, "runtime exceeded 10 min"))
    _gate(7, "vocoder contracts", checks)


# --------------------------------------------------------------------------
# 8. Reproducibility
# --------------------------------------------------------------------------

REPRO_OVERRIDES = dict(
    TOY_OVERRIDES,
    **{
        "normalizer.stage1.max_updates": "300",
        "normalizer.stage2.max_updates": "150",
        "normalizer.stage3.max_updates": "150",
        "vocoder.enabled": "true",
        "vocoder.max_updates": "40",
        "vocoder.base_channels": "16",
        "vocoder.unit_embed": "16",
        "vocoder.speaker_embed": "8",
    },
)


def test_criterion_8_reproducibility(toy_manifest, tmp_path):
    cfg = load_config(overrides=REPRO_OVERRIDES)
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        runs.append(run_pipeline(cfg, toy_manifest, out, stages=(1, 2, 3)))
    csv_a = runs[0].eval_report_path.read_bytes()
    csv_b = runs[1].eval_report_path.read_bytes()
    checks = [
        (csv_a == csv_b, "evaluation CSVs differ between identically seeded runs"),
        (runs[0].checkpoint_checksums == runs[1].checkpoint_checksums,
         f"checkpoint checksums differ: {runs[0].checkpoint_checksums} vs "
         f"{runs[1].checkpoint_checksums}"),
        (len(runs[0].checkpoint_checksums) >= 2,
         "expected at least normalizer and vocoder checkpoints"),
    ]
    _gate(8, "reproducibility", checks)
