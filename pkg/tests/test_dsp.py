import numpy as np
import pytest

from unitdsr.dsp import (
    FeatureConfig,
    FeatureMode,
    Waveform,
    add_noise_at_snr,
    extract_features,
    load_wav,
    mel_filterbank,
    read_feat_file,
    save_wav,
    speed_perturb,
    trim_silence,
    write_feat_file,
)
from unitdsr.errors import (
    AllSilentError,
    DomainError,
    FeatureFileError,
    StereoInputError,
    TooShortError,
    ZeroSignalError,
)

SR = 16000
HOP = 160  # 10 ms trim hop


def sine(freq, seconds, amp=0.9, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


# ---------------------------------------------------------------------------
# trim_silence
# ---------------------------------------------------------------------------

class TestTrimSilence:
    def test_zero_padding_removed_within_one_hop(self):
        pad_l, pad_r = int(0.5 * SR), int(0.3 * SR)
        content = sine(440, 1.0)
        w = Waveform(np.concatenate([np.zeros(pad_l), content, np.zeros(pad_r)]))
        trimmed = trim_silence(w)
        assert abs(len(trimmed) - len(content)) <= 2 * HOP
        # boundaries each within one hop of the sine span
        # locate via first/last nonzero of the trimmed signal
        nz = np.flatnonzero(trimmed.samples != 0.0)
        assert nz[0] <= HOP
        assert len(trimmed) - 1 - nz[-1] <= HOP

    def test_no_padding_is_identity(self):
        w = Waveform(sine(300, 0.5))
        trimmed = trim_silence(w)
        np.testing.assert_array_equal(trimmed.samples, w.samples)

    def test_all_silent_raises(self):
        with pytest.raises(AllSilentError):
            trim_silence(Waveform(np.zeros(SR)))

    def test_low_level_noise_boundaries_match_window_scan_oracle(self):
        rng = np.random.default_rng(0)
        content = 0.5 * rng.standard_normal(int(0.8 * SR))
        noise_amp = 0.5 * 10 ** (-60 / 20)
        pad_l = noise_amp * rng.standard_normal(int(0.4 * SR))
        pad_r = noise_amp * rng.standard_normal(int(0.25 * SR))
        w = Waveform(np.concatenate([pad_l, content, pad_r]))
        trimmed = trim_silence(w)

        # oracle: exhaustive per-window RMS scan with the same parameters,
        # start-aligned for the leading edge and end-aligned for the trailing
        win, hop = 400, 160
        n = len(w)
        n_win = (n - win) // hop + 1
        lead = np.array(
            [np.sqrt(np.mean(w.samples[i * hop : i * hop + win] ** 2)) for i in range(n_win)]
        )
        trail = np.array(
            [
                np.sqrt(np.mean(w.samples[n - i * hop - win : n - i * hop] ** 2))
                for i in range(n_win)
            ]
        )
        thr = max(lead.max(), trail.max()) * 10 ** (-40 / 20)
        first = np.flatnonzero(lead >= thr)[0]
        last = np.flatnonzero(trail >= thr)[0]
        start = 0 if first == 0 else (first - 1) * hop + win
        end = n if last == 0 else n - ((last - 1) * hop + win)
        np.testing.assert_array_equal(trimmed.samples, w.samples[start:end])

    def test_idempotent_on_randomized_padded_signals(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            content = 0.2 * rng.standard_normal(rng.integers(2000, 12000))
            pad_l = np.zeros(rng.integers(0, 4000))
            pad_r = np.zeros(rng.integers(0, 4000))
            w = Waveform(np.concatenate([pad_l, content, pad_r]))
            once = trim_silence(w)
            twice = trim_silence(once)
            np.testing.assert_array_equal(once.samples, twice.samples)


# ---------------------------------------------------------------------------
# speed_perturb
# ---------------------------------------------------------------------------

class TestSpeedPerturb:
    def test_identity_ratio(self):
        w = Waveform(sine(440, 1.0))
        out = speed_perturb(w, 1.0)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_half_ratio_doubles_length(self):
        w = Waveform(sine(200, 1.0))
        out = speed_perturb(w, 0.5)
        assert abs(len(out) - 32000) <= 2
        assert out.sample_rate_hz == SR

    def test_ratio_out_of_range(self):
        w = Waveform(sine(200, 0.1))
        for ratio in (0.2, 4.5, -1.0):
            with pytest.raises(DomainError):
                speed_perturb(w, ratio)

    def test_dominant_frequency_scales_with_ratio(self):
        w = Waveform(sine(400, 2.0))
        out = speed_perturb(w, 1.25)
        # FFT peak-pick oracle
        spec = np.abs(np.fft.rfft(out.samples * np.hanning(len(out))))
        peak_hz = np.argmax(spec) * SR / len(out)
        assert abs(peak_hz - 400 * 1.25) < 5.0

    def test_length_law_over_500_random_cases(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            n = int(rng.integers(100, 50000))
            ratio = float(rng.uniform(0.25, 4.0))
            w = Waveform(rng.uniform(-0.5, 0.5, n))
            out = speed_perturb(w, ratio)
            assert abs(len(out) - round(n / ratio)) <= 2


# ---------------------------------------------------------------------------
# add_noise_at_snr
# ---------------------------------------------------------------------------

class TestAddNoise:
    def test_huge_snr_is_nearly_identity(self):
        w = Waveform(sine(250, 1.0, amp=0.5))
        out = add_noise_at_snr(w, 200.0, seed=1)
        rms_sig = np.sqrt(np.mean(w.samples**2))
        rms_diff = np.sqrt(np.mean((out.samples - w.samples) ** 2))
        assert rms_diff < 1e-6 * rms_sig

    def test_seeded_determinism(self):
        w = Waveform(sine(250, 0.5, amp=0.5))
        a = add_noise_at_snr(w, 10.0, seed=42)
        b = add_noise_at_snr(w, 10.0, seed=42)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_zero_signal_raises(self):
        with pytest.raises(ZeroSignalError):
            add_noise_at_snr(Waveform(np.zeros(1000)), 10.0, seed=0)

    @pytest.mark.parametrize("snr_db", [0, 5, 10, 15, 20, 30])
    def test_measured_snr_within_tenth_db(self, snr_db):
        w = Waveform(sine(313, 10.0, amp=0.3))
        out = add_noise_at_snr(w, snr_db, seed=snr_db + 5)
        noise = out.samples - w.samples
        measured = 10 * np.log10(np.mean(w.samples**2) / np.mean(noise**2))
        assert abs(measured - snr_db) < 0.1


# ---------------------------------------------------------------------------
# extract_features
# ---------------------------------------------------------------------------

class TestExtractFeatures:
    def test_frame_count_one_second(self):
        w = Waveform(sine(300, 1.0))
        feats = extract_features(w, FeatureConfig())
        assert feats.num_frames == 49
        assert feats.dim == 80

    def test_all_zero_input_is_constant_log_floor(self):
        cfg = FeatureConfig()
        feats = extract_features(Waveform(np.zeros(SR)), cfg)
        np.testing.assert_allclose(feats.frames, np.log(cfg.log_floor))

    def test_too_short_raises(self):
        with pytest.raises(TooShortError):
            extract_features(Waveform(np.zeros(100)), FeatureConfig())

    def test_tone_concentrates_energy_in_low_bands(self):
        rng = np.random.default_rng(11)
        cfg = FeatureConfig()
        tone = extract_features(Waveform(sine(150, 1.0, amp=0.5)), cfg)
        noise = extract_features(Waveform(0.5 * rng.standard_normal(SR)), cfg)

        # independent mel-filterbank matmul oracle on one frame
        win = 400
        frame = sine(150, 1.0, amp=0.5)[:win] * np.hanning(win)
        power = np.abs(np.fft.rfft(frame)) ** 2
        fb = mel_filterbank(80, win, SR)
        oracle = np.log(np.maximum(fb @ power, cfg.log_floor))
        np.testing.assert_allclose(tone.frames[0], oracle, rtol=1e-10)

        low = slice(0, 20)
        high = slice(40, 80)
        tone_ratio = tone.frames[:, low].mean() - tone.frames[:, high].mean()
        noise_ratio = noise.frames[:, low].mean() - noise.frames[:, high].mean()
        assert tone_ratio > noise_ratio

    def test_frame_count_law_random_lengths(self):
        rng = np.random.default_rng(5)
        cfg = FeatureConfig()
        for _ in range(200):
            n = int(rng.integers(400, 40000))
            w = Waveform(rng.uniform(-0.5, 0.5, n))
            feats = extract_features(w, cfg)
            assert feats.num_frames == (n - 400) // 320 + 1
            assert np.all(np.isfinite(feats.frames))


# ---------------------------------------------------------------------------
# external feature files and WAV I/O
# ---------------------------------------------------------------------------

class TestExternalFeatures:
    def test_round_trip(self, tmp_path):
        frames = np.random.default_rng(0).standard_normal((13, 7)).astype(np.float32)
        path = tmp_path / "utt1.feat"
        write_feat_file(path, frames, hop_ms=20.0)
        loaded, hop, _ = read_feat_file(path)
        np.testing.assert_allclose(loaded, frames, rtol=0, atol=0)
        assert hop == 20.0

    def test_extract_features_external_mode(self, tmp_path):
        frames = np.random.default_rng(1).standard_normal((9, 16)).astype(np.float32)
        write_feat_file(tmp_path / "uttA.feat", frames)
        cfg = FeatureConfig(mode=FeatureMode.EXTERNAL_SSL, feature_dir=tmp_path)
        feats = extract_features(Waveform(np.zeros(SR)), cfg, utterance_id="uttA")
        np.testing.assert_allclose(feats.frames, frames)
        assert feats.source == FeatureMode.EXTERNAL_SSL

    def test_missing_file(self, tmp_path):
        cfg = FeatureConfig(mode=FeatureMode.EXTERNAL_SSL, feature_dir=tmp_path)
        with pytest.raises(FeatureFileError):
            extract_features(Waveform(np.zeros(SR)), cfg, utterance_id="nope")

    def test_truncated_file(self, tmp_path):
        frames = np.ones((4, 4), dtype=np.float32)
        path = tmp_path / "cut.feat"
        write_feat_file(path, frames)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FeatureFileError):
            read_feat_file(path)

    def test_wrong_hop_rejected(self, tmp_path):
        write_feat_file(tmp_path / "h.feat", np.ones((4, 4), dtype=np.float32), hop_ms=10.0)
        cfg = FeatureConfig(mode=FeatureMode.EXTERNAL_SSL, feature_dir=tmp_path)
        with pytest.raises(FeatureFileError):
            extract_features(Waveform(np.zeros(SR)), cfg, utterance_id="h")


class TestWavIo:
    def test_round_trip(self, tmp_path):
        w = Waveform(sine(500, 0.25, amp=0.4))
        path = tmp_path / "a.wav"
        save_wav(w, path)
        loaded = load_wav(path)
        assert loaded.sample_rate_hz == SR
        np.testing.assert_allclose(loaded.samples, w.samples, atol=1e-6)

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        stereo = np.zeros((100, 2), dtype=np.int16)
        wavfile.write(tmp_path / "st.wav", SR, stereo)
        with pytest.raises(StereoInputError):
            load_wav(tmp_path / "st.wav")

    def test_int16_scaling(self, tmp_path):
        from scipy.io import wavfile

        data = (np.array([0.5, -0.5, 0.0]) * 32768).astype(np.int16)
        wavfile.write(tmp_path / "i.wav", SR, data)
        loaded = load_wav(tmp_path / "i.wav")
        np.testing.assert_allclose(loaded.samples, [0.5, -0.5, 0.0], atol=1e-4)


def test_waveform_clips_out_of_range(caplog):
    w = Waveform(np.array([0.5, 1.5, -2.0]))
    np.testing.assert_array_equal(w.samples, [0.5, 1.0, -1.0])
