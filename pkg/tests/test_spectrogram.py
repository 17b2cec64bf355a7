import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specmer.audio_io import AudioSegment, synth_tone
from specmer.errors import ConfigError, SegmentTooShortError
from specmer.spectrogram import (StftConfig, Spectrogram, compute_overlap,
                                 dump_csv, dump_pgm, fixed_spectrogram,
                                 load_spectrogram, save_spectrogram,
                                 stft_power)


def naive_dft_power(frame):
    """O(n^2) DFT oracle, one-sided squared magnitude."""
    n = len(frame)
    out = np.empty(n // 2 + 1)
    for f in range(n // 2 + 1):
        acc = 0j
        for t in range(n):
            acc += frame[t] * np.exp(-2j * np.pi * f * t / n)
        out[f] = abs(acc) ** 2
    return out


class TestComputeOverlap:
    def test_exact_fit_is_zero(self):
        assert compute_overlap(4, 100, 500) == 0

    def test_positive_overlap_floored(self):
        # (258*512 - 100000)/257 = 124.88..., floored
        assert compute_overlap(257, 512, 100000) == 124

    def test_negative_overlap_floored_and_frame_count(self):
        # (500 - 1000)/4 = -125; negative overlap means skipped samples
        r = compute_overlap(4, 100, 1000)
        assert r == -125
        hop = 100 - r
        frames = (1000 - r) // hop
        assert frames >= 5  # at least M+1 windows still fit

    def test_too_short(self):
        with pytest.raises(SegmentTooShortError):
            compute_overlap(4, 100, 99)


class TestStftPower:
    def test_all_zero_audio(self):
        audio = AudioSegment(np.zeros(1024), 8000)
        mat = stft_power(audio, StftConfig(64, "rectangular"), 0)
        assert np.all(mat == 0.0)

    def test_row_count_is_k(self):
        audio = AudioSegment(np.random.default_rng(0).uniform(-1, 1, 4096), 8000)
        mat = stft_power(audio, StftConfig(256), 0)
        assert mat.shape[0] == 129

    def test_tone_bin_argmax(self):
        audio = synth_tone([440], 1.0, 8192, 0.9, noise=False)
        mat = stft_power(audio, StftConfig(256, "rectangular"), 0)
        expected_bin = round(440 * 256 / 8192)
        assert np.all(mat.argmax(axis=0) == expected_bin)

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(3)
        config = StftConfig(16, "rectangular")
        for _ in range(100):
            x = rng.uniform(-1, 1, 16)
            mat = stft_power(AudioSegment(x, 8000), config, 0)
            assert mat.shape == (9, 1)
            assert np.allclose(mat[:, 0], naive_dft_power(x), atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(4)
        for nfft in (16, 64, 256):
            x = rng.uniform(-1, 1, nfft)
            spectrum = np.fft.fft(x)
            energy = np.sum(np.abs(spectrum) ** 2)
            assert np.isclose(energy, nfft * np.sum(x ** 2), rtol=1e-6)
            # one-sided power accounts for the mirrored bins
            one_sided = stft_power(AudioSegment(x, 8000),
                                   StftConfig(nfft, "rectangular"), 0)[:, 0]
            doubled = 2 * one_sided.sum() - one_sided[0] - one_sided[-1]
            assert np.isclose(doubled, energy, rtol=1e-6)

    def test_negative_overlap_skips_samples(self):
        audio = AudioSegment(np.random.default_rng(1).uniform(-1, 1, 200), 8000)
        mat = stft_power(audio, StftConfig(16, "rectangular"), -15)
        # hop 31: frames at 0, 31, ... -> floor((200+15)/31) = 6
        assert mat.shape[1] == 6

    def test_too_short(self):
        with pytest.raises(SegmentTooShortError):
            stft_power(AudioSegment(np.zeros(10), 8000), StftConfig(16), 0)


class TestFixedSpectrogram:
    def test_silence_constant_matrix_stays_zero(self):
        config = StftConfig(16)
        audio = AudioSegment(np.zeros((config.k + 1) * 16), 8000)
        spec = fixed_spectrogram(audio, config)
        assert spec.values.shape == (config.k, config.k)
        assert np.all(spec.values == 0.0)

    def test_5s_tone_shape(self):
        audio = synth_tone([440], 5.0, 8192, 0.9, seed=0)
        spec = fixed_spectrogram(audio, StftConfig(512))
        assert spec.values.shape == (257, 257)
        assert spec.scale == "standardized"

    def test_standardized_moments(self):
        audio = synth_tone([300, 900], 3.0, 8192, 0.4, seed=2)
        spec = fixed_spectrogram(audio, StftConfig(256))
        assert abs(spec.values.mean()) < 1e-6
        assert abs(spec.values.std() - 1.0) < 1e-6

    def test_two_tones_differ_in_argmax_row(self):
        config = StftConfig(256)
        a = fixed_spectrogram(synth_tone([500], 5.0, 8192, 0.9, noise=False), config)
        b = fixed_spectrogram(synth_tone([2000], 5.0, 8192, 0.9, noise=False), config)
        assert a.values.sum(axis=1).argmax() != b.values.sum(axis=1).argmax()

    def test_short_audio_zero_padded(self):
        config = StftConfig(16)
        audio = AudioSegment(np.random.default_rng(0).uniform(-1, 1, 20), 8000)
        spec = fixed_spectrogram(audio, config)
        assert spec.values.shape == (9, 9)

    @settings(max_examples=60, deadline=None)
    @given(nfft=st.sampled_from([16, 32, 64]),
           length_factor=st.floats(min_value=1.2, max_value=40.0),
           seed=st.integers(min_value=0, max_value=2 ** 16))
    def test_frame_count_law(self, nfft, length_factor, seed):
        config = StftConfig(nfft)
        n = int(nfft * length_factor)
        audio = AudioSegment(
            np.random.default_rng(seed).uniform(-1, 1, n), 8000)
        spec = fixed_spectrogram(audio, config)
        assert spec.values.shape == (config.k, config.k)

    def test_log1p_preserves_column_argmax(self):
        audio = synth_tone([700], 3.0, 8192, 0.9, seed=1)
        config = StftConfig(128, "rectangular")
        overlap = compute_overlap(config.k, config.nfft, len(audio))
        power = stft_power(audio, config, overlap)
        assert np.array_equal(power.argmax(axis=0),
                              np.log1p(power).argmax(axis=0))


class TestSerialization:
    def test_spg_roundtrip(self, tmp_path):
        audio = synth_tone([440], 2.0, 8192, 0.9, seed=3)
        spec = fixed_spectrogram(audio, StftConfig(64))
        path = tmp_path / "x.spg"
        save_spectrogram(path, spec)
        loaded = load_spectrogram(path)
        assert loaded.values.shape == spec.values.shape
        assert loaded.scale == spec.scale
        assert loaded.config.nfft == 64
        # stored as f32
        assert np.allclose(loaded.values, spec.values, atol=1e-6)

    def test_spg_header_layout(self, tmp_path):
        audio = synth_tone([440], 2.0, 8192, 0.9, seed=3)
        spec = fixed_spectrogram(audio, StftConfig(64))
        path = tmp_path / "x.spg"
        save_spectrogram(path, spec)
        raw = path.read_bytes()
        assert raw[:4] == b"SPG1"
        assert int.from_bytes(raw[4:8], "little") == 33
        assert int.from_bytes(raw[8:12], "little") == 64
        assert raw[12] == 2  # standardized
        assert len(raw) == 13 + 33 * 33 * 4

    def test_csv_and_pgm_dump(self, tmp_path):
        audio = synth_tone([440], 2.0, 8192, 0.9, seed=3)
        spec = fixed_spectrogram(audio, StftConfig(16))
        dump_csv(tmp_path / "x.csv", spec)
        assert len((tmp_path / "x.csv").read_text().splitlines()) == 9
        dump_pgm(tmp_path / "x.pgm", spec)
        assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5")


def test_config_invariants():
    with pytest.raises(ConfigError):
        StftConfig(15)
    with pytest.raises(ConfigError):
        StftConfig(48)
    assert StftConfig(256).k == 129
    with pytest.raises(ConfigError):
        Spectrogram(np.zeros((3, 3)), StftConfig(16), "power")


def test_synth_tone_power_concentration():
    # >= 90% of total power lands in the bins nearest the requested tones
    config = StftConfig(256, "rectangular")
    freqs = [500.0, 1500.0]
    audio = synth_tone(freqs, 2.0, 8192, 0.45, noise=False)
    mat = stft_power(audio, config, 0)
    bins = [round(f * config.nfft / 8192) for f in freqs]
    near = set()
    for b in bins:
        near.update((b - 1, b, b + 1))
    concentrated = mat[sorted(near), :].sum()
    assert concentrated / mat.sum() >= 0.9
