"""Fixed K x K log-power spectrograms via overlap-tuned STFT."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioSegment
from .errors import ConfigError, FormatError, SegmentTooShortError

SCALE_POWER = "power"
SCALE_LOG_POWER = "log_power"
SCALE_STANDARDIZED = "standardized"
_SCALE_CODES = {SCALE_POWER: 0, SCALE_LOG_POWER: 1, SCALE_STANDARDIZED: 2}
_SCALE_NAMES = {v: k for k, v in _SCALE_CODES.items()}

SPG_MAGIC = b"SPG1"


@dataclass(frozen=True)
class StftConfig:
    """FFT length and window choice; K = nfft/2 + 1 one-sided bins."""

    nfft: int
    window: str = "hann"

    def __post_init__(self):
        if self.nfft < 16 or (self.nfft & (self.nfft - 1)) != 0:
            raise ConfigError(f"nfft must be a power of two >= 16, got {self.nfft}")
        if self.window not in ("hann", "rectangular"):
            raise ConfigError(f"unknown window {self.window!r}")

    @property
    def k(self) -> int:
        return self.nfft // 2 + 1

    def window_values(self) -> np.ndarray:
        if self.window == "hann":
            return np.hanning(self.nfft)
        return np.ones(self.nfft)


@dataclass
class Spectrogram:
    """K x K matrix: rows = frequency bins (0..Nyquist), columns = frames."""

    values: np.ndarray
    config: StftConfig
    scale: str

    def __post_init__(self):
        k = self.config.k
        if self.values.shape != (k, k):
            raise ConfigError(
                f"spectrogram must be {k}x{k}, got {self.values.shape}")
        if self.scale not in _SCALE_CODES:
            raise ConfigError(f"unknown scale {self.scale!r}")


def compute_overlap(m: int, win_size: int, music_len: int) -> int:
    """Window overlap (floored; may be negative = samples skipped) that fits
    about m+1 equally spaced windows into music_len samples."""
    if music_len < win_size:
        raise SegmentTooShortError(
            f"segment of {music_len} samples shorter than window {win_size}")
    return math.floor(((m + 1) * win_size - music_len) / m)


def stft_power(audio: AudioSegment, config: StftConfig, overlap: int) -> np.ndarray:
    """One-sided squared-magnitude STFT; frame t starts at t*(nfft-overlap).

    Returns a (K, T) matrix with T = floor((len - overlap)/(nfft - overlap)).
    """
    nfft = config.nfft
    if overlap >= nfft:
        raise ConfigError(f"overlap {overlap} must be < nfft {nfft}")
    x = audio.samples
    if len(x) < nfft:
        raise SegmentTooShortError(
            f"{len(x)} samples, need at least one window of {nfft}")
    hop = nfft - overlap
    n_frames = (len(x) - overlap) // hop
    win = config.window_values()
    starts = np.arange(n_frames) * hop
    frames = x[starts[:, None] + np.arange(nfft)] * win
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    return (spectrum.real ** 2 + spectrum.imag ** 2).T


def fixed_spectrogram(audio: AudioSegment, config: StftConfig) -> Spectrogram:
    """K x K spectrogram: overlap chosen so ~K frames fit, trailing frames
    trimmed (or audio zero-padded) to exactly K, then log(1+x) and
    per-image standardization."""
    k = config.k
    overlap = compute_overlap(k, config.nfft, len(audio))
    hop = config.nfft - overlap
    if hop <= 0:
        raise SegmentTooShortError(
            f"{len(audio)} samples too short to place {k} windows of {config.nfft}")
    x = audio.samples
    min_len = overlap + k * hop  # smallest length yielding K frames
    if len(x) < min_len:
        x = np.concatenate([x, np.zeros(min_len - len(x))])
        padded = AudioSegment(x, audio.sample_rate, source_id=audio.source_id)
    else:
        padded = audio
    power = stft_power(padded, config, overlap)[:, :k]
    values = np.log1p(power)
    std = values.std()
    if std < 1e-12:
        values = np.zeros_like(values)
    else:
        values = (values - values.mean()) / std
    return Spectrogram(values, config, SCALE_STANDARDIZED)


def save_spectrogram(path, spec: Spectrogram) -> None:
    """Binary dump: magic SPG1, u32 K, u32 nfft, u8 scale, K*K f32 row-major."""
    k = spec.config.k
    with open(path, "wb") as fh:
        fh.write(SPG_MAGIC)
        fh.write(struct.pack("<IIB", k, spec.config.nfft, _SCALE_CODES[spec.scale]))
        fh.write(spec.values.astype("<f4").tobytes())


def load_spectrogram(path) -> Spectrogram:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SPG_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    k, nfft, scale_code = struct.unpack_from("<IIB", raw, 4)
    if scale_code not in _SCALE_NAMES:
        raise FormatError(f"{path}: unknown scale code {scale_code}")
    values = np.frombuffer(raw, dtype="<f4", count=k * k, offset=13)
    if values.size != k * k:
        raise FormatError(f"{path}: truncated payload")
    config = StftConfig(nfft=nfft, window="hann")
    if config.k != k:
        raise FormatError(f"{path}: K {k} inconsistent with nfft {nfft}")
    return Spectrogram(values.astype(np.float64).reshape(k, k), config,
                       _SCALE_NAMES[scale_code])


def dump_csv(path, spec: Spectrogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in spec.values:
            writer.writerow([f"{v:.9g}" for v in row])


def dump_pgm(path, spec: Spectrogram) -> None:
    """Debug grayscale dump, min-max scaled to 0..255."""
    v = spec.values
    lo, hi = v.min(), v.max()
    img = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
