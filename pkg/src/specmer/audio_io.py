"""WAV decoding, re-encoding and deterministic test-tone synthesis."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AliasingError, EmptyAudioError, FormatError, UnsupportedCodecError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioSegment:
    """Mono audio with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise EmptyAudioError(f"empty audio segment ({self.source_id!r})")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError(f"non-finite samples in {self.source_id!r}")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise FormatError(f"samples outside [-1, 1] in {self.source_id!r}")
        if int(self.sample_rate) <= 0:
            raise FormatError(f"non-positive sample rate {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_fmt(payload: bytes):
    if len(payload) < 16:
        raise FormatError("'fmt ' chunk truncated")
    (audio_format, channels, sample_rate, _byte_rate, _block_align,
     bits_per_sample) = struct.unpack_from("<HHIIHH", payload, 0)
    if audio_format == WAVE_FORMAT_EXTENSIBLE and len(payload) >= 40:
        # Sub-format GUID starts with the effective format tag.
        audio_format = struct.unpack_from("<H", payload, 24)[0]
    return audio_format, channels, sample_rate, bits_per_sample


def read_wav(path) -> AudioSegment:
    """Decode a RIFF/WAVE file to normalized mono float64.

    Supports 8/16/24-bit PCM and 32-bit float, 1 or 2 channels. Stereo is
    averaged to mono; unknown chunks are skipped.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[0:4] != b"RIFF":
        raise FormatError(f"{path}: missing RIFF chunk")
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is not WAVE")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        payload = raw[pos + 8:pos + 8 + size]
        if len(payload) < size:
            raise FormatError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(payload)
        elif chunk_id == b"data":
            data = payload
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError(f"{path}: no 'fmt ' chunk")
    if data is None:
        raise FormatError(f"{path}: no 'data' chunk")
    audio_format, channels, sample_rate, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"{path}: {channels} channels unsupported")
    if len(data) == 0:
        raise EmptyAudioError(f"{path}: zero-length data chunk")

    if audio_format == WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == WAVE_FORMAT_PCM and bits == 8:
        x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif audio_format == WAVE_FORMAT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8)
        if b.size % 3:
            raise FormatError(f"{path}: 24-bit data chunk not a multiple of 3 bytes")
        b = b.reshape(-1, 3).astype(np.int32)
        # Assemble to signed 32-bit, then scale by 2^23 for exactness.
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val = np.where(val >= 1 << 23, val - (1 << 24), val)
        x = val.astype(np.float64) / float(1 << 23)
    elif audio_format == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedCodecError(
            f"{path}: format tag {audio_format}, {bits}-bit not supported")

    if channels == 2:
        if x.size % 2:
            raise FormatError(f"{path}: odd sample count for stereo data")
        x = x.reshape(-1, 2).mean(axis=1)
    x = np.clip(x, -1.0, 1.0)
    return AudioSegment(x, sample_rate, source_id=str(path))


def write_wav_16bit(path, audio: AudioSegment) -> None:
    """Write mono 16-bit PCM. Decoded [-1, 1) values round-trip exactly."""
    x = np.clip(audio.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(x * 32768.0).astype("<i2")
    data = pcm.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(data)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, WAVE_FORMAT_PCM, 1,
                             audio.sample_rate, audio.sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(data)))
        fh.write(data)


def synth_tone(freqs, duration_s, sample_rate, amplitude, seed=0,
               noise=True, noise_amplitude=0.005) -> AudioSegment:
    """Sum of sinusoids at `freqs` plus seeded low-amplitude uniform noise.

    Deterministic for fixed arguments; peak noise stays below 0.01.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if freqs and amplitude * len(freqs) > 1.0 + 1e-12:
        raise ValueError("amplitude * len(freqs) must not exceed 1")
    nyquist = sample_rate / 2.0
    for f in freqs:
        if f >= nyquist:
            raise AliasingError(f"frequency {f} Hz at/above Nyquist {nyquist} Hz")

    n = int(round(duration_s * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    x = np.zeros(n, dtype=np.float64)
    for f in freqs:
        x += amplitude * np.sin(2.0 * np.pi * f * t)
    if noise:
        rng = np.random.default_rng(seed)
        x += rng.uniform(-noise_amplitude, noise_amplitude, size=n)
    np.clip(x, -1.0, 1.0, out=x)
    return AudioSegment(x, sample_rate, source_id=f"synth:{seed}")
