"""Manifest-driven corpus loading, listener-score label derivation, and a
synthetic tagged-audio generator for corpus-free testing."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioSegment, synth_tone, write_wav_16bit
from .errors import AnnotationError, ManifestError, RangeError

log = logging.getLogger(__name__)


@dataclass
class ManifestEntry:
    item_id: str
    audio_path: str
    tags: list = field(default_factory=list)
    scores: dict | None = None  # tag name -> per-listener scores 1..5
    segment_start_s: float | None = None
    segment_end_s: float | None = None

    def to_dict(self):
        d = {"item_id": self.item_id, "audio_path": self.audio_path}
        if self.scores is not None:
            d["scores"] = self.scores
        else:
            d["tags"] = list(self.tags)
        if self.segment_start_s is not None:
            d["segment_start_s"] = self.segment_start_s
            d["segment_end_s"] = self.segment_end_s
        return d


@dataclass
class Manifest:
    tag_names: list
    sample_rate: int
    entries: list

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def load_manifest(path, check_audio=True) -> Manifest:
    """JSON-lines manifest: header {"tags": [...], "sample_rate": n}, then
    one entry object per line. Rejects duplicates and unknown tags."""
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise ManifestError("missing header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON header: {exc}", 1) from exc
    if not isinstance(header, dict) or "tags" not in header:
        raise ManifestError("header must declare a tag vocabulary", 1)
    tags = list(header["tags"])
    sample_rate = int(header.get("sample_rate", 0))
    vocab = set(tags)

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc}", lineno) from exc
        if "item_id" not in obj or "audio_path" not in obj:
            raise ManifestError("entry needs item_id and audio_path", lineno)
        if obj["item_id"] in seen:
            raise ManifestError(f"duplicate item_id {obj['item_id']!r}", lineno)
        seen.add(obj["item_id"])
        entry_tags = obj.get("tags", [])
        for t in entry_tags:
            if t not in vocab:
                raise ManifestError(f"tag {t!r} not in vocabulary", lineno)
        scores = obj.get("scores")
        if scores is not None:
            for t in scores:
                if t not in vocab:
                    raise ManifestError(f"scored tag {t!r} not in vocabulary", lineno)
        audio_path = obj["audio_path"]
        if not os.path.isabs(audio_path):
            audio_path = os.path.join(base_dir, audio_path)
        if check_audio and not os.path.exists(audio_path):
            raise ManifestError(f"audio file {obj['audio_path']!r} missing", lineno)
        start = obj.get("segment_start_s")
        end = obj.get("segment_end_s")
        if start is not None and (end is None or end <= start):
            raise ManifestError("segment_end_s must exceed segment_start_s", lineno)
        entries.append(ManifestEntry(obj["item_id"], audio_path, list(entry_tags),
                                     scores, start, end))
    return Manifest(tags, sample_rate, entries)


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"tags": manifest.tag_names,
                             "sample_rate": manifest.sample_rate}) + "\n")
        for entry in manifest.entries:
            fh.write(json.dumps(entry.to_dict()) + "\n")


def derive_labels_from_scores(scores_by_tag, tag_names, agreement=0.8,
                              positive_score_min=4):
    """Binary tag vector: a tag is positive when at least `agreement` of
    listeners scored it >= positive_score_min."""
    out = np.zeros(len(tag_names), dtype=np.int64)
    for j, tag in enumerate(tag_names):
        listener_scores = scores_by_tag.get(tag, [])
        if not listener_scores:
            raise AnnotationError(f"tag {tag!r} has no listener scores")
        for s in listener_scores:
            if s not in (1, 2, 3, 4, 5):
                raise AnnotationError(f"score {s!r} for {tag!r} outside 1..5")
        agree = sum(1 for s in listener_scores if s >= positive_score_min)
        if agree / len(listener_scores) >= agreement:
            out[j] = 1
    return out


def slice_segment(audio: AudioSegment, entry: ManifestEntry) -> AudioSegment:
    """Samples between the entry's timestamps (nearest-sample rounding);
    the whole track when no timestamps are present."""
    if entry.segment_start_s is None:
        return audio
    sr = audio.sample_rate
    start = int(round(entry.segment_start_s * sr))
    end = int(round(entry.segment_end_s * sr))
    if start < 0 or end > len(audio):
        raise RangeError(
            f"segment [{entry.segment_start_s}, {entry.segment_end_s}]s outside "
            f"{audio.duration_s:.3f}s track")
    return AudioSegment(audio.samples[start:end], sr,
                        source_id=f"{audio.source_id}[{start}:{end}]")


def entry_label_vector(entry: ManifestEntry, tag_names, agreement=0.8,
                       positive_score_min=4):
    if entry.scores is not None:
        return derive_labels_from_scores(entry.scores, tag_names, agreement,
                                         positive_score_min)
    out = np.zeros(len(tag_names), dtype=np.int64)
    for t in entry.tags:
        out[tag_names.index(t)] = 1
    return out


def label_matrix(manifest: Manifest, agreement=0.8, positive_score_min=4):
    """Ground-truth labels for all entries; items deriving to zero tags are
    dropped (with a warning) so every row keeps >= 1 positive."""
    rows, kept = [], []
    for entry in manifest.entries:
        y = entry_label_vector(entry, manifest.tag_names, agreement,
                               positive_score_min)
        if y.sum() == 0:
            log.warning("item %s derives to zero tags; dropped", entry.item_id)
            continue
        rows.append(y)
        kept.append(entry)
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(manifest.tag_names)), kept


def tag_frequency(tag_index: int, base_hz: float = 500.0,
                  spacing_hz: float = 250.0) -> float:
    """Carrier frequency band bound to one synthetic tag."""
    return base_hz + spacing_hz * tag_index


def synth_corpus(num_items, num_tags, seed, out_dir, duration_s=5.0,
                 sample_rate=8000) -> str:
    """Generate a learnable tagged corpus: each item is a mixture of the
    carrier tones of its (>= 1, randomly drawn) tags plus noise.

    Writes 16-bit mono WAVs and a manifest; returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    tag_names = [f"tag{j}" for j in range(num_tags)]
    entries = []
    for i in range(num_items):
        n_tags = int(rng.integers(1, max(2, num_tags // 2 + 1)))
        chosen = sorted(rng.choice(num_tags, size=n_tags, replace=False).tolist())
        freqs = [tag_frequency(j) for j in chosen]
        amplitude = 0.8 / len(freqs)
        item_seed = int(rng.integers(0, 2 ** 31))
        audio = synth_tone(freqs, duration_s, sample_rate, amplitude,
                           seed=item_seed)
        fname = f"item_{i:05d}.wav"
        write_wav_16bit(os.path.join(out_dir, fname), audio)
        entries.append(ManifestEntry(f"item_{i:05d}", fname,
                                     [tag_names[j] for j in chosen]))
    manifest = Manifest(tag_names, sample_rate, entries)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    save_manifest(manifest_path, manifest)
    return manifest_path
